//! Per-device state: the materialized document store and mailbox, the
//! offline outbox, and the local/remote apply paths.
//!
//! A replica stamps every local action with its (possibly wrong) wall
//! clock, its vector clock, and its hybrid timestamp, and records explicit
//! dependencies: the device's previous operation, the causally latest
//! operations it has observed touching the same object, and — for a reply —
//! the read of the original message.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

use crate::clock::{
    hlc_tick, local_now, ClockModel, HybridTimestamp, ReplicaId, TrueTime, VectorClock,
};
use crate::oplog::{
    CausalGraph, DocId, MsgId, ObjectId, OpId, OpKind, Operation, OplogError,
};
use crate::strategy::{
    resolve_doc, set_apply, validate_txn, version_of, DocVersion, LwwRegister, MsgState, Strategy,
    StrategyError,
};

#[derive(Debug, Error)]
pub enum ReplicaError {
    #[error("unknown document {0}")]
    UnknownDoc(DocId),
    #[error("unknown message {0}")]
    UnknownMsg(MsgId),
    #[error("message {0} already exists")]
    MsgExists(MsgId),
    #[error("document {0} already exists")]
    DocExists(DocId),
    #[error("paragraph {index} out of range for document {doc} (len {len})")]
    ParagraphOutOfRange { doc: DocId, index: usize, len: usize },
    #[error("reply target {0} does not exist")]
    ReplyTargetMissing(MsgId),
    #[error("drain called while offline")]
    DrainWhileOffline,
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Oplog(#[from] OplogError),
}

/// Document presence, tracked per the policy family.
#[derive(Clone, Debug, PartialEq, Eq)]
enum DocPresence {
    Lww(LwwRegister<bool>),
    Or {
        tombstones: BTreeSet<OpId>,
        tombstones_removed: BTreeSet<OpId>,
        created: bool,
    },
}

impl DocPresence {
    fn for_strategy(strategy: &Strategy) -> DocPresence {
        if strategy.forward_committing() {
            DocPresence::Lww(LwwRegister::default())
        } else {
            DocPresence::Or {
                tombstones: BTreeSet::new(),
                tombstones_removed: BTreeSet::new(),
                created: false,
            }
        }
    }

    fn present(&self) -> bool {
        match self {
            DocPresence::Lww(reg) => reg.value.unwrap_or(false),
            DocPresence::Or {
                tombstones,
                tombstones_removed,
                created,
            } => *created && tombstones.difference(tombstones_removed).next().is_none(),
        }
    }
}

/// One document's materialized state: the surviving versions plus a
/// conflict marker when more than one is on display.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DocState {
    pub versions: Vec<DocVersion>,
    pub conflicted: bool,
    presence: DocPresence,
}

impl DocState {
    fn new(strategy: &Strategy) -> DocState {
        DocState {
            versions: Vec::new(),
            conflicted: false,
            presence: DocPresence::for_strategy(strategy),
        }
    }

    pub fn present(&self) -> bool {
        self.presence.present()
    }

    /// Visible versions; empty when the document is deleted.
    pub fn visible_versions(&self) -> &[DocVersion] {
        if self.present() {
            &self.versions
        } else {
            &[]
        }
    }

    pub fn visible_digest(&self) -> String {
        if !self.present() {
            return "absent".to_string();
        }
        let mut out = String::new();
        let _ = write!(out, "present conflicted={}", self.conflicted);
        for v in &self.versions {
            let _ = write!(out, " version{:?}", v.paragraphs);
        }
        out
    }
}

/// The materialized store and mailbox of one replica, resolved under one
/// strategy. State transitions are pure functions of the applied set (plus
/// processing order, for arrival-order resolution), which is what the
/// convergence oracle enumerates.
#[derive(Clone, Debug)]
pub struct StateMachine {
    pub strategy: Strategy,
    pub docs: BTreeMap<DocId, DocState>,
    pub messages: BTreeMap<MsgId, MsgState>,
}

/// What applying one operation did, as visible from outside.
#[derive(Clone, Debug, Default)]
pub struct ApplyEffect {
    /// Conflict-materialization notices surfaced to the user.
    pub notifications: Vec<(ObjectId, String)>,
    /// Objects whose visible state changed, with digests before and after.
    pub changed: Vec<(ObjectId, String, String)>,
}

impl StateMachine {
    pub fn new(strategy: Strategy) -> StateMachine {
        StateMachine {
            strategy,
            docs: BTreeMap::new(),
            messages: BTreeMap::new(),
        }
    }

    /// Applies an operation's full effect (all group members, atomically
    /// within this single call).
    pub fn apply(&mut self, op: &Operation, graph: &CausalGraph) -> ApplyEffect {
        let mut effect = ApplyEffect::default();
        let before: BTreeMap<ObjectId, String> = op
            .kind
            .targets()
            .into_iter()
            .map(|obj| {
                let d = self.object_digest(&obj);
                (obj, d)
            })
            .collect();

        for member in op.kind.members() {
            if let Some(doc) = member.doc_target() {
                let notes = self.apply_doc_member(doc.clone(), member, op, graph);
                effect.notifications.extend(notes);
            }
            if let Some(msg) = member.msg_target() {
                let state = self
                    .messages
                    .entry(msg.clone())
                    .or_insert_with(|| MsgState::for_strategy(&self.strategy));
                set_apply(state, member, op, graph, &self.strategy);
            }
        }

        for (obj, before_digest) in before {
            let after = self.object_digest(&obj);
            if after != before_digest {
                effect.changed.push((obj, before_digest, after));
            }
        }
        effect
    }

    fn apply_doc_member(
        &mut self,
        doc: DocId,
        member: &OpKind,
        op: &Operation,
        graph: &CausalGraph,
    ) -> Vec<(ObjectId, String)> {
        let strategy = self.strategy.clone();
        let entry = self
            .docs
            .entry(doc.clone())
            .or_insert_with(|| DocState::new(&strategy));
        let mut notes = Vec::new();

        // presence
        let arrival_order = matches!(strategy.inner(), Strategy::LwwServerArrival);
        match (&mut entry.presence, member) {
            (DocPresence::Lww(reg), OpKind::DeleteDoc { .. }) => {
                if arrival_order {
                    reg.overwrite(false, op.lww_key());
                } else {
                    reg.write_keyed(false, op.lww_key());
                }
            }
            (DocPresence::Lww(reg), _) => {
                if arrival_order {
                    reg.overwrite(true, op.lww_key());
                } else {
                    reg.write_keyed(true, op.lww_key());
                }
            }
            (DocPresence::Or { tombstones, .. }, OpKind::DeleteDoc { .. }) => {
                tombstones.insert(op.id.clone());
            }
            (
                DocPresence::Or {
                    tombstones_removed,
                    created,
                    ..
                },
                OpKind::CreateDoc { .. },
            ) => {
                *created = true;
                for anc in graph.ancestors(&op.id) {
                    let is_delete = graph.op(&anc).kind.members().iter().any(
                        |k| matches!(k, OpKind::DeleteDoc { doc: d } if *d == doc),
                    );
                    if is_delete {
                        tombstones_removed.insert(anc);
                    }
                }
            }
            (DocPresence::Or { created, .. }, _) => {
                *created = true;
            }
        }

        // content
        if matches!(
            member,
            OpKind::CreateDoc { .. } | OpKind::WriteDoc { .. }
        ) {
            let incoming = version_of(op, &doc, graph);
            let resolution = resolve_doc(&strategy, &entry.versions, &incoming, graph)
                .expect("doc ids match by construction");
            entry.conflicted = resolution.survivors.len() > 1;
            if resolution.notified {
                notes.push((
                    ObjectId::Doc(doc.clone()),
                    format!(
                        "conflict: {} versions materialized",
                        resolution.survivors.len()
                    ),
                ));
            }
            entry.versions = resolution.survivors;
        }
        notes
    }

    /// Canonical one-line digest of one object's user-visible state.
    pub fn object_digest(&self, obj: &ObjectId) -> String {
        match obj {
            ObjectId::Doc(d) => self
                .docs
                .get(d)
                .map(|s| s.visible_digest())
                .unwrap_or_else(|| "absent".to_string()),
            ObjectId::Msg(m) => self
                .messages
                .get(m)
                .map(|s| s.visible_digest())
                .unwrap_or_else(|| "absent".to_string()),
        }
    }

    /// Canonical serialization of everything a user could see. Absent
    /// objects are omitted, so a replica that never heard of a message and
    /// one that deleted it agree.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (id, doc) in &self.docs {
            if !doc.present() {
                continue;
            }
            let _ = writeln!(
                out,
                "doc {} conflicted={} versions={}",
                id,
                doc.conflicted,
                doc.versions.len()
            );
            for v in &doc.versions {
                let _ = writeln!(out, "  version paras={:?}", v.paragraphs);
            }
        }
        for (id, msg) in &self.messages {
            if !msg.present() {
                continue;
            }
            let folders: Vec<String> = msg.folders().iter().map(|f| f.to_string()).collect();
            let _ = writeln!(
                out,
                "msg {} read={} folders=[{}] body={:?}",
                id,
                msg.read(),
                folders.join(","),
                msg.body()
            );
        }
        out
    }
}

/// Canonical state plus its short content hash.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Snapshot {
    pub canonical: String,
    pub digest: String,
}

impl Snapshot {
    pub fn of(state: &StateMachine) -> Snapshot {
        let canonical = state.canonical();
        Snapshot {
            digest: short_hash(&canonical),
            canonical,
        }
    }
}

/// First 16 hex chars of the SHA-256 of the input.
pub fn short_hash(text: &str) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{:02x}", b)).collect()
}

/// Outcome of offering a remote operation to a replica.
#[derive(Clone, Debug)]
pub enum RemoteOutcome {
    /// Ops applied, in order (the offered op plus any unblocked buffered
    /// ones), each with its visible effect.
    Applied(Vec<(OpId, ApplyEffect)>),
    /// Held back until its dependencies arrive (causal delivery on).
    Buffered,
    /// Already applied; delivery was a no-op.
    Duplicate,
}

/// One device.
#[derive(Clone, Debug)]
pub struct Replica {
    pub id: ReplicaId,
    pub clock: ClockModel,
    pub vclock: VectorClock,
    pub hybrid: HybridTimestamp,
    pub state: StateMachine,
    pub online: bool,
    pub outbox: VecDeque<Operation>,
    pub applied: BTreeSet<OpId>,
    next_seq: u64,
    prev_op: Option<OpId>,
    /// Causally maximal observed ops per object; feeds intent deps.
    fronts: BTreeMap<ObjectId, BTreeSet<OpId>>,
    /// Latest observed read-mark per message; feeds reply deps.
    last_mark_read: BTreeMap<MsgId, OpId>,
    /// Latest local user action per object (what this user wants).
    pub user_intent: BTreeMap<ObjectId, OpKind>,
    /// Latest local op id per object (for clobber justification checks).
    pub own_last_op: BTreeMap<ObjectId, OpId>,
    /// Buffered remote ops awaiting dependencies, in arrival order.
    pending: Vec<Operation>,
}

impl Replica {
    pub fn new(id: ReplicaId, clock: ClockModel, online: bool, strategy: Strategy) -> Replica {
        Replica {
            id,
            clock,
            vclock: VectorClock::new(),
            hybrid: HybridTimestamp::default(),
            state: StateMachine::new(strategy),
            online,
            outbox: VecDeque::new(),
            applied: BTreeSet::new(),
            next_seq: 0,
            prev_op: None,
            fronts: BTreeMap::new(),
            last_mark_read: BTreeMap::new(),
            user_intent: BTreeMap::new(),
            own_last_op: BTreeMap::new(),
            pending: Vec::new(),
        }
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Validates and performs one user action at true time `t`: stamps it,
    /// records it in the graph, applies it locally, and queues it when
    /// offline. The caller emits the returned op when the replica is
    /// online.
    pub fn apply_local(
        &mut self,
        kind: OpKind,
        t: TrueTime,
        graph: &mut CausalGraph,
    ) -> Result<(Operation, ApplyEffect), ReplicaError> {
        self.validate(&kind)?;

        let mut deps: BTreeSet<OpId> = BTreeSet::new();
        if let Some(prev) = &self.prev_op {
            deps.insert(prev.clone());
        }
        for obj in kind.targets() {
            if let Some(front) = self.fronts.get(&obj) {
                deps.extend(front.iter().cloned());
            }
        }
        for member in kind.members() {
            if let OpKind::Compose {
                in_reply_to: Some(orig),
                ..
            } = member
            {
                if let Some(read_op) = self.last_mark_read.get(orig) {
                    deps.insert(read_op.clone());
                }
            }
        }

        let local_ts = local_now(&self.clock, t);
        self.vclock = self.vclock.incremented(&self.id);
        self.hybrid = hlc_tick(self.hybrid, local_ts, None);
        self.next_seq += 1;

        let op = Operation {
            id: OpId::new(self.id.clone(), self.next_seq),
            kind,
            true_time: t,
            local_ts,
            vclock: self.vclock.clone(),
            hybrid: self.hybrid,
            deps,
        };
        graph.record(op.clone())?;

        let effect = self.integrate(&op, graph);
        for obj in op.kind.targets() {
            for member in op.kind.members() {
                if member.targets().contains(&obj) {
                    self.user_intent.insert(obj.clone(), member.clone());
                }
            }
            self.own_last_op.insert(obj, op.id.clone());
        }
        self.prev_op = Some(op.id.clone());

        if !self.online {
            self.outbox.push_back(op.clone());
        }
        Ok((op, effect))
    }

    /// Offers a remote operation. Applies it (and any unblocked buffered
    /// ops) unless causal delivery requires buffering.
    pub fn apply_remote(
        &mut self,
        op: &Operation,
        t: TrueTime,
        graph: &CausalGraph,
        causal_delivery: bool,
    ) -> RemoteOutcome {
        if self.applied.contains(&op.id) {
            return RemoteOutcome::Duplicate;
        }
        if causal_delivery && !op.deps.iter().all(|d| self.applied.contains(d)) {
            self.pending.push(op.clone());
            return RemoteOutcome::Buffered;
        }

        let mut applied = vec![self.apply_remote_now(op, t, graph)];
        // Unblock buffered ops, preserving arrival order across passes.
        loop {
            let ready_idx = self
                .pending
                .iter()
                .position(|p| p.deps.iter().all(|d| self.applied.contains(d)));
            match ready_idx {
                Some(i) => {
                    let next = self.pending.remove(i);
                    applied.push(self.apply_remote_now(&next, t, graph));
                }
                None => break,
            }
        }
        RemoteOutcome::Applied(applied)
    }

    fn apply_remote_now(
        &mut self,
        op: &Operation,
        t: TrueTime,
        graph: &CausalGraph,
    ) -> (OpId, ApplyEffect) {
        self.vclock = self.vclock.merged(&op.vclock);
        self.hybrid = hlc_tick(self.hybrid, local_now(&self.clock, t), Some(op.hybrid));
        let effect = self.integrate(op, graph);
        (op.id.clone(), effect)
    }

    fn integrate(&mut self, op: &Operation, graph: &CausalGraph) -> ApplyEffect {
        let effect = self.state.apply(op, graph);
        self.applied.insert(op.id.clone());
        let ancestors = graph.ancestors(&op.id);
        for obj in op.kind.targets() {
            let front = self.fronts.entry(obj).or_default();
            front.retain(|seen| !ancestors.contains(seen));
            front.insert(op.id.clone());
        }
        for member in op.kind.members() {
            if let OpKind::MarkRead { msg } = member {
                self.last_mark_read.insert(msg.clone(), op.id.clone());
            }
        }
        effect
    }

    pub fn go_offline(&mut self) {
        self.online = false;
    }

    pub fn go_online(&mut self) {
        self.online = true;
    }

    /// Empties the outbox in enqueue order. Timestamps are whatever they
    /// were when the ops were queued; reconnection does not re-stamp.
    pub fn drain(&mut self) -> Result<Vec<Operation>, ReplicaError> {
        if !self.online {
            return Err(ReplicaError::DrainWhileOffline);
        }
        Ok(self.outbox.drain(..).collect())
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot::of(&self.state)
    }

    /// True when the replica's visible state satisfies the given user
    /// intent (used to decide whether a clobbered device would re-assert).
    pub fn intent_satisfied(&self, kind: &OpKind) -> bool {
        match kind {
            OpKind::MarkRead { msg } => self
                .state
                .messages
                .get(msg)
                .map(|s| s.present() && s.read())
                .unwrap_or(false),
            OpKind::MarkUnread { msg } => self
                .state
                .messages
                .get(msg)
                .map(|s| s.present() && !s.read())
                .unwrap_or(false),
            OpKind::Move { msg, folder } => self
                .state
                .messages
                .get(msg)
                .map(|s| s.present() && s.folders().contains(folder))
                .unwrap_or(false),
            OpKind::DeleteMsg { msg } => self
                .state
                .messages
                .get(msg)
                .map(|s| !s.present())
                .unwrap_or(true),
            OpKind::Compose { msg, .. } => self
                .state
                .messages
                .get(msg)
                .map(|s| s.present())
                .unwrap_or(false),
            _ => true,
        }
    }

    fn validate(&self, kind: &OpKind) -> Result<(), ReplicaError> {
        if let OpKind::TxnGroup(members) = kind {
            validate_txn(members)?;
        }
        // Track objects created/deleted earlier in the same group so later
        // members validate against the in-group view.
        let mut docs_present: BTreeMap<DocId, usize> = self
            .state
            .docs
            .iter()
            .filter(|(_, d)| d.present())
            .map(|(id, d)| {
                let len = d.versions.first().map(|v| v.paragraphs.len()).unwrap_or(0);
                (id.clone(), len)
            })
            .collect();
        let mut msgs_present: BTreeSet<MsgId> = self
            .state
            .messages
            .iter()
            .filter(|(_, m)| m.present())
            .map(|(id, _)| id.clone())
            .collect();

        for member in kind.members() {
            match member {
                OpKind::CreateDoc { doc, paragraphs } => {
                    if docs_present.contains_key(doc) {
                        return Err(ReplicaError::DocExists(doc.clone()));
                    }
                    docs_present.insert(doc.clone(), paragraphs.len());
                }
                OpKind::WriteDoc { doc, paragraph, .. } => {
                    let len = *docs_present
                        .get(doc)
                        .ok_or_else(|| ReplicaError::UnknownDoc(doc.clone()))?;
                    if *paragraph >= len {
                        return Err(ReplicaError::ParagraphOutOfRange {
                            doc: doc.clone(),
                            index: *paragraph,
                            len,
                        });
                    }
                }
                OpKind::DeleteDoc { doc } => {
                    docs_present
                        .remove(doc)
                        .ok_or_else(|| ReplicaError::UnknownDoc(doc.clone()))?;
                }
                OpKind::MarkRead { msg } | OpKind::MarkUnread { msg } => {
                    if !msgs_present.contains(msg) {
                        return Err(ReplicaError::UnknownMsg(msg.clone()));
                    }
                }
                OpKind::Move { msg, .. } => {
                    if !msgs_present.contains(msg) {
                        return Err(ReplicaError::UnknownMsg(msg.clone()));
                    }
                }
                OpKind::DeleteMsg { msg } => {
                    if !msgs_present.remove(msg) {
                        return Err(ReplicaError::UnknownMsg(msg.clone()));
                    }
                }
                OpKind::Compose { msg, in_reply_to } => {
                    if msgs_present.contains(msg) {
                        return Err(ReplicaError::MsgExists(msg.clone()));
                    }
                    if let Some(orig) = in_reply_to {
                        if !msgs_present.contains(orig) {
                            return Err(ReplicaError::ReplyTargetMissing(orig.clone()));
                        }
                    }
                    msgs_present.insert(msg.clone());
                }
                OpKind::TxnGroup(_) => unreachable!("members() flattens groups"),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::LocalTimestamp;

    fn rid(s: &str) -> ReplicaId {
        ReplicaId::new(s)
    }

    fn fresh(name: &str, strategy: Strategy) -> Replica {
        Replica::new(rid(name), ClockModel::default(), true, strategy)
    }

    fn compose(m: &str) -> OpKind {
        OpKind::Compose {
            msg: MsgId::new(m),
            in_reply_to: None,
        }
    }

    #[test]
    fn first_op_has_fresh_vclock_and_no_deps() {
        let mut g = CausalGraph::new();
        let mut r = fresh("A", Strategy::ConvergentSets);
        let (op, _) = r.apply_local(compose("m1"), TrueTime::from_secs(1), &mut g).unwrap();
        assert_eq!(op.vclock.canonical(), "{A:1}");
        assert!(op.deps.is_empty());
    }

    #[test]
    fn skewed_clock_stamps_reported_time() {
        // +3s fast phone acting at true 2:34:14 reports 2:34:17.
        let mut g = CausalGraph::new();
        let base = 2 * 3600 + 34 * 60; // 2:34:00 as seconds
        let mut r = Replica::new(
            rid("phone"),
            ClockModel::new(3 * crate::clock::NANOS_PER_SEC, 0),
            true,
            Strategy::LwwTimestamp,
        );
        let (c, _) = r
            .apply_local(compose("m1"), TrueTime::from_secs(base + 10), &mut g)
            .unwrap();
        assert_eq!(c.local_ts, LocalTimestamp::from_secs(base + 13));
        let (op, _) = r
            .apply_local(
                OpKind::MarkRead {
                    msg: MsgId::new("m1"),
                },
                TrueTime::from_secs(base + 14),
                &mut g,
            )
            .unwrap();
        assert_eq!(op.local_ts, LocalTimestamp::from_secs(base + 17));
    }

    #[test]
    fn compose_reply_depends_on_mark_read() {
        let mut g = CausalGraph::new();
        let mut r = fresh("A", Strategy::ConvergentSets);
        r.apply_local(compose("m1"), TrueTime::from_secs(1), &mut g).unwrap();
        let (read_op, _) = r
            .apply_local(
                OpKind::MarkRead {
                    msg: MsgId::new("m1"),
                },
                TrueTime::from_secs(2),
                &mut g,
            )
            .unwrap();
        let (reply, _) = r
            .apply_local(
                OpKind::Compose {
                    msg: MsgId::new("m2"),
                    in_reply_to: Some(MsgId::new("m1")),
                },
                TrueTime::from_secs(3),
                &mut g,
            )
            .unwrap();
        assert!(reply.deps.contains(&read_op.id));
    }

    #[test]
    fn offline_ops_queue_and_drain_in_order() {
        let mut g = CausalGraph::new();
        let mut r = fresh("A", Strategy::ConvergentSets);
        r.apply_local(compose("m1"), TrueTime::from_secs(1), &mut g).unwrap();
        r.go_offline();
        r.go_offline(); // idempotent
        assert!(!r.online);
        let kinds = [
            OpKind::MarkRead {
                msg: MsgId::new("m1"),
            },
            OpKind::Move {
                msg: MsgId::new("m1"),
                folder: crate::oplog::Folder::new("todo"),
            },
            OpKind::MarkUnread {
                msg: MsgId::new("m1"),
            },
        ];
        let mut expect = Vec::new();
        for (i, k) in kinds.into_iter().enumerate() {
            let (op, _) = r
                .apply_local(k, TrueTime::from_secs(2 + i as i64), &mut g)
                .unwrap();
            expect.push(op.id.clone());
        }
        assert_eq!(r.outbox.len(), 3);
        assert!(r.state.messages[&MsgId::new("m1")].present());
        assert!(r.drain().is_err());
        r.go_online();
        let drained = r.drain().unwrap();
        let got: Vec<OpId> = drained.iter().map(|o| o.id.clone()).collect();
        assert_eq!(got, expect);
        assert!(r.outbox.is_empty());
        let (_, empty) = (r.go_online(), r.drain().unwrap());
        assert!(empty.is_empty());
    }

    #[test]
    fn duplicate_delivery_is_noop() {
        let mut g = CausalGraph::new();
        let mut a = fresh("A", Strategy::ConvergentSets);
        let mut b = fresh("B", Strategy::ConvergentSets);
        let (op, _) = a.apply_local(compose("m1"), TrueTime::from_secs(1), &mut g).unwrap();
        let before = b.snapshot();
        assert!(matches!(
            b.apply_remote(&op, TrueTime::from_secs(2), &g, false),
            RemoteOutcome::Applied(_)
        ));
        let mid = b.snapshot();
        assert_ne!(before, mid);
        assert!(matches!(
            b.apply_remote(&op, TrueTime::from_secs(3), &g, false),
            RemoteOutcome::Duplicate
        ));
        assert_eq!(b.snapshot(), mid);
    }

    #[test]
    fn causal_delivery_buffers_until_deps_arrive() {
        let mut g = CausalGraph::new();
        let mut a = fresh("A", Strategy::ConvergentSets);
        let mut b = fresh("B", Strategy::ConvergentSets);
        let (o1, _) = a.apply_local(compose("m1"), TrueTime::from_secs(1), &mut g).unwrap();
        let (o2, _) = a
            .apply_local(
                OpKind::MarkRead {
                    msg: MsgId::new("m1"),
                },
                TrueTime::from_secs(2),
                &mut g,
            )
            .unwrap();
        // o2 first: buffered, no visible effect
        assert!(matches!(
            b.apply_remote(&o2, TrueTime::from_secs(3), &g, true),
            RemoteOutcome::Buffered
        ));
        assert!(b.snapshot().canonical.is_empty());
        assert_eq!(b.pending_len(), 1);
        // o1 arrives: both apply, in causal order
        match b.apply_remote(&o1, TrueTime::from_secs(4), &g, true) {
            RemoteOutcome::Applied(list) => {
                let ids: Vec<OpId> = list.iter().map(|(id, _)| id.clone()).collect();
                assert_eq!(ids, vec![o1.id.clone(), o2.id.clone()]);
            }
            other => panic!("expected applied, got {:?}", other),
        }
        let m1 = &b.state.messages[&MsgId::new("m1")];
        assert!(m1.present() && m1.read());
        // applied set stays dep-closed
        for id in &b.applied {
            for dep in &g.op(id).deps {
                assert!(b.applied.contains(dep));
            }
        }
    }

    #[test]
    fn out_of_order_flag_pair_wrong_under_lww_right_under_or_sets() {
        // A marks read then unread (causally ordered); the unread op
        // carries the *smaller* wall timestamp because the clock stepped
        // back in between.
        let build = |strategy: Strategy| {
            let mut g = CausalGraph::new();
            let mut a = Replica::new(rid("A"), ClockModel::default(), true, strategy.clone());
            let mut b = fresh_with("B", strategy);
            let (c, _) = a.apply_local(compose("m1"), TrueTime::from_secs(1), &mut g).unwrap();
            let (read, _) = a
                .apply_local(
                    OpKind::MarkRead {
                        msg: MsgId::new("m1"),
                    },
                    TrueTime::from_secs(10),
                    &mut g,
                )
                .unwrap();
            a.clock.add_step(TrueTime::from_secs(11), -60 * crate::clock::NANOS_PER_SEC);
            let (unread, _) = a
                .apply_local(
                    OpKind::MarkUnread {
                        msg: MsgId::new("m1"),
                    },
                    TrueTime::from_secs(12),
                    &mut g,
                )
                .unwrap();
            assert!(unread.local_ts < read.local_ts);
            // deliver out of order: create, unread, read
            for op in [&c, &unread, &read] {
                b.apply_remote(op, TrueTime::from_secs(20), &g, false);
            }
            b.state.messages[&MsgId::new("m1")].read()
        };
        // LWW picks the bigger timestamp: stale "read" wins.
        assert!(build(Strategy::LwwTimestamp));
        // Observed-remove: the unread op removes the read tag it saw.
        assert!(!build(Strategy::ConvergentSets));
    }

    fn fresh_with(name: &str, strategy: Strategy) -> Replica {
        Replica::new(rid(name), ClockModel::default(), true, strategy)
    }

    #[test]
    fn snapshot_is_canonical_and_discriminating() {
        let mut g = CausalGraph::new();
        let mut a = fresh("A", Strategy::ConvergentSets);
        let mut b = fresh("B", Strategy::ConvergentSets);
        assert_eq!(a.snapshot(), b.snapshot()); // fresh replicas agree
        let (op, _) = a.apply_local(compose("m1"), TrueTime::from_secs(1), &mut g).unwrap();
        b.apply_remote(&op, TrueTime::from_secs(2), &g, false);
        assert_eq!(a.snapshot().digest, b.snapshot().digest);
        let (flag, _) = a
            .apply_local(
                OpKind::MarkRead {
                    msg: MsgId::new("m1"),
                },
                TrueTime::from_secs(3),
                &mut g,
            )
            .unwrap();
        assert_ne!(a.snapshot().digest, b.snapshot().digest);
        b.apply_remote(&flag, TrueTime::from_secs(4), &g, false);
        assert_eq!(a.snapshot(), b.snapshot());
    }

    #[test]
    fn validation_rejects_malformed_actions() {
        let mut g = CausalGraph::new();
        let mut r = fresh("A", Strategy::ConvergentSets);
        assert!(matches!(
            r.apply_local(
                OpKind::MarkRead {
                    msg: MsgId::new("ghost")
                },
                TrueTime::from_secs(1),
                &mut g
            ),
            Err(ReplicaError::UnknownMsg(_))
        ));
        assert!(matches!(
            r.apply_local(
                OpKind::TxnGroup(vec![OpKind::TxnGroup(vec![])]),
                TrueTime::from_secs(1),
                &mut g
            ),
            Err(ReplicaError::Strategy(StrategyError::NestedTxnGroup))
        ));
        r.apply_local(
            OpKind::CreateDoc {
                doc: DocId::new("d1"),
                paragraphs: vec!["a".into(), "b".into()],
            },
            TrueTime::from_secs(2),
            &mut g,
        )
        .unwrap();
        assert!(matches!(
            r.apply_local(
                OpKind::WriteDoc {
                    doc: DocId::new("d1"),
                    paragraph: 5,
                    content: "x".into()
                },
                TrueTime::from_secs(3),
                &mut g
            ),
            Err(ReplicaError::ParagraphOutOfRange { .. })
        ));
    }
}
