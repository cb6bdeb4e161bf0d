//! Conflict-resolution policies.
//!
//! Two faulty baselines order by wall timestamps or processing order and
//! keep exactly one winner. The fixes track causality instead: keep every
//! causally maximal version and surface the conflict, merge structured
//! documents paragraph by paragraph, or resolve mailbox state through
//! observed-remove sets where a removal only cancels what its author had
//! actually seen.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::clock::{CausalOrdering, LocalTimestamp, ReplicaId, VectorClock};
use crate::oplog::{CausalGraph, DocId, Folder, MsgId, OpId, OpKind, Operation};

/// A conflict-resolution policy. `Transactional` wraps a plain policy and
/// adds atomic-group semantics; it never nests.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Strategy {
    LwwTimestamp,
    LwwServerArrival,
    MultiValueMaterialize,
    ConvergentSets,
    SemanticMerge,
    Transactional(Box<Strategy>),
}

impl Strategy {
    /// The policy that actually resolves state, unwrapping `Transactional`.
    pub fn inner(&self) -> &Strategy {
        match self {
            Strategy::Transactional(inner) => inner,
            other => other,
        }
    }

    /// True for policies that discard on sight and cannot revisit a
    /// resolution when better information arrives later.
    pub fn forward_committing(&self) -> bool {
        matches!(
            self.inner(),
            Strategy::LwwTimestamp | Strategy::LwwServerArrival
        )
    }

    /// True for policies whose clients carry causal metadata and may
    /// consult it when reacting to conflicts.
    pub fn causality_aware(&self) -> bool {
        !self.forward_committing()
    }

    /// The six selectable strategies, in a fixed presentation order.
    pub fn all() -> Vec<Strategy> {
        vec![
            Strategy::LwwTimestamp,
            Strategy::LwwServerArrival,
            Strategy::MultiValueMaterialize,
            Strategy::ConvergentSets,
            Strategy::SemanticMerge,
            Strategy::Transactional(Box::new(Strategy::ConvergentSets)),
        ]
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::LwwTimestamp => f.write_str("LwwTimestamp"),
            Strategy::LwwServerArrival => f.write_str("LwwServerArrival"),
            Strategy::MultiValueMaterialize => f.write_str("MultiValueMaterialize"),
            Strategy::ConvergentSets => f.write_str("ConvergentSets"),
            Strategy::SemanticMerge => f.write_str("SemanticMerge"),
            Strategy::Transactional(inner) => write!(f, "Transactional({})", inner),
        }
    }
}

impl FromStr for Strategy {
    type Err = StrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "LwwTimestamp" => Ok(Strategy::LwwTimestamp),
            "LwwServerArrival" => Ok(Strategy::LwwServerArrival),
            "MultiValueMaterialize" => Ok(Strategy::MultiValueMaterialize),
            "ConvergentSets" => Ok(Strategy::ConvergentSets),
            "SemanticMerge" => Ok(Strategy::SemanticMerge),
            // Bare name defaults the wrapped policy to ConvergentSets.
            "Transactional" => Ok(Strategy::Transactional(Box::new(Strategy::ConvergentSets))),
            other => {
                if let Some(body) = other
                    .strip_prefix("Transactional(")
                    .and_then(|rest| rest.strip_suffix(')'))
                {
                    let inner: Strategy = body.parse()?;
                    if matches!(inner, Strategy::Transactional(_)) {
                        return Err(StrategyError::NestedTransactional);
                    }
                    Ok(Strategy::Transactional(Box::new(inner)))
                } else {
                    Err(StrategyError::UnknownStrategy(other.to_string()))
                }
            }
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StrategyError {
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
    #[error("Transactional must wrap a plain strategy")]
    NestedTransactional,
    #[error("document id mismatch: {local} vs {incoming}")]
    DocIdMismatch { local: DocId, incoming: DocId },
    #[error("merge preconditions violated: {0}")]
    BadMergeInputs(&'static str),
    #[error("transaction group is empty")]
    EmptyTxnGroup,
    #[error("transaction groups cannot nest")]
    NestedTxnGroup,
}

/// One materialized variant of a document's content.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DocVersion {
    pub doc: DocId,
    pub paragraphs: Vec<String>,
    pub vclock: VectorClock,
    pub local_ts: LocalTimestamp,
    pub origin: OpId,
}

impl DocVersion {
    /// Last-writer-wins resolution key: wall reading, then replica, then seq.
    pub fn lww_key(&self) -> (LocalTimestamp, ReplicaId, u64) {
        (
            self.local_ts,
            self.origin.replica.clone(),
            self.origin.seq,
        )
    }
}

/// The outcome of resolving a set of document versions: the versions that
/// remain visible, the versions that were dropped, and whether anyone was
/// told. Silence plus a non-dominated discard is exactly the silent-loss
/// pathology the detectors look for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Resolution {
    pub survivors: Vec<DocVersion>,
    pub discarded: Vec<DocVersion>,
    pub notified: bool,
}

/// Reconstructs the content of `doc` as produced by `op`: fold every
/// content op in its causal past (plus itself) in hybrid-timestamp order.
/// Pure function of the graph, so every replica reconstructs the same
/// version for the same op.
pub fn version_of(op: &Operation, doc: &DocId, graph: &CausalGraph) -> DocVersion {
    let touches = |o: &Operation| {
        o.kind
            .members()
            .iter()
            .any(|k| k.doc_target() == Some(doc))
    };
    let mut history: Vec<&Operation> = graph
        .ancestors(&op.id)
        .iter()
        .map(|id| graph.op(id))
        .filter(|a| touches(a))
        .collect();
    if touches(op) {
        history.push(op);
    }
    history.sort_by(|a, b| (a.hybrid, &a.id).cmp(&(b.hybrid, &b.id)));

    let mut paragraphs: Vec<String> = Vec::new();
    for h in history {
        for member in h.kind.members() {
            if member.doc_target() == Some(doc) {
                apply_content_kind(&mut paragraphs, member);
            }
        }
    }
    DocVersion {
        doc: doc.clone(),
        paragraphs,
        vclock: op.vclock.clone(),
        local_ts: op.local_ts,
        origin: op.id.clone(),
    }
}

fn apply_content_kind(paragraphs: &mut Vec<String>, kind: &OpKind) {
    match kind {
        OpKind::CreateDoc {
            paragraphs: init, ..
        } => {
            *paragraphs = init.clone();
        }
        OpKind::WriteDoc {
            paragraph, content, ..
        } => {
            while paragraphs.len() <= *paragraph {
                paragraphs.push(String::new());
            }
            paragraphs[*paragraph] = content.clone();
        }
        _ => {}
    }
}

/// Keeps only versions not causally dominated by another candidate.
/// Surviving versions are pairwise concurrent; output sorted by origin.
pub fn maximal_versions(mut candidates: Vec<DocVersion>) -> (Vec<DocVersion>, Vec<DocVersion>) {
    candidates.sort_by(|a, b| a.origin.cmp(&b.origin));
    candidates.dedup_by(|a, b| a.origin == b.origin);
    let mut survivors = Vec::new();
    let mut discarded = Vec::new();
    'outer: for (i, v) in candidates.iter().enumerate() {
        for (j, other) in candidates.iter().enumerate() {
            if i != j {
                match v.vclock.compare(&other.vclock) {
                    CausalOrdering::Before => {
                        discarded.push(v.clone());
                        continue 'outer;
                    }
                    // On equal clocks keep the lower origin only.
                    CausalOrdering::Equal if j < i => {
                        discarded.push(v.clone());
                        continue 'outer;
                    }
                    _ => {}
                }
            }
        }
        survivors.push(v.clone());
    }
    (survivors, discarded)
}

/// Resolves a document's local version set against one incoming version.
///
/// Behavior by policy:
/// - `LwwTimestamp`: keep the single version with the largest
///   (local_ts, replica, seq) key; everything else is dropped silently.
/// - `LwwServerArrival`: the incoming (latest processed) version replaces
///   whatever is there, regardless of content or clocks.
/// - `MultiValueMaterialize` / `ConvergentSets`: keep every causally
///   maximal version; surface the conflict when more than one survives.
/// - `SemanticMerge`: like the above, but a pair of concurrent versions is
///   merged paragraph-wise when possible; an unmergeable pair stays
///   materialized with notice.
pub fn resolve_doc(
    strategy: &Strategy,
    local: &[DocVersion],
    incoming: &DocVersion,
    graph: &CausalGraph,
) -> Result<Resolution, StrategyError> {
    for v in local {
        if v.doc != incoming.doc {
            return Err(StrategyError::DocIdMismatch {
                local: v.doc.clone(),
                incoming: incoming.doc.clone(),
            });
        }
    }
    let mut candidates: Vec<DocVersion> = local.to_vec();
    candidates.push(incoming.clone());

    match strategy.inner() {
        Strategy::LwwTimestamp => {
            let winner = candidates
                .iter()
                .max_by_key(|v| v.lww_key())
                .cloned()
                .expect("at least one candidate");
            let discarded = candidates
                .into_iter()
                .filter(|v| v.origin != winner.origin)
                .collect();
            Ok(Resolution {
                survivors: vec![winner],
                discarded,
                notified: false,
            })
        }
        Strategy::LwwServerArrival => Ok(Resolution {
            survivors: vec![incoming.clone()],
            discarded: local
                .iter()
                .filter(|v| v.origin != incoming.origin)
                .cloned()
                .collect(),
            notified: false,
        }),
        Strategy::MultiValueMaterialize | Strategy::ConvergentSets => {
            let (survivors, discarded) = maximal_versions(candidates);
            let notified = survivors.len() > 1;
            Ok(Resolution {
                survivors,
                discarded,
                notified,
            })
        }
        Strategy::SemanticMerge => {
            let (mut antichain, mut discarded) = maximal_versions(candidates);
            if antichain.len() < 2 {
                return Ok(Resolution {
                    survivors: antichain,
                    discarded,
                    notified: false,
                });
            }
            // Fold concurrent versions pairwise; a conflict anywhere falls
            // back to materializing the whole antichain.
            let mut acc = antichain[0].clone();
            for next in &antichain[1..] {
                let base = merge_base(&acc, next, graph);
                match merge_paragraphs(&base, &acc.paragraphs, &next.paragraphs) {
                    MergeOutcome::Merged(paragraphs) => {
                        let merged = DocVersion {
                            doc: acc.doc.clone(),
                            paragraphs,
                            vclock: acc.vclock.merged(&next.vclock),
                            local_ts: acc.local_ts.max(next.local_ts),
                            origin: incoming.origin.clone(),
                        };
                        acc = merged;
                    }
                    MergeOutcome::Conflict { .. } => {
                        return Ok(Resolution {
                            survivors: antichain,
                            discarded,
                            notified: true,
                        });
                    }
                }
            }
            discarded.extend(antichain.drain(..));
            Ok(Resolution {
                survivors: vec![acc],
                discarded,
                notified: false,
            })
        }
        Strategy::Transactional(_) => unreachable!("inner() unwraps Transactional"),
    }
}

/// Content at the nearest common causal history of two versions: the fold
/// of every content op that precedes both origins.
pub fn merge_base(a: &DocVersion, b: &DocVersion, graph: &CausalGraph) -> Vec<String> {
    let doc = &a.doc;
    let anc_a = graph.ancestors(&a.origin);
    let anc_b = graph.ancestors(&b.origin);
    let mut common: Vec<&Operation> = anc_a
        .intersection(&anc_b)
        .map(|id| graph.op(id))
        .filter(|op| {
            op.kind
                .members()
                .iter()
                .any(|k| k.doc_target() == Some(doc))
        })
        .collect();
    common.sort_by(|x, y| (x.hybrid, &x.id).cmp(&(y.hybrid, &y.id)));
    let mut paragraphs = Vec::new();
    for op in common {
        for member in op.kind.members() {
            if member.doc_target() == Some(doc) {
                apply_content_kind(&mut paragraphs, member);
            }
        }
    }
    paragraphs
}

/// Result of a three-way paragraph merge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MergeOutcome {
    Merged(Vec<String>),
    Conflict {
        /// Paragraph indices changed incompatibly in both branches;
        /// empty when the whole document is in conflict.
        indices: Vec<usize>,
        /// Both branches changed the paragraph count: no positional
        /// correspondence survives, so the entire document conflicts.
        whole_doc: bool,
    },
}

/// Positional three-way merge. A paragraph changed in exactly one branch
/// takes that branch; unchanged takes base; changed in both is a conflict
/// entry, never a silent choice.
pub fn merge_paragraphs(base: &[String], a: &[String], b: &[String]) -> MergeOutcome {
    if a == b {
        return MergeOutcome::Merged(a.to_vec());
    }
    if a == base {
        return MergeOutcome::Merged(b.to_vec());
    }
    if b == base {
        return MergeOutcome::Merged(a.to_vec());
    }
    if a.len() != base.len() && b.len() != base.len() {
        return MergeOutcome::Conflict {
            indices: Vec::new(),
            whole_doc: true,
        };
    }
    let n = a.len().max(b.len());
    let mut merged: Vec<String> = Vec::with_capacity(n);
    let mut conflicts: Vec<usize> = Vec::new();
    for i in 0..n {
        let base_p = base.get(i);
        let a_p = a.get(i);
        let b_p = b.get(i);
        let changed_a = a_p != base_p;
        let changed_b = b_p != base_p;
        let pick = match (changed_a, changed_b) {
            (false, false) => base_p,
            (true, false) => a_p,
            (false, true) => b_p,
            (true, true) => {
                if a_p == b_p {
                    a_p
                } else {
                    conflicts.push(i);
                    None
                }
            }
        };
        if let Some(p) = pick {
            merged.push(p.clone());
        }
    }
    if conflicts.is_empty() {
        MergeOutcome::Merged(merged)
    } else {
        MergeOutcome::Conflict {
            indices: conflicts,
            whole_doc: false,
        }
    }
}

/// Three-way merge of two concurrent versions over an explicit base
/// version. Checks the causal preconditions, then merges content.
pub fn merge_doc(
    base: &DocVersion,
    a: &DocVersion,
    b: &DocVersion,
) -> Result<MergeOutcome, StrategyError> {
    if a.vclock.compare(&b.vclock) != CausalOrdering::Concurrent {
        return Err(StrategyError::BadMergeInputs("a and b must be concurrent"));
    }
    if base.vclock.compare(&a.vclock) != CausalOrdering::Before
        || base.vclock.compare(&b.vclock) != CausalOrdering::Before
    {
        return Err(StrategyError::BadMergeInputs(
            "base must causally precede both branches",
        ));
    }
    Ok(merge_paragraphs(&base.paragraphs, &a.paragraphs, &b.paragraphs))
}

/// Validates a transaction group: non-empty, and members are plain ops.
pub fn validate_txn(members: &[OpKind]) -> Result<(), StrategyError> {
    if members.is_empty() {
        return Err(StrategyError::EmptyTxnGroup);
    }
    if members.iter().any(|m| matches!(m, OpKind::TxnGroup(_))) {
        return Err(StrategyError::NestedTxnGroup);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Mailbox state under the two policy families
// ---------------------------------------------------------------------------

/// Register used by timestamp-based resolution: a value stamped with the
/// key of the op that wrote it. `write` keeps the larger key; arrival-order
/// resolution overwrites unconditionally.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LwwRegister<T: Clone> {
    pub value: Option<T>,
    pub key: Option<(LocalTimestamp, ReplicaId, u64)>,
}

impl<T: Clone> Default for LwwRegister<T> {
    fn default() -> Self {
        LwwRegister {
            value: None,
            key: None,
        }
    }
}

impl<T: Clone> LwwRegister<T> {
    pub fn write_keyed(&mut self, value: T, key: (LocalTimestamp, ReplicaId, u64)) -> bool {
        if self.key.as_ref().map_or(true, |k| key > *k) {
            self.value = Some(value);
            self.key = Some(key);
            true
        } else {
            false
        }
    }

    pub fn overwrite(&mut self, value: T, key: (LocalTimestamp, ReplicaId, u64)) -> bool {
        self.value = Some(value);
        self.key = Some(key);
        true
    }
}

/// Message state under last-writer-wins: one register per attribute.
/// Every non-delete op also asserts the message's existence, which is how
/// stale state resurrects a deleted message.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct LwwMsgState {
    pub present: LwwRegister<bool>,
    pub read: LwwRegister<bool>,
    pub folder: LwwRegister<Folder>,
    pub body: String,
}

/// Message state under observed-remove sets. Adds create unique tags (the
/// op id); removals record exactly the tags visible in the removing op's
/// causal past. Membership is surviving adds, so application commutes and
/// duplicate delivery is a no-op.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct OrMsgState {
    pub read_adds: BTreeSet<OpId>,
    pub read_removed: BTreeSet<OpId>,
    pub placements: BTreeMap<Folder, BTreeSet<OpId>>,
    pub placements_removed: BTreeSet<OpId>,
    pub tombstones: BTreeSet<OpId>,
    pub tombstones_removed: BTreeSet<OpId>,
    pub created: BTreeSet<OpId>,
    pub body: String,
}

impl OrMsgState {
    pub fn surviving_read_tags(&self) -> BTreeSet<OpId> {
        self.read_adds
            .difference(&self.read_removed)
            .cloned()
            .collect()
    }

    pub fn surviving_tombstones(&self) -> BTreeSet<OpId> {
        self.tombstones
            .difference(&self.tombstones_removed)
            .cloned()
            .collect()
    }

    pub fn folders(&self) -> Vec<Folder> {
        self.placements
            .iter()
            .filter(|(_, tags)| tags.difference(&self.placements_removed).next().is_some())
            .map(|(f, _)| f.clone())
            .collect()
    }
}

/// One message's state, materialized per the policy family in force.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MsgState {
    Lww(LwwMsgState),
    Or(OrMsgState),
}

impl MsgState {
    pub fn for_strategy(strategy: &Strategy) -> MsgState {
        if strategy.forward_committing() {
            MsgState::Lww(LwwMsgState::default())
        } else {
            MsgState::Or(OrMsgState::default())
        }
    }

    /// User-visible presence.
    pub fn present(&self) -> bool {
        match self {
            MsgState::Lww(s) => s.present.value.unwrap_or(false),
            MsgState::Or(s) => {
                !s.created.is_empty() && s.surviving_tombstones().is_empty()
            }
        }
    }

    /// User-visible read flag.
    pub fn read(&self) -> bool {
        match self {
            MsgState::Lww(s) => s.read.value.unwrap_or(false),
            MsgState::Or(s) => !s.surviving_read_tags().is_empty(),
        }
    }

    /// User-visible folder memberships, sorted.
    pub fn folders(&self) -> Vec<Folder> {
        match self {
            MsgState::Lww(s) => s.folder.value.iter().cloned().collect(),
            MsgState::Or(s) => s.folders(),
        }
    }

    pub fn body(&self) -> &str {
        match self {
            MsgState::Lww(s) => &s.body,
            MsgState::Or(s) => &s.body,
        }
    }

    /// Canonical one-line rendering of the visible state.
    pub fn visible_digest(&self) -> String {
        if !self.present() {
            return "absent".to_string();
        }
        let folders: Vec<String> = self.folders().iter().map(|f| f.to_string()).collect();
        format!(
            "present read={} folders=[{}] body={:?}",
            self.read(),
            folders.join(","),
            self.body()
        )
    }
}

/// Applies one mailbox operation (one member of a group at a time) to a
/// message's state under the given policy.
///
/// Under observed-remove semantics, removals cancel exactly the tags in
/// the op's dependency closure; under LWW each attribute is a register
/// keyed by wall timestamp (or overwritten in processing order for
/// arrival-based resolution).
pub fn set_apply(
    state: &mut MsgState,
    kind: &OpKind,
    op: &Operation,
    graph: &CausalGraph,
    strategy: &Strategy,
) {
    let msg = match kind.msg_target() {
        Some(m) => m,
        None => return,
    };
    match state {
        MsgState::Lww(s) => {
            let arrival_order = matches!(strategy.inner(), Strategy::LwwServerArrival);
            apply_lww_msg(s, kind, op.lww_key(), arrival_order);
        }
        MsgState::Or(s) => apply_or_msg(s, msg, kind, op, graph),
    }
}

fn apply_lww_msg(
    s: &mut LwwMsgState,
    kind: &OpKind,
    key: (LocalTimestamp, ReplicaId, u64),
    arrival_order: bool,
) {
    let write_bool = |reg: &mut LwwRegister<bool>, v: bool| {
        if arrival_order {
            reg.overwrite(v, key.clone());
        } else {
            reg.write_keyed(v, key.clone());
        }
    };
    match kind {
        OpKind::MarkRead { .. } => {
            write_bool(&mut s.read, true);
            write_bool(&mut s.present, true);
        }
        OpKind::MarkUnread { .. } => {
            write_bool(&mut s.read, false);
            write_bool(&mut s.present, true);
        }
        OpKind::Move { folder, .. } => {
            if arrival_order {
                s.folder.overwrite(folder.clone(), key.clone());
            } else {
                s.folder.write_keyed(folder.clone(), key.clone());
            }
            write_bool(&mut s.present, true);
        }
        OpKind::DeleteMsg { .. } => {
            write_bool(&mut s.present, false);
        }
        OpKind::Compose { msg, .. } => {
            write_bool(&mut s.present, true);
            write_bool(&mut s.read, false);
            if arrival_order {
                s.folder.overwrite(Folder::inbox(), key.clone());
            } else {
                s.folder.write_keyed(Folder::inbox(), key.clone());
            }
            if s.body.is_empty() {
                s.body = format!("body of {}", msg);
            }
        }
        _ => {}
    }
}

fn apply_or_msg(
    s: &mut OrMsgState,
    msg: &MsgId,
    kind: &OpKind,
    op: &Operation,
    graph: &CausalGraph,
) {
    match kind {
        OpKind::MarkRead { .. } => {
            s.read_adds.insert(op.id.clone());
        }
        OpKind::MarkUnread { .. } => {
            for tag in observed_ops(graph, op, msg, |k| matches!(k, OpKind::MarkRead { .. })) {
                s.read_removed.insert(tag);
            }
        }
        OpKind::Move { folder, .. } => {
            // Remove observed placements into other folders, add ours.
            for anc in graph.ancestors(&op.id) {
                let anc_op = graph.op(&anc);
                for member in anc_op.kind.members() {
                    let placed = match member {
                        OpKind::Move {
                            msg: m,
                            folder: g,
                        } if m == msg && g != folder => true,
                        OpKind::Compose { msg: m, .. } if m == msg && *folder != Folder::inbox() => {
                            true
                        }
                        _ => false,
                    };
                    if placed {
                        s.placements_removed.insert(anc.clone());
                    }
                }
            }
            s.placements
                .entry(folder.clone())
                .or_default()
                .insert(op.id.clone());
        }
        OpKind::DeleteMsg { .. } => {
            s.tombstones.insert(op.id.clone());
        }
        OpKind::Compose { msg, .. } => {
            s.created.insert(op.id.clone());
            s.placements
                .entry(Folder::inbox())
                .or_default()
                .insert(op.id.clone());
            for tomb in observed_ops(graph, op, msg, |k| matches!(k, OpKind::DeleteMsg { .. })) {
                s.tombstones_removed.insert(tomb);
            }
            if s.body.is_empty() {
                s.body = format!("body of {}", msg);
            }
        }
        _ => {}
    }
}

/// Op ids in `op`'s dependency closure whose kind (or a group member's
/// kind) matches the predicate and targets `msg`.
fn observed_ops(
    graph: &CausalGraph,
    op: &Operation,
    msg: &MsgId,
    pred: impl Fn(&OpKind) -> bool,
) -> Vec<OpId> {
    graph
        .ancestors(&op.id)
        .into_iter()
        .filter(|anc| {
            graph
                .op(anc)
                .kind
                .members()
                .iter()
                .any(|k| k.msg_target() == Some(msg) && pred(k))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::all() {
            let text = s.to_string();
            let back: Strategy = text.parse().unwrap();
            assert_eq!(back, s);
        }
        assert!(matches!(
            "Transactional(Transactional(ConvergentSets))".parse::<Strategy>(),
            Err(StrategyError::NestedTransactional)
        ));
        assert!("Lww".parse::<Strategy>().is_err());
    }

    #[test]
    fn merge_takes_disjoint_edits() {
        let base: Vec<String> = (0..8).map(|i| format!("p{}", i)).collect();
        let mut a = base.clone();
        a[3] = "alice".into();
        let mut b = base.clone();
        b[7] = "bob".into();
        match merge_paragraphs(&base, &a, &b) {
            MergeOutcome::Merged(m) => {
                assert_eq!(m[3], "alice");
                assert_eq!(m[7], "bob");
                assert_eq!(m[0], "p0");
            }
            other => panic!("expected clean merge, got {:?}", other),
        }
    }

    #[test]
    fn merge_one_sided_returns_other_branch() {
        let base = vec!["x".to_string()];
        let b = vec!["y".to_string()];
        assert_eq!(
            merge_paragraphs(&base, &base.clone(), &b),
            MergeOutcome::Merged(b.clone())
        );
    }

    #[test]
    fn merge_conflict_on_same_paragraph() {
        let base = vec!["x".to_string(), "y".to_string(), "z".to_string()];
        let mut a = base.clone();
        a[1] = "from-a".into();
        let mut b = base.clone();
        b[1] = "from-b".into();
        assert_eq!(
            merge_paragraphs(&base, &a, &b),
            MergeOutcome::Conflict {
                indices: vec![1],
                whole_doc: false
            }
        );
    }

    #[test]
    fn merge_three_paragraph_truth_table() {
        // Exhaustive over which side edits each of 3 paragraphs.
        let base: Vec<String> = vec!["0".into(), "1".into(), "2".into()];
        for mask_a in 0u8..8 {
            for mask_b in 0u8..8 {
                let mut a = base.clone();
                let mut b = base.clone();
                for i in 0..3 {
                    if mask_a & (1 << i) != 0 {
                        a[i] = format!("a{}", i);
                    }
                    if mask_b & (1 << i) != 0 {
                        b[i] = format!("b{}", i);
                    }
                }
                let both: Vec<usize> =
                    (0..3).filter(|i| mask_a & (1 << i) != 0 && mask_b & (1 << i) != 0).collect();
                match merge_paragraphs(&base, &a, &b) {
                    MergeOutcome::Merged(m) => {
                        assert!(both.is_empty());
                        for i in 0..3 {
                            if mask_a & (1 << i) != 0 {
                                assert_eq!(m[i], format!("a{}", i));
                            } else if mask_b & (1 << i) != 0 {
                                assert_eq!(m[i], format!("b{}", i));
                            } else {
                                assert_eq!(m[i], base[i]);
                            }
                        }
                    }
                    MergeOutcome::Conflict { indices, whole_doc } => {
                        assert!(!whole_doc);
                        assert_eq!(indices, both);
                    }
                }
            }
        }
    }

    #[test]
    fn merge_symmetric_up_to_conflict_order() {
        let base = vec!["x".to_string(), "y".to_string()];
        let a = vec!["x2".to_string(), "y".to_string()];
        let b = vec!["x".to_string(), "y2".to_string()];
        let ab = merge_paragraphs(&base, &a, &b);
        let ba = merge_paragraphs(&base, &b, &a);
        assert_eq!(ab, ba);
    }

    #[test]
    fn merge_whole_doc_conflict_when_both_change_count() {
        let base = vec!["x".to_string()];
        let a = vec!["x".to_string(), "a".to_string()];
        let b: Vec<String> = vec![];
        assert_eq!(
            merge_paragraphs(&base, &a, &b),
            MergeOutcome::Conflict {
                indices: vec![],
                whole_doc: true
            }
        );
    }

    #[test]
    fn txn_validation() {
        assert!(matches!(
            validate_txn(&[]),
            Err(StrategyError::EmptyTxnGroup)
        ));
        assert!(matches!(
            validate_txn(&[OpKind::TxnGroup(vec![])]),
            Err(StrategyError::NestedTxnGroup)
        ));
        assert!(validate_txn(&[OpKind::DeleteDoc {
            doc: DocId::new("d")
        }])
        .is_ok());
    }
}
