//! Detectors: executable definitions of the synchronization pathologies,
//! plus the four-condition classifier for the forward-in-time-only failure
//! pattern.
//!
//! Detectors play the external observer: they read the ground-truth causal
//! graph (which strategies legitimately use too) and the completed trace,
//! including ground truth that strategies never see. A finding means the
//! causally final user intent is not what the replicas ended up showing.

use std::collections::BTreeSet;
use std::fmt;

use crate::clock::ReplicaId;
use crate::oplog::{
    detect_inversions, linear_projection, CausalGraph, DocId, Folder, MsgId, ObjectId, OpId,
    OpKind, Operation, ProjectionKey,
};
use crate::sim::{SignalMode, Trace, TransactionPhase};
use crate::strategy::{version_of, DocVersion};

/// Flip-flop threshold: a state revisited this many times marks a stuck
/// pair. Finite stand-in for "perpetually".
pub const FLIP_FLOP_THRESHOLD: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Pathology {
    SilentDeletion,
    PhantomMessage,
    LostReadState,
    MissingMove,
    StuckSync,
    CausalInversion,
}

impl fmt::Display for Pathology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Pathology::SilentDeletion => "SilentDeletion",
            Pathology::PhantomMessage => "PhantomMessage",
            Pathology::LostReadState => "LostReadState",
            Pathology::MissingMove => "MissingMove",
            Pathology::StuckSync => "StuckSync",
            Pathology::CausalInversion => "CausalInversion",
        };
        f.write_str(s)
    }
}

/// One detector hit, with the ops and replicas that witness it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Finding {
    pub pathology: Pathology,
    pub object: Option<ObjectId>,
    pub witness_ops: Vec<OpId>,
    pub witness_replicas: Vec<ReplicaId>,
    pub explanation: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.pathology)?;
        if let Some(obj) = &self.object {
            write!(f, " object={}", obj)?;
        }
        let ops: Vec<String> = self.witness_ops.iter().map(|o| o.to_string()).collect();
        let reps: Vec<String> = self
            .witness_replicas
            .iter()
            .map(|r| r.to_string())
            .collect();
        write!(
            f,
            " ops=[{}] replicas=[{}] : {}",
            ops.join(","),
            reps.join(","),
            self.explanation
        )
    }
}

// ---------------------------------------------------------------------------
// Graph-side intent analysis
// ---------------------------------------------------------------------------

/// (op, member) pairs touching the given message.
fn msg_ops<'g>(graph: &'g CausalGraph, msg: &MsgId) -> Vec<(&'g Operation, &'g OpKind)> {
    let mut out = Vec::new();
    for op in graph.ops() {
        for member in op.kind.members() {
            if member.msg_target() == Some(msg) {
                out.push((op, member));
            }
        }
    }
    out
}

fn all_msgs(graph: &CausalGraph) -> BTreeSet<MsgId> {
    let mut out = BTreeSet::new();
    for op in graph.ops() {
        for member in op.kind.members() {
            if let Some(m) = member.msg_target() {
                out.insert(m.clone());
            }
        }
    }
    out
}

fn all_docs(graph: &CausalGraph) -> BTreeSet<DocId> {
    let mut out = BTreeSet::new();
    for op in graph.ops() {
        for member in op.kind.members() {
            if let Some(d) = member.doc_target() {
                out.insert(d.clone());
            }
        }
    }
    out
}

fn hb(graph: &CausalGraph, a: &OpId, b: &OpId) -> bool {
    graph.happens_before(a, b).unwrap_or(false)
}

/// Deletions of `msg` that no later re-create supersedes.
fn unsuperseded_deletes<'g>(graph: &'g CausalGraph, msg: &MsgId) -> Vec<&'g Operation> {
    let ops = msg_ops(graph, msg);
    ops.iter()
        .filter(|(op, member)| {
            matches!(member, OpKind::DeleteMsg { .. })
                && !ops.iter().any(|(c, cm)| {
                    matches!(cm, OpKind::Compose { .. }) && hb(graph, &op.id, &c.id)
                })
        })
        .map(|(op, _)| *op)
        .collect()
}

/// Ground-truth presence: created, and every delete is causally followed
/// by a re-create.
fn expected_msg_present(graph: &CausalGraph, msg: &MsgId) -> bool {
    let ops = msg_ops(graph, msg);
    let created = ops
        .iter()
        .any(|(_, m)| matches!(m, OpKind::Compose { .. }));
    created && unsuperseded_deletes(graph, msg).is_empty()
}

/// Ground-truth read flag: does some causally maximal flag action mark the
/// message read? `None` when no flag action exists.
fn expected_read(graph: &CausalGraph, msg: &MsgId) -> Option<bool> {
    let flags: Vec<(&Operation, &OpKind)> = msg_ops(graph, msg)
        .into_iter()
        .filter(|(_, m)| matches!(m, OpKind::MarkRead { .. } | OpKind::MarkUnread { .. }))
        .collect();
    if flags.is_empty() {
        return None;
    }
    let maximal: Vec<&(&Operation, &OpKind)> = flags
        .iter()
        .filter(|(op, _)| !flags.iter().any(|(other, _)| hb(graph, &op.id, &other.id)))
        .collect();
    Some(
        maximal
            .iter()
            .any(|(_, m)| matches!(m, OpKind::MarkRead { .. })),
    )
}

/// Ground-truth folder memberships: placements (a compose lands in the
/// inbox, a move in its target) not causally followed by a move elsewhere.
fn expected_folders(graph: &CausalGraph, msg: &MsgId) -> Vec<(Folder, OpId)> {
    let ops = msg_ops(graph, msg);
    let placements: Vec<(Folder, &Operation)> = ops
        .iter()
        .filter_map(|(op, member)| match member {
            OpKind::Compose { .. } => Some((Folder::inbox(), *op)),
            OpKind::Move { folder, .. } => Some((folder.clone(), *op)),
            _ => None,
        })
        .collect();
    let mut out = Vec::new();
    for (folder, placed) in &placements {
        let moved_away = ops.iter().any(|(op, member)| {
            matches!(member, OpKind::Move { folder: g, .. } if g != folder)
                && hb(graph, &placed.id, &op.id)
        });
        if !moved_away && !out.iter().any(|(f, _)| f == folder) {
            out.push((folder.clone(), placed.id.clone()));
        }
    }
    out
}

/// Ground-truth document presence, mirroring the message rule.
fn expected_doc_present(graph: &CausalGraph, doc: &DocId) -> bool {
    let mut created = false;
    let mut deletes: Vec<&Operation> = Vec::new();
    let mut creates: Vec<&Operation> = Vec::new();
    for op in graph.ops() {
        for member in op.kind.members() {
            match member {
                OpKind::CreateDoc { doc: d, .. } | OpKind::WriteDoc { doc: d, .. }
                    if d == doc =>
                {
                    created = true;
                    if matches!(member, OpKind::CreateDoc { .. }) {
                        creates.push(op);
                    }
                }
                OpKind::DeleteDoc { doc: d } if d == doc => deletes.push(op),
                _ => {}
            }
        }
    }
    created
        && deletes
            .iter()
            .all(|d| creates.iter().any(|c| hb(graph, &d.id, &c.id)))
}

// ---------------------------------------------------------------------------
// Detectors
// ---------------------------------------------------------------------------

/// A causally maximal document version that no replica displays, with no
/// materialized sibling and no notification: content lost in silence.
pub fn detect_silent_deletion(trace: &Trace) -> Vec<Finding> {
    let graph = &trace.graph;
    let mut findings = Vec::new();
    for doc in all_docs(graph) {
        if !expected_doc_present(graph, &doc) {
            continue;
        }
        let candidates: Vec<DocVersion> = graph
            .ops()
            .filter(|op| {
                op.kind.members().iter().any(|m| {
                    matches!(m, OpKind::CreateDoc { .. } | OpKind::WriteDoc { .. })
                        && m.doc_target() == Some(&doc)
                })
            })
            .map(|op| version_of(op, &doc, graph))
            .collect();
        for v in &candidates {
            let dominated_by_candidate = candidates
                .iter()
                .any(|c| c.origin != v.origin && v.vclock.before(&c.vclock));
            if dominated_by_candidate {
                continue;
            }
            let mut displayed_somewhere = false;
            let mut dominated_by_survivor = false;
            let mut conflict_sibling = false;
            for state in trace.final_states.values() {
                if let Some(doc_state) = state.docs.get(&doc) {
                    if doc_state.present() && doc_state.conflicted {
                        conflict_sibling = true;
                    }
                    for sv in doc_state.visible_versions() {
                        if sv.paragraphs == v.paragraphs {
                            displayed_somewhere = true;
                        }
                        if v.vclock.before(&sv.vclock) {
                            dominated_by_survivor = true;
                        }
                    }
                }
            }
            let notified = trace
                .notifications
                .iter()
                .any(|(_, _, obj, _)| *obj == ObjectId::Doc(doc.clone()));
            if !displayed_somewhere && !dominated_by_survivor && !conflict_sibling && !notified {
                findings.push(Finding {
                    pathology: Pathology::SilentDeletion,
                    object: Some(ObjectId::Doc(doc.clone())),
                    witness_ops: vec![v.origin.clone()],
                    witness_replicas: trace.finals.keys().cloned().collect(),
                    explanation: format!(
                        "version from {} is causally maximal yet displayed nowhere, \
                         with no conflict copy and no notification",
                        v.origin
                    ),
                });
            }
        }
    }
    findings.sort_by(|a, b| (&a.object, &a.witness_ops).cmp(&(&b.object, &b.witness_ops)));
    findings
}

/// A message whose causally final lifecycle action is deletion, yet some
/// replica still shows it.
pub fn detect_phantom(trace: &Trace) -> Vec<Finding> {
    let graph = &trace.graph;
    let mut findings = Vec::new();
    for msg in all_msgs(graph) {
        for delete in unsuperseded_deletes(graph, &msg) {
            let showing: Vec<ReplicaId> = trace
                .final_states
                .iter()
                .filter(|(_, state)| {
                    state.messages.get(&msg).map(|m| m.present()).unwrap_or(false)
                })
                .map(|(id, _)| id.clone())
                .collect();
            if !showing.is_empty() {
                findings.push(Finding {
                    pathology: Pathology::PhantomMessage,
                    object: Some(ObjectId::Msg(msg.clone())),
                    witness_ops: vec![delete.id.clone()],
                    witness_replicas: showing,
                    explanation: format!(
                        "deleted by {} with no later re-create, but still present",
                        delete.id
                    ),
                });
            }
        }
    }
    findings.sort_by(|a, b| (&a.object, &a.witness_ops).cmp(&(&b.object, &b.witness_ops)));
    findings
}

/// The causally final read/unread intent is not what a replica displays.
pub fn detect_lost_read(trace: &Trace) -> Vec<Finding> {
    let graph = &trace.graph;
    let mut findings = Vec::new();
    for msg in all_msgs(graph) {
        if !expected_msg_present(graph, &msg) {
            continue;
        }
        let expected = match expected_read(graph, &msg) {
            Some(e) => e,
            None => continue,
        };
        let flags: Vec<OpId> = msg_ops(graph, &msg)
            .into_iter()
            .filter(|(_, m)| matches!(m, OpKind::MarkRead { .. } | OpKind::MarkUnread { .. }))
            .map(|(op, _)| op.id.clone())
            .collect();
        let maximal: Vec<OpId> = flags
            .iter()
            .filter(|id| !flags.iter().any(|other| hb(graph, id, other)))
            .cloned()
            .collect();
        let wrong: Vec<ReplicaId> = trace
            .final_states
            .iter()
            .filter(|(_, state)| {
                state
                    .messages
                    .get(&msg)
                    .map(|m| m.present() && m.read() != expected)
                    .unwrap_or(false)
            })
            .map(|(id, _)| id.clone())
            .collect();
        if !wrong.is_empty() {
            findings.push(Finding {
                pathology: Pathology::LostReadState,
                object: Some(ObjectId::Msg(msg.clone())),
                witness_ops: maximal,
                witness_replicas: wrong,
                explanation: format!(
                    "causally final flag action says read={}, displays say otherwise",
                    expected
                ),
            });
        }
    }
    findings.sort_by(|a, b| a.object.cmp(&b.object));
    findings
}

/// A folder placement that is causally final, yet some replica does not
/// show the message there.
pub fn detect_missing_move(trace: &Trace) -> Vec<Finding> {
    let graph = &trace.graph;
    let mut findings = Vec::new();
    for msg in all_msgs(graph) {
        if !expected_msg_present(graph, &msg) {
            continue;
        }
        for (folder, placement) in expected_folders(graph, &msg) {
            let missing: Vec<ReplicaId> = trace
                .final_states
                .iter()
                .filter(|(_, state)| {
                    state
                        .messages
                        .get(&msg)
                        .map(|m| m.present() && !m.folders().contains(&folder))
                        .unwrap_or(false)
                })
                .map(|(id, _)| id.clone())
                .collect();
            if !missing.is_empty() {
                findings.push(Finding {
                    pathology: Pathology::MissingMove,
                    object: Some(ObjectId::Msg(msg.clone())),
                    witness_ops: vec![placement.clone()],
                    witness_replicas: missing,
                    explanation: format!(
                        "placement {} into `{}` is causally final but not reflected",
                        placement, folder
                    ),
                });
            }
        }
    }
    findings.sort_by(|a, b| (&a.object, &a.witness_ops).cmp(&(&b.object, &b.witness_ops)));
    findings
}

/// Counts how often a timeline returns to a state it had already left.
fn revisit_count(timeline: &[String]) -> usize {
    let mut revisits = 0;
    for (i, state) in timeline.iter().enumerate() {
        if i >= 2 && timeline[..i - 1].contains(state) {
            revisits += 1;
        }
    }
    revisits
}

/// Stuck synchronization: the run ran out of budget while divergent, an
/// object kept flip-flopping between identical states, or the run went
/// quiescent with replicas still disagreeing.
pub fn detect_stuck(trace: &Trace) -> Vec<Finding> {
    let mut findings = Vec::new();
    for ((replica, object), timeline) in &trace.object_timeline {
        let revisits = revisit_count(timeline);
        if revisits >= FLIP_FLOP_THRESHOLD {
            findings.push(Finding {
                pathology: Pathology::StuckSync,
                object: Some(object.clone()),
                witness_ops: Vec::new(),
                witness_replicas: vec![replica.clone()],
                explanation: format!(
                    "state revisited {} times (threshold {})",
                    revisits, FLIP_FLOP_THRESHOLD
                ),
            });
        }
    }
    if trace.final_divergence() {
        let replicas: Vec<ReplicaId> = trace.finals.keys().cloned().collect();
        let explanation = if trace.quiescent {
            "replicas disagree at quiescence".to_string()
        } else {
            format!(
                "event budget exhausted after {} events with replicas divergent",
                trace.events_processed
            )
        };
        findings.push(Finding {
            pathology: Pathology::StuckSync,
            object: None,
            witness_ops: Vec::new(),
            witness_replicas: replicas,
            explanation,
        });
    }
    findings
}

/// Causal inversions that a wall-timestamp ordering of this run's
/// operations would present.
pub fn detect_causal_inversion(trace: &Trace) -> Vec<Finding> {
    if trace.graph.is_empty() {
        return Vec::new();
    }
    let chain = linear_projection(&trace.graph, ProjectionKey::ByLocalTimestamp);
    let inversions = detect_inversions(&trace.graph, &chain).expect("chain covers its own graph");
    inversions
        .into_iter()
        .map(|(a, b)| {
            let ka = trace.graph.op(&a).kind.canonical();
            let kb = trace.graph.op(&b).kind.canonical();
            Finding {
                pathology: Pathology::CausalInversion,
                object: None,
                witness_ops: vec![a.clone(), b.clone()],
                witness_replicas: Vec::new(),
                explanation: format!(
                    "{} ({}) precedes {} ({}) causally, but timestamp order reverses them",
                    a, ka, b, kb
                ),
            }
        })
        .collect()
}

/// All findings for one run, in a fixed order.
///
/// Inversion findings are charged only to strategies that order by
/// timestamps or arrival: those systems believe the inverted order. A
/// causality-tracking run records the same wall readings but never
/// consults that projection (the counts still appear in every report).
pub fn detect_all(trace: &Trace) -> Vec<Finding> {
    let mut out = Vec::new();
    out.extend(detect_silent_deletion(trace));
    out.extend(detect_phantom(trace));
    out.extend(detect_lost_read(trace));
    out.extend(detect_missing_move(trace));
    out.extend(detect_stuck(trace));
    if trace.strategy.forward_committing() {
        out.extend(detect_causal_inversion(trace));
    }
    out
}

// ---------------------------------------------------------------------------
// The failure-pattern classifier
// ---------------------------------------------------------------------------

/// The four-condition verdict. The pattern is present only when all four
/// conditions hold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FitoVerdict {
    pub forward_commitment: bool,
    pub absent_reflection: bool,
    pub completion_masquerade: bool,
    pub invisible_corruption: bool,
}

impl FitoVerdict {
    pub fn pattern_present(&self) -> bool {
        self.forward_commitment
            && self.absent_reflection
            && self.completion_masquerade
            && self.invisible_corruption
    }

    /// (name, value, one-line evidence) for each condition.
    pub fn lines(&self, trace: &Trace) -> Vec<(String, bool, String)> {
        let masq_count = trace
            .signals
            .iter()
            .filter(|s| {
                s.user_visible && s.phase == TransactionPhase::T4Completion && s.diverged
            })
            .count();
        vec![
            (
                "forward-commitment".to_string(),
                self.forward_commitment,
                format!(
                    "strategy {} {} revise a resolution on later information",
                    trace.strategy,
                    if self.forward_commitment {
                        "cannot"
                    } else {
                        "can"
                    }
                ),
            ),
            (
                "absent-reflection".to_string(),
                self.absent_reflection,
                format!("signal mode is {}", trace.mode),
            ),
            (
                "completion-masquerade".to_string(),
                self.completion_masquerade,
                format!(
                    "{} completion signal(s) emitted while replicas diverged on the target",
                    masq_count
                ),
            ),
            (
                "invisible-corruption".to_string(),
                self.invisible_corruption,
                format!(
                    "{} finding(s); {} user-facing notification(s)",
                    trace_finding_count(trace),
                    trace.notifications.len()
                ),
            ),
        ]
    }
}

fn trace_finding_count(trace: &Trace) -> usize {
    detect_all(trace).len()
}

/// Classifies one completed run against the four conditions:
/// a strategy that commits forward, a mode with no reflecting signal, a
/// completion badge shown during divergence, and corruption that surfaced
/// no notification.
pub fn classify_fito(trace: &Trace, findings: &[Finding]) -> FitoVerdict {
    FitoVerdict {
        forward_commitment: trace.strategy.forward_committing(),
        absent_reflection: trace.mode == SignalMode::CompletionOnly,
        completion_masquerade: trace.signals.iter().any(|s| {
            s.user_visible && s.phase == TransactionPhase::T4Completion && s.diverged
        }),
        invisible_corruption: !findings.is_empty() && trace.notifications.is_empty(),
    }
}

// ---------------------------------------------------------------------------
// Self-audit
// ---------------------------------------------------------------------------

/// Re-checks one finding's witnesses against the raw trace, independently
/// of the detector's bulk scan. Every emitted finding must pass.
pub fn audit_finding(trace: &Trace, finding: &Finding) -> bool {
    let graph = &trace.graph;
    match finding.pathology {
        Pathology::SilentDeletion => {
            let origin = match finding.witness_ops.first() {
                Some(o) => o,
                None => return false,
            };
            let doc = match &finding.object {
                Some(ObjectId::Doc(d)) => d,
                _ => return false,
            };
            let op = match graph.get(origin) {
                Some(op) => op,
                None => return false,
            };
            let v = version_of(op, doc, graph);
            let shown = trace.final_states.values().any(|s| {
                s.docs.get(doc).map_or(false, |ds| {
                    ds.visible_versions()
                        .iter()
                        .any(|sv| sv.paragraphs == v.paragraphs)
                })
            });
            let notified = trace
                .notifications
                .iter()
                .any(|(_, _, obj, _)| *obj == ObjectId::Doc(doc.clone()));
            !shown && !notified
        }
        Pathology::PhantomMessage => {
            let delete = match finding.witness_ops.first() {
                Some(d) => d,
                None => return false,
            };
            let msg = match &finding.object {
                Some(ObjectId::Msg(m)) => m,
                _ => return false,
            };
            let delete_op = match graph.get(delete) {
                Some(op) => op,
                None => return false,
            };
            let is_delete = delete_op
                .kind
                .members()
                .iter()
                .any(|k| matches!(k, OpKind::DeleteMsg { msg: m } if m == msg));
            is_delete
                && finding.witness_replicas.iter().all(|r| {
                    trace.final_states[r]
                        .messages
                        .get(msg)
                        .map_or(false, |m| m.present())
                })
        }
        Pathology::LostReadState => {
            let msg = match &finding.object {
                Some(ObjectId::Msg(m)) => m,
                _ => return false,
            };
            let expected = match expected_read(graph, msg) {
                Some(e) => e,
                None => return false,
            };
            finding.witness_replicas.iter().all(|r| {
                trace.final_states[r]
                    .messages
                    .get(msg)
                    .map_or(false, |m| m.present() && m.read() != expected)
            })
        }
        Pathology::MissingMove => {
            let msg = match &finding.object {
                Some(ObjectId::Msg(m)) => m,
                _ => return false,
            };
            let placement = match finding.witness_ops.first() {
                Some(p) => p,
                None => return false,
            };
            let folders = expected_folders(graph, msg);
            let folder = match folders.iter().find(|(_, p)| p == placement) {
                Some((f, _)) => f.clone(),
                None => return false,
            };
            finding.witness_replicas.iter().all(|r| {
                trace.final_states[r]
                    .messages
                    .get(msg)
                    .map_or(false, |m| m.present() && !m.folders().contains(&folder))
            })
        }
        Pathology::StuckSync => match &finding.object {
            Some(obj) => finding.witness_replicas.iter().all(|r| {
                trace
                    .object_timeline
                    .get(&(r.clone(), obj.clone()))
                    .map_or(false, |tl| revisit_count(tl) >= FLIP_FLOP_THRESHOLD)
            }),
            None => trace.final_divergence(),
        },
        Pathology::CausalInversion => {
            let (a, b) = match finding.witness_ops.as_slice() {
                [a, b] => (a, b),
                _ => return false,
            };
            let oa = match graph.get(a) {
                Some(op) => op,
                None => return false,
            };
            let ob = match graph.get(b) {
                Some(op) => op,
                None => return false,
            };
            // a precedes b causally, yet sorts after it by local stamp
            hb(graph, a, b)
                && (ob.local_ts, &ob.id) < (oa.local_ts, &oa.id)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::find_builtin;
    use crate::sim::{run_scenario, RunConfig};
    use crate::strategy::Strategy;

    fn run(name: &str, strategy: Strategy, mode: SignalMode, causal: bool) -> Trace {
        let s = find_builtin(name).unwrap();
        run_scenario(
            &s,
            RunConfig {
                strategy,
                mode,
                causal_delivery: causal,
                seed: 0,
            },
        )
        .unwrap()
    }

    fn count(findings: &[Finding], p: Pathology) -> usize {
        findings.iter().filter(|f| f.pathology == p).count()
    }

    #[test]
    fn s1_lww_exactly_one_silent_deletion_and_full_pattern() {
        let trace = run("s1", Strategy::LwwTimestamp, SignalMode::CompletionOnly, false);
        let findings = detect_all(&trace);
        assert_eq!(count(&findings, Pathology::SilentDeletion), 1);
        let verdict = classify_fito(&trace, &findings);
        assert!(verdict.forward_commitment);
        assert!(verdict.absent_reflection);
        assert!(verdict.completion_masquerade);
        assert!(verdict.invisible_corruption);
        assert!(verdict.pattern_present());
    }

    #[test]
    fn s1_fixes_produce_no_findings_and_no_pattern() {
        for strategy in [Strategy::MultiValueMaterialize, Strategy::SemanticMerge] {
            let trace = run("s1", strategy, SignalMode::ReflectedCommitment, true);
            let findings = detect_all(&trace);
            assert!(findings.is_empty(), "unexpected: {:?}", findings);
            let verdict = classify_fito(&trace, &findings);
            assert!(!verdict.forward_commitment);
            assert!(!verdict.absent_reflection);
            assert!(!verdict.completion_masquerade);
            assert!(!verdict.invisible_corruption);
            assert!(!verdict.pattern_present());
        }
    }

    #[test]
    fn mailbox_pathologies_and_their_cures() {
        let phantom = run("s3", Strategy::LwwTimestamp, SignalMode::CompletionOnly, false);
        assert!(count(&detect_all(&phantom), Pathology::PhantomMessage) >= 1);

        let lost = run("s4", Strategy::LwwTimestamp, SignalMode::CompletionOnly, false);
        assert!(count(&detect_all(&lost), Pathology::LostReadState) >= 1);

        let missing = run("s5", Strategy::LwwTimestamp, SignalMode::CompletionOnly, false);
        assert!(count(&detect_all(&missing), Pathology::MissingMove) >= 1);

        let stuck = run("s6", Strategy::LwwTimestamp, SignalMode::CompletionOnly, false);
        assert!(count(&detect_all(&stuck), Pathology::StuckSync) >= 1);

        for name in ["s3", "s4", "s5", "s6"] {
            let trace = run(name, Strategy::ConvergentSets, SignalMode::ReflectedCommitment, true);
            let findings = detect_all(&trace);
            assert!(
                findings.is_empty(),
                "{} not cured: {:?}",
                name,
                findings
            );
        }
    }

    #[test]
    fn s2_inversion_witnesses_read_then_compose() {
        let trace = run("s2", Strategy::ConvergentSets, SignalMode::ReflectedCommitment, true);
        let findings = detect_causal_inversion(&trace);
        assert!(!findings.is_empty());
        let has_read_compose = findings.iter().any(|f| {
            let a = trace.graph.op(&f.witness_ops[0]);
            let b = trace.graph.op(&f.witness_ops[1]);
            matches!(a.kind, OpKind::MarkRead { .. }) && matches!(b.kind, OpKind::Compose { .. })
        });
        assert!(has_read_compose);
        // hybrid projection shows none
        let chain = linear_projection(&trace.graph, ProjectionKey::ByHybrid);
        assert!(detect_inversions(&trace.graph, &chain).unwrap().is_empty());
    }

    #[test]
    fn quiescent_divergence_is_stuck() {
        let trace = run("s1", Strategy::LwwServerArrival, SignalMode::CompletionOnly, false);
        assert!(trace.quiescent);
        let findings = detect_stuck(&trace);
        assert_eq!(count(&findings, Pathology::StuckSync), 1);
        assert!(findings[0].explanation.contains("quiescence"));
    }

    #[test]
    fn delete_then_recreate_is_not_phantom() {
        use crate::oplog::MsgId;
        use crate::replica::Replica;
        use crate::clock::{ClockModel, ReplicaId, TrueTime};
        // direct mini-run: compose, delete, compose again
        let mut g = CausalGraph::new();
        let mut r = Replica::new(
            ReplicaId::new("A"),
            ClockModel::default(),
            true,
            Strategy::ConvergentSets,
        );
        let m = MsgId::new("m1");
        for (t, kind) in [
            (1, OpKind::Compose { msg: m.clone(), in_reply_to: None }),
            (2, OpKind::DeleteMsg { msg: m.clone() }),
            (3, OpKind::Compose { msg: m.clone(), in_reply_to: None }),
        ] {
            r.apply_local(kind, TrueTime::from_secs(t), &mut g).unwrap();
        }
        assert!(unsuperseded_deletes(&g, &m).is_empty());
        assert!(expected_msg_present(&g, &m));
        assert!(r.state.messages[&m].present());
    }

    #[test]
    fn findings_survive_self_audit() {
        let configs: Vec<(&str, Strategy, SignalMode, bool)> = vec![
            ("s1", Strategy::LwwTimestamp, SignalMode::CompletionOnly, false),
            ("s2", Strategy::LwwTimestamp, SignalMode::CompletionOnly, false),
            ("s3", Strategy::LwwTimestamp, SignalMode::CompletionOnly, false),
            ("s4", Strategy::LwwTimestamp, SignalMode::CompletionOnly, false),
            ("s5", Strategy::LwwTimestamp, SignalMode::CompletionOnly, false),
            ("s6", Strategy::LwwTimestamp, SignalMode::CompletionOnly, false),
            ("s1", Strategy::LwwServerArrival, SignalMode::CompletionOnly, false),
            ("s7", Strategy::LwwTimestamp, SignalMode::CompletionOnly, false),
        ];
        for (name, strategy, mode, causal) in configs {
            let trace = run(name, strategy, mode, causal);
            for finding in detect_all(&trace) {
                assert!(
                    audit_finding(&trace, &finding),
                    "{}: audit failed for {}",
                    name,
                    finding
                );
            }
        }
    }

    #[test]
    fn empty_run_classifies_pattern_absent() {
        let s = crate::scenario::parse_scenario(
            "scenario empty\n[replicas]\nreplica a offset=0 drift=0 online\n[script]\n",
        )
        .unwrap();
        let trace = crate::sim::run_scenario(
            &s,
            RunConfig {
                strategy: Strategy::LwwTimestamp,
                mode: SignalMode::CompletionOnly,
                causal_delivery: false,
                seed: 0,
            },
        )
        .unwrap();
        let findings = detect_all(&trace);
        assert!(findings.is_empty());
        let verdict = classify_fito(&trace, &findings);
        assert!(!verdict.invisible_corruption);
        assert!(!verdict.pattern_present());
    }
}
