//! Brute-force convergence oracle: replay a small operation set in every
//! possible delivery order and compare the end states.
//!
//! This is the independent check behind the convergence claims — it never
//! trusts the simulator's own delivery machinery, only the state-machine
//! apply path, exercised under exhaustive permutations.

use std::collections::BTreeSet;

use itertools::Itertools;
use thiserror::Error;

use crate::oplog::{CausalGraph, OpId, Operation};
use crate::replica::{Snapshot, StateMachine};
use crate::strategy::Strategy;

pub const DEFAULT_MAX_OPS: usize = 6;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("operation set of {got} exceeds the enumeration bound {bound}")]
    BoundExceeded { got: usize, bound: usize },
}

/// Outcome of the exhaustive sweep.
#[derive(Clone, Debug)]
pub struct ConvergenceReport {
    pub convergent: bool,
    /// Digests of every distinct end state reached by some order.
    pub outcomes: BTreeSet<String>,
    /// Two orders that disagree, when not convergent.
    pub counterexample: Option<(Vec<OpId>, Vec<OpId>)>,
    pub orders_checked: u64,
}

/// Applies the ops to a fresh state machine in the given order and returns
/// the resulting snapshot.
pub fn replay(ops: &[&Operation], graph: &CausalGraph, strategy: &Strategy) -> Snapshot {
    let mut state = StateMachine::new(strategy.clone());
    for op in ops {
        state.apply(op, graph);
    }
    Snapshot::of(&state)
}

/// Enumerates every delivery order of `ops` and checks that all orders end
/// in identical snapshots. The empty set converges trivially.
pub fn brute_force_converge(
    ops: &[Operation],
    graph: &CausalGraph,
    strategy: &Strategy,
    max_ops: usize,
) -> Result<ConvergenceReport, OracleError> {
    if ops.len() > max_ops {
        return Err(OracleError::BoundExceeded {
            got: ops.len(),
            bound: max_ops,
        });
    }
    let mut outcomes = BTreeSet::new();
    let mut first: Option<(Vec<OpId>, String)> = None;
    let mut counterexample = None;
    let mut orders_checked = 0u64;
    for perm in ops.iter().permutations(ops.len()) {
        orders_checked += 1;
        let snap = replay(&perm, graph, strategy);
        let order: Vec<OpId> = perm.iter().map(|op| op.id.clone()).collect();
        outcomes.insert(snap.digest.clone());
        match &first {
            None => first = Some((order, snap.digest)),
            Some((first_order, first_digest)) => {
                if counterexample.is_none() && snap.digest != *first_digest {
                    counterexample = Some((first_order.clone(), order));
                }
            }
        }
    }
    if ops.is_empty() {
        orders_checked = 1;
        outcomes.insert(replay(&[], graph, strategy).digest);
    }
    Ok(ConvergenceReport {
        convergent: outcomes.len() <= 1,
        outcomes,
        counterexample,
        orders_checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{ClockModel, ReplicaId, TrueTime};
    use crate::oplog::{MsgId, OpKind};
    use crate::replica::Replica;

    /// Two replicas race a read flag: A marks read, B (blind) marks unread.
    fn concurrent_flag_ops(strategy: &Strategy) -> (Vec<Operation>, CausalGraph) {
        let mut graph = CausalGraph::new();
        let mut a = Replica::new(
            ReplicaId::new("A"),
            ClockModel::default(),
            true,
            strategy.clone(),
        );
        let mut b = Replica::new(
            ReplicaId::new("B"),
            ClockModel::default(),
            true,
            strategy.clone(),
        );
        let m = MsgId::new("m1");
        let (compose, _) = a
            .apply_local(
                OpKind::Compose {
                    msg: m.clone(),
                    in_reply_to: None,
                },
                TrueTime::from_secs(1),
                &mut graph,
            )
            .unwrap();
        b.apply_remote(&compose, TrueTime::from_secs(2), &graph, false);
        let (read, _) = a
            .apply_local(
                OpKind::MarkRead { msg: m.clone() },
                TrueTime::from_secs(3),
                &mut graph,
            )
            .unwrap();
        let (unread, _) = b
            .apply_local(
                OpKind::MarkUnread { msg: m.clone() },
                TrueTime::from_secs(4),
                &mut graph,
            )
            .unwrap();
        (vec![compose, read, unread], graph)
    }

    #[test]
    fn concurrent_flags_converge_under_or_sets() {
        let strategy = Strategy::ConvergentSets;
        let (ops, graph) = concurrent_flag_ops(&strategy);
        let report = brute_force_converge(&ops, &graph, &strategy, DEFAULT_MAX_OPS).unwrap();
        assert!(report.convergent, "counterexample: {:?}", report.counterexample);
        assert_eq!(report.orders_checked, 6);
    }

    #[test]
    fn concurrent_distinct_stamp_writes_converge_lossily_under_lww() {
        // LWW with a total key converges — to a state that dropped content.
        let strategy = Strategy::LwwTimestamp;
        let (ops, graph) = concurrent_flag_ops(&strategy);
        let report = brute_force_converge(&ops, &graph, &strategy, DEFAULT_MAX_OPS).unwrap();
        assert!(report.convergent);
    }

    #[test]
    fn arrival_order_resolution_is_order_dependent() {
        let strategy = Strategy::LwwServerArrival;
        let (ops, graph) = concurrent_flag_ops(&strategy);
        let report = brute_force_converge(&ops, &graph, &strategy, DEFAULT_MAX_OPS).unwrap();
        assert!(!report.convergent);
        assert!(report.counterexample.is_some());
        assert!(report.outcomes.len() > 1);
    }

    #[test]
    fn empty_op_set_converges() {
        let graph = CausalGraph::new();
        let report =
            brute_force_converge(&[], &graph, &Strategy::ConvergentSets, DEFAULT_MAX_OPS).unwrap();
        assert!(report.convergent);
    }

    #[test]
    fn bound_is_enforced() {
        let strategy = Strategy::ConvergentSets;
        let (ops, graph) = concurrent_flag_ops(&strategy);
        assert!(matches!(
            brute_force_converge(&ops, &graph, &strategy, 2),
            Err(OracleError::BoundExceeded { got: 3, bound: 2 })
        ));
    }
}
