//! Test support: builders for synthetic causal graphs with valid clock
//! metadata, and a brute-force reachability oracle kept deliberately
//! independent of `CausalGraph`'s own traversal code.
//!
//! Used by unit, property, and acceptance tests; not part of the stable API.

use std::collections::BTreeMap;

use crate::clock::{hlc_tick, HybridTimestamp, LocalTimestamp, ReplicaId, TrueTime, VectorClock};
use crate::oplog::{CausalGraph, DocId, OpId, OpKind, Operation, OplogError};

/// Builds graphs of synthetic operations whose vector clocks, hybrid
/// timestamps, and true times satisfy the recording invariants by
/// construction.
#[derive(Default)]
pub struct GraphBuilder {
    graph: CausalGraph,
    seqs: BTreeMap<ReplicaId, u64>,
    hybrids: BTreeMap<ReplicaId, HybridTimestamp>,
    vclocks: BTreeMap<ReplicaId, VectorClock>,
    next_true: i64,
}

impl GraphBuilder {
    pub fn new() -> Self {
        GraphBuilder::default()
    }

    pub fn graph(&self) -> &CausalGraph {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut CausalGraph {
        &mut self.graph
    }

    /// Adds a node on `replica` depending on `deps`, with automatic
    /// monotone true time and local_ts equal to true time.
    pub fn node(&mut self, replica: &str, deps: &[OpId]) -> OpId {
        let t = self.next_true + 1;
        self.node_at(replica, deps, t, t)
    }

    /// Adds a node with explicit true time and local timestamp.
    pub fn node_at(&mut self, replica: &str, deps: &[OpId], true_ns: i64, local_ns: i64) -> OpId {
        let op = self.build(replica, deps, true_ns, local_ns);
        let id = op.id.clone();
        self.graph.record(op).expect("testkit node must record");
        id
    }

    /// Like `node`, but surfaces recording errors instead of panicking.
    pub fn try_node_with_deps(&mut self, replica: &str, deps: &[OpId]) -> Result<OpId, OplogError> {
        let t = self.next_true + 1;
        let op = self.build(replica, deps, t, t);
        let id = op.id.clone();
        self.graph.record(op)?;
        Ok(id)
    }

    /// A fresh `Operation` value with the same id as an existing node
    /// (for duplicate-recording tests).
    pub fn op_like(&self, id: &OpId) -> Operation {
        self.graph.op(id).clone()
    }

    fn build(&mut self, replica: &str, deps: &[OpId], true_ns: i64, local_ns: i64) -> Operation {
        let rid = ReplicaId::new(replica);
        let seq = self.seqs.entry(rid.clone()).or_insert(0);
        *seq += 1;
        let seq = *seq;

        let mut vclock = self.vclocks.get(&rid).cloned().unwrap_or_default();
        let mut max_dep_hybrid: Option<HybridTimestamp> = None;
        for dep in deps {
            if let Some(dep_op) = self.graph.get(dep) {
                vclock = vclock.merged(&dep_op.vclock);
                max_dep_hybrid = Some(match max_dep_hybrid {
                    Some(h) if h >= dep_op.hybrid => h,
                    _ => dep_op.hybrid,
                });
            }
        }
        let vclock = vclock.incremented(&rid);
        self.vclocks.insert(rid.clone(), vclock.clone());

        let prev_hybrid = self.hybrids.get(&rid).copied().unwrap_or_default();
        let hybrid = hlc_tick(prev_hybrid, LocalTimestamp(local_ns), max_dep_hybrid);
        self.hybrids.insert(rid.clone(), hybrid);

        self.next_true = self.next_true.max(true_ns);

        Operation {
            id: OpId::new(rid, seq),
            kind: OpKind::CreateDoc {
                doc: DocId::new(format!("synthetic-{}-{}", replica, seq)),
                paragraphs: vec![],
            },
            true_time: TrueTime(true_ns),
            local_ts: LocalTimestamp(local_ns),
            vclock,
            hybrid,
            deps: deps.iter().cloned().collect(),
        }
    }
}

/// Brute-force happens-before: breadth-first reachability over explicit
/// dependency edges, written without reference to `CausalGraph`'s
/// traversal so the two can check each other.
pub fn reachability_oracle(edges: &[(usize, usize)], n: usize) -> Vec<Vec<bool>> {
    let mut direct = vec![vec![false; n]; n];
    for &(a, b) in edges {
        direct[a][b] = true;
    }
    let mut reach = vec![vec![false; n]; n];
    for start in 0..n {
        let mut frontier = vec![start];
        let mut seen = vec![false; n];
        while let Some(u) = frontier.pop() {
            for v in 0..n {
                if direct[u][v] && !seen[v] {
                    seen[v] = true;
                    reach[start][v] = true;
                    frontier.push(v);
                }
            }
        }
    }
    reach
}

/// Loss oracle: counts unordered pairs from a reachability matrix.
pub fn loss_oracle(reach: &[Vec<bool>]) -> u64 {
    let n = reach.len();
    let mut loss = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            if !reach[i][j] && !reach[j][i] {
                loss += 1;
            }
        }
    }
    loss
}

/// Enumerates every DAG on `n` nodes as an edge set over a fixed
/// topological labeling (edges only from lower to higher index). Every DAG
/// on ≤ n nodes is isomorphic to exactly one enumerated graph.
pub fn all_dags(n: usize) -> Vec<Vec<(usize, usize)>> {
    let mut slots = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            slots.push((i, j));
        }
    }
    let count = 1usize << slots.len();
    let mut out = Vec::with_capacity(count);
    for mask in 0..count {
        let edges: Vec<(usize, usize)> = slots
            .iter()
            .enumerate()
            .filter(|(bit, _)| mask & (1 << bit) != 0)
            .map(|(_, e)| *e)
            .collect();
        out.push(edges);
    }
    out
}

/// Builds a `CausalGraph` realizing the given edge DAG: node `i` becomes an
/// operation on its own replica with deps = its direct predecessors.
pub fn graph_from_edges(n: usize, edges: &[(usize, usize)]) -> (CausalGraph, Vec<OpId>) {
    let mut b = GraphBuilder::new();
    let mut ids: Vec<OpId> = Vec::with_capacity(n);
    for i in 0..n {
        let deps: Vec<OpId> = edges
            .iter()
            .filter(|(_, to)| *to == i)
            .map(|(from, _)| ids[*from].clone())
            .collect();
        let id = b.node(&format!("r{}", i), &deps);
        ids.push(id);
    }
    (b.graph().clone(), ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_nodes_satisfy_invariants() {
        let mut b = GraphBuilder::new();
        let a = b.node("A", &[]);
        let c = b.node("B", &[a.clone()]);
        let g = b.graph();
        assert!(g.op(&c).vclock.dominates(&g.op(&a).vclock));
        assert!(g.op(&c).hybrid > g.op(&a).hybrid);
        assert!(g.op(&c).true_time > g.op(&a).true_time);
    }

    #[test]
    fn dag_enumeration_sizes() {
        assert_eq!(all_dags(1).len(), 1);
        assert_eq!(all_dags(2).len(), 2);
        assert_eq!(all_dags(3).len(), 8);
        assert_eq!(all_dags(4).len(), 64);
        assert_eq!(all_dags(5).len(), 1024);
    }

    #[test]
    fn oracle_agrees_on_diamond() {
        let edges = [(0, 1), (0, 2), (1, 3), (2, 3)];
        let reach = reachability_oracle(&edges, 4);
        assert!(reach[0][3]);
        assert!(!reach[1][2]);
        assert_eq!(loss_oracle(&reach), 1);
    }
}
