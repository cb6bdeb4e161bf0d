//! The operation log: every user/system action as a node in a
//! happens-before DAG, plus the linear projections that timestamp-based
//! systems impose on that DAG and the metrics for what those projections
//! destroy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::clock::{HybridTimestamp, LocalTimestamp, ReplicaId, TrueTime, VectorClock};

/// Document identifier.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DocId(pub String);

impl DocId {
    pub fn new(s: impl Into<String>) -> Self {
        DocId(s.into())
    }
}

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Message identifier.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MsgId(pub String);

impl MsgId {
    pub fn new(s: impl Into<String>) -> Self {
        MsgId(s.into())
    }
}

impl fmt::Display for MsgId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for MsgId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Mail folder name.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Folder(pub String);

impl Folder {
    pub fn new(s: impl Into<String>) -> Self {
        Folder(s.into())
    }

    pub fn inbox() -> Self {
        Folder("inbox".to_string())
    }
}

impl fmt::Display for Folder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Folder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Operation identity: issuing replica plus that replica's sequence number.
/// Unique per run; the ordering gives deterministic tie-breaks.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OpId {
    pub replica: ReplicaId,
    pub seq: u64,
}

impl OpId {
    pub fn new(replica: ReplicaId, seq: u64) -> Self {
        OpId { replica, seq }
    }
}

impl fmt::Display for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.replica, self.seq)
    }
}

impl fmt::Debug for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// The action vocabulary of both case studies: document edits and mailbox
/// operations, plus atomic groups.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OpKind {
    /// Create a document with initial paragraphs.
    CreateDoc { doc: DocId, paragraphs: Vec<String> },
    /// Replace one paragraph of a document.
    WriteDoc {
        doc: DocId,
        paragraph: usize,
        content: String,
    },
    /// Delete a document.
    DeleteDoc { doc: DocId },
    /// Mark a message read.
    MarkRead { msg: MsgId },
    /// Mark a message unread.
    MarkUnread { msg: MsgId },
    /// Move a message to a folder.
    Move { msg: MsgId, folder: Folder },
    /// Delete a message.
    DeleteMsg { msg: MsgId },
    /// Create a message, optionally as a reply.
    Compose {
        msg: MsgId,
        in_reply_to: Option<MsgId>,
    },
    /// Atomic group of plain operations; applied all-or-nothing.
    TxnGroup(Vec<OpKind>),
}

impl OpKind {
    /// Canonical single-token rendering used in trace records.
    pub fn canonical(&self) -> String {
        match self {
            OpKind::CreateDoc { doc, paragraphs } => {
                format!("CreateDoc({},{})", doc, paragraphs.len())
            }
            OpKind::WriteDoc {
                doc,
                paragraph,
                content,
            } => format!("WriteDoc({},{},{:?})", doc, paragraph, content),
            OpKind::DeleteDoc { doc } => format!("DeleteDoc({})", doc),
            OpKind::MarkRead { msg } => format!("MarkRead({})", msg),
            OpKind::MarkUnread { msg } => format!("MarkUnread({})", msg),
            OpKind::Move { msg, folder } => format!("Move({},{})", msg, folder),
            OpKind::DeleteMsg { msg } => format!("DeleteMsg({})", msg),
            OpKind::Compose { msg, in_reply_to } => match in_reply_to {
                Some(orig) => format!("Compose({},re:{})", msg, orig),
                None => format!("Compose({})", msg),
            },
            OpKind::TxnGroup(members) => {
                let inner: Vec<String> = members.iter().map(|m| m.canonical()).collect();
                format!("Txn[{}]", inner.join(";"))
            }
        }
    }

    /// Message targeted by this kind, if any (groups report none; members
    /// are inspected individually).
    pub fn msg_target(&self) -> Option<&MsgId> {
        match self {
            OpKind::MarkRead { msg }
            | OpKind::MarkUnread { msg }
            | OpKind::Move { msg, .. }
            | OpKind::DeleteMsg { msg }
            | OpKind::Compose { msg, .. } => Some(msg),
            _ => None,
        }
    }

    /// Document targeted by this kind, if any.
    pub fn doc_target(&self) -> Option<&DocId> {
        match self {
            OpKind::CreateDoc { doc, .. }
            | OpKind::WriteDoc { doc, .. }
            | OpKind::DeleteDoc { doc } => Some(doc),
            _ => None,
        }
    }

    /// Flattens a group into its members; a plain op yields itself.
    pub fn members(&self) -> Vec<&OpKind> {
        match self {
            OpKind::TxnGroup(members) => members.iter().collect(),
            other => vec![other],
        }
    }

    /// Every object this kind (including group members) touches.
    pub fn targets(&self) -> Vec<ObjectId> {
        let mut out = BTreeSet::new();
        for member in self.members() {
            if let Some(doc) = member.doc_target() {
                out.insert(ObjectId::Doc(doc.clone()));
            }
            if let Some(msg) = member.msg_target() {
                out.insert(ObjectId::Msg(msg.clone()));
            }
        }
        out.into_iter().collect()
    }
}

/// A document or a message: the unit on which replicas are compared.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ObjectId {
    Doc(DocId),
    Msg(MsgId),
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectId::Doc(d) => write!(f, "doc:{}", d),
            ObjectId::Msg(m) => write!(f, "msg:{}", m),
        }
    }
}

impl fmt::Debug for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// One recorded action with all of its temporal and causal metadata.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Operation {
    pub id: OpId,
    pub kind: OpKind,
    pub true_time: TrueTime,
    pub local_ts: LocalTimestamp,
    pub vclock: VectorClock,
    pub hybrid: HybridTimestamp,
    pub deps: BTreeSet<OpId>,
}

impl Operation {
    /// Resolution key for timestamp-based last-writer-wins: the reported
    /// wall reading, tie-broken by (replica, seq) so the order is total.
    pub fn lww_key(&self) -> (LocalTimestamp, ReplicaId, u64) {
        (self.local_ts, self.id.replica.clone(), self.id.seq)
    }

    /// Canonical line-delimited trace record. Field order is fixed:
    /// id, kind, true_time, local_ts, vclock, hybrid, deps.
    pub fn record_line(&self) -> String {
        let deps: Vec<String> = self.deps.iter().map(|d| d.to_string()).collect();
        format!(
            "op id={} kind={} true={} local={} vc={} hlc={} deps={{{}}}",
            self.id,
            self.kind.canonical(),
            self.true_time,
            self.local_ts,
            self.vclock.canonical(),
            self.hybrid,
            deps.join(",")
        )
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OplogError {
    #[error("duplicate operation id {0}")]
    DuplicateOp(OpId),
    #[error("operation {op} depends on unrecorded {dep}")]
    MissingDep { op: OpId, dep: OpId },
    #[error("unknown operation id {0}")]
    UnknownOp(OpId),
    #[error("operation {op} does not causally dominate dependency {dep}")]
    NonDominatingClock { op: OpId, dep: OpId },
    #[error("operation {op} is not later in true time than dependency {dep}")]
    NonMonotoneTrueTime { op: OpId, dep: OpId },
    #[error("chain does not cover the graph (chain {chain} nodes, graph {graph})")]
    CoverageMismatch { chain: usize, graph: usize },
}

/// Happens-before DAG over all recorded operations. Edges point from an
/// operation to each of its `deps`; reachability through those edges is
/// causal precedence. Ground truth for every detector.
#[derive(Clone, Debug, Default)]
pub struct CausalGraph {
    nodes: BTreeMap<OpId, Operation>,
    insertion: Vec<OpId>,
}

impl CausalGraph {
    pub fn new() -> Self {
        CausalGraph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: &OpId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn get(&self, id: &OpId) -> Option<&Operation> {
        self.nodes.get(id)
    }

    pub fn op(&self, id: &OpId) -> &Operation {
        &self.nodes[id]
    }

    /// Operations in recording order.
    pub fn ops_in_order(&self) -> impl Iterator<Item = &Operation> {
        self.insertion.iter().map(|id| &self.nodes[id])
    }

    /// Operations in id order.
    pub fn ops(&self) -> impl Iterator<Item = &Operation> {
        self.nodes.values()
    }

    /// Adds an operation, re-establishing the graph invariants: fresh id,
    /// recorded deps, dominating vector clock, and strictly later true time
    /// than every dependency. Acyclicity follows from those checks.
    pub fn record(&mut self, op: Operation) -> Result<(), OplogError> {
        if self.nodes.contains_key(&op.id) {
            return Err(OplogError::DuplicateOp(op.id));
        }
        for dep in &op.deps {
            let dep_op = self
                .nodes
                .get(dep)
                .ok_or_else(|| OplogError::MissingDep {
                    op: op.id.clone(),
                    dep: dep.clone(),
                })?;
            if !op.vclock.dominates(&dep_op.vclock) || op.vclock == dep_op.vclock {
                return Err(OplogError::NonDominatingClock {
                    op: op.id.clone(),
                    dep: dep.clone(),
                });
            }
            if op.true_time <= dep_op.true_time {
                return Err(OplogError::NonMonotoneTrueTime {
                    op: op.id.clone(),
                    dep: dep.clone(),
                });
            }
        }
        self.insertion.push(op.id.clone());
        self.nodes.insert(op.id.clone(), op);
        Ok(())
    }

    /// The deps-closure of `id`: every operation causally before it.
    /// `id` itself is not included.
    pub fn ancestors(&self, id: &OpId) -> BTreeSet<OpId> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<&OpId> = match self.nodes.get(id) {
            Some(op) => op.deps.iter().collect(),
            None => Vec::new(),
        };
        while let Some(next) = stack.pop() {
            if seen.insert(next.clone()) {
                if let Some(op) = self.nodes.get(next) {
                    stack.extend(op.deps.iter());
                }
            }
        }
        seen
    }

    /// True iff `a` causally precedes `b` (strict: never true for a == b).
    pub fn happens_before(&self, a: &OpId, b: &OpId) -> Result<bool, OplogError> {
        if !self.nodes.contains_key(a) {
            return Err(OplogError::UnknownOp(a.clone()));
        }
        if !self.nodes.contains_key(b) {
            return Err(OplogError::UnknownOp(b.clone()));
        }
        if a == b {
            return Ok(false);
        }
        // walk b's dependency closure looking for a
        let mut seen: BTreeSet<&OpId> = BTreeSet::new();
        let mut stack: Vec<&OpId> = self.nodes[b].deps.iter().collect();
        while let Some(next) = stack.pop() {
            if next == a {
                return Ok(true);
            }
            if seen.insert(next) {
                stack.extend(self.nodes[next].deps.iter());
            }
        }
        Ok(false)
    }

    /// Number of unordered (concurrent) node pairs — the pairs any linear
    /// chain must fabricate an order for.
    pub fn projection_loss(&self) -> u64 {
        let ids: Vec<&OpId> = self.nodes.keys().collect();
        let closure = self.transitive_closure(&ids);
        let n = ids.len();
        let mut loss = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                if !closure[i][j] && !closure[j][i] {
                    loss += 1;
                }
            }
        }
        loss
    }

    fn transitive_closure(&self, ids: &[&OpId]) -> Vec<Vec<bool>> {
        let index: BTreeMap<&OpId, usize> =
            ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let n = ids.len();
        let mut reach = vec![vec![false; n]; n];
        for (j, id) in ids.iter().enumerate() {
            for dep in &self.nodes[*id].deps {
                reach[index[dep]][j] = true;
            }
        }
        for k in 0..n {
            for i in 0..n {
                if reach[i][k] {
                    for j in 0..n {
                        if reach[k][j] {
                            reach[i][j] = true;
                        }
                    }
                }
            }
        }
        reach
    }
}

/// Sort key for projecting the DAG onto a line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionKey {
    ByLocalTimestamp,
    ByHybrid,
    ByTrueTime,
}

impl fmt::Display for ProjectionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ProjectionKey::ByLocalTimestamp => "by-local-timestamp",
            ProjectionKey::ByHybrid => "by-hybrid",
            ProjectionKey::ByTrueTime => "by-true-time",
        };
        f.write_str(s)
    }
}

/// A total order imposed on the graph's nodes by one sort key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinearChain {
    pub order: Vec<OpId>,
    pub key: ProjectionKey,
}

/// Projects the graph onto a line by the chosen key. Ties break by
/// (key, replica-id, seq), so the chain is total and deterministic.
pub fn linear_projection(graph: &CausalGraph, key: ProjectionKey) -> LinearChain {
    let mut order: Vec<OpId> = graph.ops().map(|op| op.id.clone()).collect();
    order.sort_by(|a, b| {
        let oa = graph.op(a);
        let ob = graph.op(b);
        let primary = match key {
            ProjectionKey::ByLocalTimestamp => oa.local_ts.cmp(&ob.local_ts),
            ProjectionKey::ByHybrid => oa.hybrid.cmp(&ob.hybrid),
            ProjectionKey::ByTrueTime => oa.true_time.cmp(&ob.true_time),
        };
        primary.then_with(|| a.cmp(b))
    });
    LinearChain { order, key }
}

/// All causally ordered pairs that the chain presents in the wrong order:
/// `(a, b)` with a happens-before b but b earlier in the chain.
pub fn detect_inversions(
    graph: &CausalGraph,
    chain: &LinearChain,
) -> Result<Vec<(OpId, OpId)>, OplogError> {
    if chain.order.len() != graph.len()
        || chain.order.iter().any(|id| !graph.contains(id))
    {
        return Err(OplogError::CoverageMismatch {
            chain: chain.order.len(),
            graph: graph.len(),
        });
    }
    let mut inversions = Vec::new();
    for (pos_b, b) in chain.order.iter().enumerate() {
        for a in chain.order.iter().skip(pos_b + 1) {
            // a appears after b in the chain; inversion iff a precedes b causally
            if graph.happens_before(a, b)? {
                inversions.push((a.clone(), b.clone()));
            }
        }
    }
    inversions.sort();
    Ok(inversions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::GraphBuilder;

    fn oid(r: &str, seq: u64) -> OpId {
        OpId::new(ReplicaId::new(r), seq)
    }

    #[test]
    fn record_rejects_missing_dep_and_duplicate() {
        let mut b = GraphBuilder::new();
        let a = b.node("A", &[]);
        let err = b.try_node_with_deps("B", &[oid("ghost", 1)]).unwrap_err();
        assert!(matches!(err, OplogError::MissingDep { .. }));
        let dup = b.op_like(&a);
        assert_eq!(
            b.graph_mut().record(dup).unwrap_err(),
            OplogError::DuplicateOp(a)
        );
    }

    #[test]
    fn record_builds_chain() {
        let mut b = GraphBuilder::new();
        let a = b.node("A", &[]);
        let c = b.node("A", &[a.clone()]);
        assert_eq!(b.graph().len(), 2);
        assert!(b.graph().happens_before(&a, &c).unwrap());
    }

    #[test]
    fn happens_before_transitive_irreflexive_concurrent() {
        let mut b = GraphBuilder::new();
        let a = b.node("A", &[]);
        let x = b.node("B", &[a.clone()]);
        let y = b.node("C", &[a.clone()]);
        let d = b.node("D", &[x.clone(), y.clone()]);
        let g = b.graph();
        assert!(g.happens_before(&a, &d).unwrap());
        assert!(!g.happens_before(&a, &a).unwrap());
        assert!(!g.happens_before(&x, &y).unwrap());
        assert!(!g.happens_before(&y, &x).unwrap());
        assert!(matches!(
            g.happens_before(&oid("nope", 9), &a),
            Err(OplogError::UnknownOp(_))
        ));
    }

    #[test]
    fn projection_loss_counts_concurrent_pairs() {
        // chain: zero loss
        let mut b = GraphBuilder::new();
        let a = b.node("A", &[]);
        let c = b.node("A", &[a.clone()]);
        let _d = b.node("A", &[c.clone()]);
        assert_eq!(b.graph().projection_loss(), 0);

        // antichain of 3: C(3,2) = 3
        let mut b = GraphBuilder::new();
        b.node("A", &[]);
        b.node("B", &[]);
        b.node("C", &[]);
        assert_eq!(b.graph().projection_loss(), 3);

        // diamond: only the two middle nodes are unordered
        let mut b = GraphBuilder::new();
        let a = b.node("A", &[]);
        let x = b.node("B", &[a.clone()]);
        let y = b.node("C", &[a.clone()]);
        b.node("D", &[x, y]);
        assert_eq!(b.graph().projection_loss(), 1);
    }

    #[test]
    fn projection_tie_break_is_replica_then_seq() {
        let mut b = GraphBuilder::new();
        let a = b.node_at("A", &[], 10, 100);
        let c = b.node_at("B", &[], 20, 100); // same local_ts
        let chain = linear_projection(b.graph(), ProjectionKey::ByLocalTimestamp);
        assert_eq!(chain.order, vec![a, c]);
    }

    #[test]
    fn true_time_projection_is_inversion_free() {
        let mut b = GraphBuilder::new();
        let a = b.node_at("A", &[], 10, 500);
        let c = b.node_at("A", &[a], 20, 400); // local clock stepped back
        let g = b.graph();
        let by_true = linear_projection(g, ProjectionKey::ByTrueTime);
        assert!(detect_inversions(g, &by_true).unwrap().is_empty());
        let by_local = linear_projection(g, ProjectionKey::ByLocalTimestamp);
        assert_eq!(detect_inversions(g, &by_local).unwrap().len(), 1);
    }

    #[test]
    fn detect_inversions_requires_coverage() {
        let mut b = GraphBuilder::new();
        b.node("A", &[]);
        b.node("B", &[]);
        let chain = LinearChain {
            order: vec![],
            key: ProjectionKey::ByTrueTime,
        };
        assert!(matches!(
            detect_inversions(b.graph(), &chain),
            Err(OplogError::CoverageMismatch { .. })
        ));
    }

    #[test]
    fn empty_graph_has_no_inversions() {
        let g = CausalGraph::new();
        let chain = LinearChain {
            order: vec![],
            key: ProjectionKey::ByLocalTimestamp,
        };
        assert!(detect_inversions(&g, &chain).unwrap().is_empty());
    }
}
