//! The deterministic discrete-event engine: a star topology of replicas
//! around one relay server, delivery with latency, partitions and offline
//! parking, and the signaling switch that separates "the server has it"
//! (completion, T4) from "every device agrees about it" (commitment, T6).
//!
//! Identical (scenario, config) inputs produce byte-identical traces: every
//! queue and map iterates in a fixed order and randomness is only consulted
//! for optional latency jitter under a fixed seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::clock::{ClockModel, ReplicaId, TrueTime};
use crate::oplog::{CausalGraph, ObjectId, OpId, OpKind, Operation};
use crate::replica::{Replica, ReplicaError, RemoteOutcome, Snapshot, StateMachine};
use crate::scenario::{Directive, Scenario};
use crate::strategy::Strategy;

/// How long a stubborn client waits before re-asserting clobbered intent.
const REASSERT_DELAY_NS: i64 = 1_000_000_000;

/// Transaction phases relevant here: placement, the completion signal,
/// remote visibility, and acknowledged semantic commitment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum TransactionPhase {
    T3Placed,
    T4Completion,
    T5Visible,
    T6Commitment,
}

impl fmt::Display for TransactionPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TransactionPhase::T3Placed => "T3",
            TransactionPhase::T4Completion => "T4",
            TransactionPhase::T5Visible => "T5",
            TransactionPhase::T6Commitment => "T6",
        };
        f.write_str(s)
    }
}

/// Which phase emits the user-visible "Saved"/"Synced" signal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignalMode {
    /// Signal at T4, the instant the server holds the op — whether or not
    /// any other device agrees. The masquerade setting.
    CompletionOnly,
    /// Signal at T6, once every reachable replica has applied the op and
    /// the replicas agree on the op's target objects.
    ReflectedCommitment,
}

impl fmt::Display for SignalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SignalMode::CompletionOnly => "CompletionOnly",
            SignalMode::ReflectedCommitment => "ReflectedCommitment",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for SignalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "CompletionOnly" => Ok(SignalMode::CompletionOnly),
            "ReflectedCommitment" => Ok(SignalMode::ReflectedCommitment),
            other => Err(format!("unknown signal mode `{}`", other)),
        }
    }
}

/// One replica's link being cut from the server for an interval; an open
/// end means the cut is permanent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub replica: ReplicaId,
    pub start: TrueTime,
    pub end: Option<TrueTime>,
}

/// Star-topology network: per-replica latency to the server, optional
/// seeded jitter, and partition windows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkModel {
    pub default_latency_ns: i64,
    pub latency: BTreeMap<ReplicaId, i64>,
    pub jitter_ns: i64,
    pub partitions: Vec<Partition>,
}

impl Default for NetworkModel {
    fn default() -> Self {
        NetworkModel {
            default_latency_ns: 50_000_000,
            latency: BTreeMap::new(),
            jitter_ns: 0,
            partitions: Vec::new(),
        }
    }
}

impl NetworkModel {
    pub fn latency_for(&self, id: &ReplicaId) -> i64 {
        self.latency
            .get(id)
            .copied()
            .unwrap_or(self.default_latency_ns)
    }

    /// The partition covering `t` for this replica, if any.
    pub fn partition_at(&self, id: &ReplicaId, t: TrueTime) -> Option<&Partition> {
        self.partitions.iter().find(|p| {
            p.replica == *id && p.start <= t && p.end.map_or(true, |end| t < end)
        })
    }

    /// True when the replica is cut off from `t` onward with no end.
    pub fn permanently_partitioned(&self, id: &ReplicaId, t: TrueTime) -> bool {
        self.partitions
            .iter()
            .any(|p| p.replica == *id && p.start <= t && p.end.is_none())
    }
}

/// Queue payloads. User actions and connectivity changes come from the
/// script; deliveries, signals, and re-assertions are generated by the
/// engine itself.
#[derive(Clone, Debug)]
pub enum EventPayload {
    UserAction {
        replica: ReplicaId,
        kind: OpKind,
        reassert: bool,
    },
    Deliver {
        replica: ReplicaId,
        op: Operation,
    },
    ClockStep {
        replica: ReplicaId,
        jump_ns: i64,
    },
    Offline {
        replica: ReplicaId,
    },
    Online {
        replica: ReplicaId,
    },
    PartitionStart {
        replica: ReplicaId,
    },
    PartitionEnd {
        replica: ReplicaId,
    },
    Signal {
        replica: ReplicaId,
        phase: TransactionPhase,
        op: OpId,
    },
}

/// A user-visible (or placement-internal) signal as it was emitted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignalRecord {
    pub at: TrueTime,
    pub replica: ReplicaId,
    pub phase: TransactionPhase,
    pub op: OpId,
    /// Whether replicas disagreed about the op's target objects at the
    /// instant of emission.
    pub diverged: bool,
    /// False for placement bookkeeping under ReflectedCommitment, where T4
    /// shows no badge to the user.
    pub user_visible: bool,
}

/// One processed event, rendered for the trace file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub at: TrueTime,
    pub line: String,
}

/// Everything one run produced. Byte-identical across runs with identical
/// (scenario, config).
#[derive(Clone, Debug)]
pub struct Trace {
    pub scenario: String,
    pub strategy: Strategy,
    pub mode: SignalMode,
    pub causal_delivery: bool,
    pub seed: u64,
    pub events: Vec<TraceEvent>,
    pub graph: CausalGraph,
    pub final_states: BTreeMap<ReplicaId, StateMachine>,
    pub finals: BTreeMap<ReplicaId, Snapshot>,
    pub signals: Vec<SignalRecord>,
    pub notifications: Vec<(TrueTime, ReplicaId, ObjectId, String)>,
    /// Visible object state after each change, per (replica, object);
    /// consecutive duplicates collapsed. Feeds the flip-flop detector.
    pub object_timeline: BTreeMap<(ReplicaId, ObjectId), Vec<String>>,
    pub quiescent: bool,
    pub events_processed: u64,
}

impl Trace {
    /// Replicas disagreeing in their final snapshots?
    pub fn final_divergence(&self) -> bool {
        let mut digests = self.finals.values().map(|s| &s.digest);
        match digests.next() {
            Some(first) => digests.any(|d| d != first),
            None => false,
        }
    }

    /// The full trace file: header, events, op records, snapshots,
    /// signal log, terminal line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# synclab trace v1");
        let _ = writeln!(out, "scenario={}", self.scenario);
        let _ = writeln!(out, "strategy={}", self.strategy);
        let _ = writeln!(out, "mode={}", self.mode);
        let _ = writeln!(out, "causal-delivery={}", self.causal_delivery);
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "-- events --");
        for e in &self.events {
            let _ = writeln!(out, "t={} {}", e.at, e.line);
        }
        let _ = writeln!(out, "-- ops --");
        for op in self.graph.ops_in_order() {
            let _ = writeln!(out, "{}", op.record_line());
        }
        let _ = writeln!(out, "-- snapshots --");
        for (id, snap) in &self.finals {
            let _ = writeln!(out, "replica={} digest={}", id, snap.digest);
            for line in snap.canonical.lines() {
                let _ = writeln!(out, "  {}", line);
            }
        }
        let _ = writeln!(out, "-- signals --");
        for s in &self.signals {
            let _ = writeln!(
                out,
                "signal t={} phase={} replica={} op={} diverged={} visible={}",
                s.at, s.phase, s.replica, s.op, s.diverged, s.user_visible
            );
        }
        let _ = writeln!(out, "-- terminal --");
        let _ = writeln!(
            out,
            "quiescent={} events={} diverged={}",
            self.quiescent,
            self.events_processed,
            self.final_divergence()
        );
        out
    }
}

/// Per-run configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub strategy: Strategy,
    pub mode: SignalMode,
    pub causal_delivery: bool,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("replica {replica} at t={at}: {source}")]
    Action {
        replica: ReplicaId,
        at: TrueTime,
        source: ReplicaError,
    },
}

/// Commitment bookkeeping for one op under ReflectedCommitment.
#[derive(Clone, Debug)]
struct AckState {
    origin: ReplicaId,
    targets: Vec<ObjectId>,
    waiting: BTreeSet<ReplicaId>,
    /// Latest ack arrival at the server so far.
    max_ack: TrueTime,
    /// A T6 attempt event is queued and not yet resolved.
    attempt_queued: bool,
    signalled: bool,
}

/// The discrete-event simulator for one run.
pub struct Simulator {
    cfg: RunConfig,
    scenario: Scenario,
    queue: BTreeMap<(i64, u64), EventPayload>,
    next_seq: u64,
    now: TrueTime,
    replicas: BTreeMap<ReplicaId, Replica>,
    reassert_enabled: BTreeMap<ReplicaId, bool>,
    outstanding_reasserts: BTreeSet<(ReplicaId, ObjectId)>,
    /// Deliveries that arrived while the target was offline.
    parked: BTreeMap<ReplicaId, Vec<Operation>>,
    graph: CausalGraph,
    server_arrivals: u64,
    acks: BTreeMap<OpId, AckState>,
    rng: ChaCha8Rng,
    // trace accumulation
    events: Vec<TraceEvent>,
    signals: Vec<SignalRecord>,
    notifications: Vec<(TrueTime, ReplicaId, ObjectId, String)>,
    object_timeline: BTreeMap<(ReplicaId, ObjectId), Vec<String>>,
    events_processed: u64,
}

impl Simulator {
    pub fn new(scenario: &Scenario, cfg: RunConfig) -> Simulator {
        let mut replicas = BTreeMap::new();
        let mut reassert_enabled = BTreeMap::new();
        for spec in &scenario.replicas {
            let clock = ClockModel::new(spec.offset_ns, spec.drift_ppm);
            replicas.insert(
                spec.id.clone(),
                Replica::new(spec.id.clone(), clock, spec.online, cfg.strategy.clone()),
            );
            reassert_enabled.insert(spec.id.clone(), spec.reassert);
        }
        let mut sim = Simulator {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            scenario: scenario.clone(),
            queue: BTreeMap::new(),
            next_seq: 0,
            now: TrueTime::ZERO,
            replicas,
            reassert_enabled,
            outstanding_reasserts: BTreeSet::new(),
            parked: BTreeMap::new(),
            graph: CausalGraph::new(),
            server_arrivals: 0,
            acks: BTreeMap::new(),
            events: Vec::new(),
            signals: Vec::new(),
            notifications: Vec::new(),
            object_timeline: BTreeMap::new(),
            events_processed: 0,
        };
        for entry in &scenario.script {
            let payload = match &entry.directive {
                Directive::Action(kind) => EventPayload::UserAction {
                    replica: entry.replica.clone(),
                    kind: kind.clone(),
                    reassert: false,
                },
                Directive::Offline => EventPayload::Offline {
                    replica: entry.replica.clone(),
                },
                Directive::Online => EventPayload::Online {
                    replica: entry.replica.clone(),
                },
                Directive::ClockStep(jump) => EventPayload::ClockStep {
                    replica: entry.replica.clone(),
                    jump_ns: *jump,
                },
            };
            sim.schedule(entry.at, payload);
        }
        for p in &scenario.network.partitions {
            sim.schedule(
                p.start,
                EventPayload::PartitionStart {
                    replica: p.replica.clone(),
                },
            );
            if let Some(end) = p.end {
                sim.schedule(
                    end,
                    EventPayload::PartitionEnd {
                        replica: p.replica.clone(),
                    },
                );
            }
        }
        sim
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn events_processed(&self) -> u64 {
        self.events_processed
    }

    /// Current per-replica snapshots (for stepping callers that audit
    /// intermediate states).
    pub fn snapshots(&self) -> BTreeMap<ReplicaId, Snapshot> {
        self.replicas
            .iter()
            .map(|(id, r)| (id.clone(), r.snapshot()))
            .collect()
    }

    /// Current visible state of every replica.
    pub fn states(&self) -> BTreeMap<ReplicaId, &StateMachine> {
        self.replicas.iter().map(|(id, r)| (id.clone(), &r.state)).collect()
    }

    fn schedule(&mut self, at: TrueTime, payload: EventPayload) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.insert((at.0, seq), payload);
    }

    fn log(&mut self, line: String) {
        self.events.push(TraceEvent { at: self.now, line });
    }

    fn jitter(&mut self) -> i64 {
        if self.scenario.network.jitter_ns > 0 {
            self.rng.gen_range(0..=self.scenario.network.jitter_ns)
        } else {
            0
        }
    }

    /// Sends a freshly created (or drained) op toward the server. Placement
    /// happens one uplink latency later — delayed to the partition's end if
    /// the origin is currently cut off.
    fn emit_to_server(&mut self, origin: &ReplicaId, op: &Operation) {
        let start = match self.scenario.network.partition_at(origin, self.now) {
            Some(p) => match p.end {
                Some(end) => end,
                None => {
                    self.log(format!(
                        "drop op={} origin={} reason=permanent-partition",
                        op.id, origin
                    ));
                    return;
                }
            },
            None => self.now,
        };
        let arrival = start.plus(self.scenario.network.latency_for(origin) + self.jitter());
        self.schedule(
            arrival,
            EventPayload::Signal {
                replica: origin.clone(),
                phase: TransactionPhase::T4Completion,
                op: op.id.clone(),
            },
        );
    }

    /// Visible-state divergence across all replicas for the given objects.
    fn objects_diverged(&self, targets: &[ObjectId]) -> bool {
        for obj in targets {
            let mut digests = self
                .replicas
                .values()
                .map(|r| r.state.object_digest(obj));
            if let Some(first) = digests.next() {
                if digests.any(|d| d != first) {
                    return true;
                }
            }
        }
        false
    }

    fn record_object_states(&mut self, replica: &ReplicaId, changed: &[(ObjectId, String, String)]) {
        for (obj, _, after) in changed {
            let key = (replica.clone(), obj.clone());
            let timeline = self.object_timeline.entry(key).or_default();
            if timeline.last() != Some(after) {
                timeline.push(after.clone());
            }
        }
    }

    /// One discrete step: pop the earliest event and process it.
    pub fn step(&mut self) -> Result<(), SimError> {
        let (&(at_ns, seq), _) = self
            .queue
            .iter()
            .next()
            .expect("step requires a non-empty queue");
        let payload = self.queue.remove(&(at_ns, seq)).unwrap();
        debug_assert!(at_ns >= self.now.0, "event queue went back in time");
        self.now = TrueTime(at_ns);
        self.events_processed += 1;

        match payload {
            EventPayload::UserAction {
                replica,
                kind,
                reassert,
            } => self.handle_user_action(replica, kind, reassert)?,
            EventPayload::Deliver { replica, op } => self.handle_deliver(replica, op),
            EventPayload::ClockStep { replica, jump_ns } => {
                let r = self.replicas.get_mut(&replica).expect("declared replica");
                r.clock.add_step(self.now, jump_ns);
                self.log(format!("clock-step replica={} jump={}", replica, jump_ns));
            }
            EventPayload::Offline { replica } => {
                let r = self.replicas.get_mut(&replica).expect("declared replica");
                r.go_offline();
                self.log(format!("offline replica={}", replica));
            }
            EventPayload::Online { replica } => self.handle_online(replica),
            EventPayload::PartitionStart { replica } => {
                self.log(format!("partition-start replica={}", replica));
            }
            EventPayload::PartitionEnd { replica } => {
                self.log(format!("partition-end replica={}", replica));
            }
            EventPayload::Signal { replica, phase, op } => {
                self.handle_signal(replica, phase, op)
            }
        }

        if self.cfg.mode == SignalMode::ReflectedCommitment {
            self.sweep_commitments();
        }
        Ok(())
    }

    fn handle_user_action(
        &mut self,
        replica: ReplicaId,
        kind: OpKind,
        reassert: bool,
    ) -> Result<(), SimError> {
        if reassert {
            for obj in kind.targets() {
                self.outstanding_reasserts.remove(&(replica.clone(), obj));
            }
            // A re-assertion whose intent is already satisfied (or that is
            // no longer valid) quietly stands down.
            let r = &self.replicas[&replica];
            if r.intent_satisfied(&kind) {
                self.log(format!(
                    "reassert-skip replica={} kind={} reason=satisfied",
                    replica,
                    kind.canonical()
                ));
                return Ok(());
            }
        }
        let now = self.now;
        let r = self.replicas.get_mut(&replica).expect("declared replica");
        let result = r.apply_local(kind.clone(), now, &mut self.graph);
        let (op, effect) = match result {
            Ok(pair) => pair,
            Err(e) if reassert => {
                self.log(format!(
                    "reassert-skip replica={} kind={} reason={}",
                    replica,
                    kind.canonical(),
                    e
                ));
                return Ok(());
            }
            Err(e) => {
                return Err(SimError::Action {
                    replica,
                    at: now,
                    source: e,
                })
            }
        };
        let online = self.replicas[&replica].online;
        self.log(format!(
            "action replica={} op={} kind={} local={} phase={} reassert={} queued={}",
            replica,
            op.id,
            op.kind.canonical(),
            op.local_ts,
            TransactionPhase::T3Placed,
            reassert,
            !online
        ));
        for (obj, note) in &effect.notifications {
            self.notifications
                .push((self.now, replica.clone(), obj.clone(), note.clone()));
            self.log(format!(
                "notify replica={} object={} text={:?}",
                replica, obj, note
            ));
        }
        self.record_object_states(&replica, &effect.changed);
        if online {
            self.emit_to_server(&replica, &op);
        }
        Ok(())
    }

    fn handle_deliver(&mut self, replica: ReplicaId, op: Operation) {
        // Connectivity checks happen at the moment of arrival.
        if !self.replicas[&replica].online {
            self.log(format!(
                "deliver replica={} op={} outcome=parked-offline",
                replica, op.id
            ));
            self.parked.entry(replica).or_default().push(op);
            return;
        }
        if let Some(p) = self.scenario.network.partition_at(&replica, self.now) {
            match p.end {
                Some(end) => {
                    self.log(format!(
                        "deliver replica={} op={} outcome=requeued-at-partition-end t={}",
                        replica, op.id, end
                    ));
                    self.schedule(
                        end,
                        EventPayload::Deliver {
                            replica,
                            op,
                        },
                    );
                }
                None => {
                    self.log(format!(
                        "deliver replica={} op={} outcome=dropped-permanent-partition",
                        replica, op.id
                    ));
                }
            }
            return;
        }
        self.apply_delivery(replica, op);
    }

    fn apply_delivery(&mut self, replica: ReplicaId, op: Operation) {
        let now = self.now;
        let causal = self.cfg.causal_delivery;
        let outcome = {
            let r = self.replicas.get_mut(&replica).expect("declared replica");
            r.apply_remote(&op, now, &self.graph, causal)
        };
        match outcome {
            RemoteOutcome::Duplicate => {
                self.log(format!(
                    "deliver replica={} op={} outcome=duplicate-noop",
                    replica, op.id
                ));
            }
            RemoteOutcome::Buffered => {
                self.log(format!(
                    "deliver replica={} op={} outcome=buffered-missing-deps",
                    replica, op.id
                ));
            }
            RemoteOutcome::Applied(applied) => {
                for (op_id, effect) in applied {
                    let ack_eta = now.plus(self.scenario.network.latency_for(&replica));
                    self.log(format!(
                        "apply replica={} op={} phase={} ack-eta={}",
                        replica,
                        op_id,
                        TransactionPhase::T5Visible,
                        ack_eta
                    ));
                    for (obj, note) in &effect.notifications {
                        self.notifications
                            .push((self.now, replica.clone(), obj.clone(), note.clone()));
                        self.log(format!(
                            "notify replica={} object={} text={:?}",
                            replica, obj, note
                        ));
                    }
                    self.record_object_states(&replica, &effect.changed);
                    if self.cfg.mode == SignalMode::ReflectedCommitment {
                        if let Some(ack) = self.acks.get_mut(&op_id) {
                            if ack.waiting.remove(&replica) {
                                ack.max_ack = ack.max_ack.max(ack_eta);
                            }
                        }
                    }
                    self.consider_reassert(&replica, &op_id, &effect.changed);
                }
            }
        }
    }

    /// A stubborn client re-asserts its user's intent when a remote apply
    /// flipped an object against it. Causality-aware clients first check
    /// whether the incoming op had observed their own latest op on that
    /// object — a justified overwrite is accepted.
    fn consider_reassert(
        &mut self,
        replica: &ReplicaId,
        applied_op: &OpId,
        changed: &[(ObjectId, String, String)],
    ) {
        if !self.reassert_enabled.get(replica).copied().unwrap_or(false) {
            return;
        }
        if applied_op.replica == *replica {
            return;
        }
        let mut to_schedule = Vec::new();
        {
            let r = &self.replicas[replica];
            for (obj, _, _) in changed {
                let intent = match r.user_intent.get(obj) {
                    Some(k) => k.clone(),
                    None => continue,
                };
                if r.intent_satisfied(&intent) {
                    continue;
                }
                if self.cfg.strategy.causality_aware() {
                    if let Some(own) = r.own_last_op.get(obj) {
                        if self
                            .graph
                            .happens_before(own, applied_op)
                            .unwrap_or(false)
                        {
                            // The overwrite saw our op; stand down.
                            continue;
                        }
                    }
                }
                let key = (replica.clone(), obj.clone());
                if self.outstanding_reasserts.contains(&key) {
                    continue;
                }
                to_schedule.push((key, obj.clone(), intent));
            }
        }
        for (key, obj, intent) in to_schedule {
            self.outstanding_reasserts.insert(key);
            let at = self.now.plus(REASSERT_DELAY_NS);
            self.log(format!(
                "reassert-scheduled replica={} object={} kind={} at={}",
                replica,
                obj,
                intent.canonical(),
                at
            ));
            self.schedule(
                at,
                EventPayload::UserAction {
                    replica: replica.clone(),
                    kind: intent,
                    reassert: true,
                },
            );
        }
    }

    fn handle_online(&mut self, replica: ReplicaId) {
        let drained = {
            let r = self.replicas.get_mut(&replica).expect("declared replica");
            r.go_online();
            r.drain().expect("online replica drains")
        };
        self.log(format!(
            "online replica={} drained={}",
            replica,
            drained.len()
        ));
        for op in &drained {
            self.emit_to_server(&replica, op);
        }
        // Parked deliveries flush in their arrival order.
        let parked = self.parked.remove(&replica).unwrap_or_default();
        for op in parked {
            self.log(format!(
                "deliver-replay replica={} op={} outcome=unparked",
                replica, op.id
            ));
            self.schedule(
                self.now,
                EventPayload::Deliver {
                    replica: replica.clone(),
                    op,
                },
            );
        }
    }

    fn handle_signal(&mut self, replica: ReplicaId, phase: TransactionPhase, op_id: OpId) {
        match phase {
            TransactionPhase::T4Completion => self.handle_placement(replica, op_id),
            TransactionPhase::T6Commitment => self.attempt_commitment(replica, op_id),
            _ => {}
        }
    }

    /// The op reaches the server: assign the arrival index, fan out to
    /// peers, and — under CompletionOnly — emit the user-visible signal
    /// right now, recording whether replicas actually agreed.
    fn handle_placement(&mut self, origin: ReplicaId, op_id: OpId) {
        self.server_arrivals += 1;
        let arrival = self.server_arrivals;
        let op = self.graph.get(&op_id).expect("placed op is recorded").clone();
        self.log(format!(
            "place op={} origin={} arrival={} phase={}",
            op_id,
            origin,
            arrival,
            TransactionPhase::T4Completion
        ));

        let peers: Vec<ReplicaId> = self
            .replicas
            .keys()
            .filter(|id| **id != origin)
            .cloned()
            .collect();
        for peer in &peers {
            let at = self
                .now
                .plus(self.scenario.network.latency_for(peer) + self.jitter());
            self.schedule(
                at,
                EventPayload::Deliver {
                    replica: peer.clone(),
                    op: op.clone(),
                },
            );
        }

        match self.cfg.mode {
            SignalMode::CompletionOnly => {
                let diverged = self.objects_diverged(&op.kind.targets());
                self.signals.push(SignalRecord {
                    at: self.now,
                    replica: origin.clone(),
                    phase: TransactionPhase::T4Completion,
                    op: op_id.clone(),
                    diverged,
                    user_visible: true,
                });
                self.log(format!(
                    "signal phase={} replica={} op={} diverged={}",
                    TransactionPhase::T4Completion,
                    origin,
                    op_id,
                    diverged
                ));
            }
            SignalMode::ReflectedCommitment => {
                let waiting: BTreeSet<ReplicaId> = peers
                    .into_iter()
                    .filter(|p| {
                        !self
                            .scenario
                            .network
                            .permanently_partitioned(p, self.now)
                    })
                    .collect();
                self.acks.insert(
                    op_id.clone(),
                    AckState {
                        origin,
                        targets: op.kind.targets(),
                        waiting,
                        max_ack: self.now,
                        attempt_queued: false,
                        signalled: false,
                    },
                );
            }
        }
    }

    /// Queues T6 attempts for ops whose acks are all in and whose targets
    /// currently agree everywhere.
    fn sweep_commitments(&mut self) {
        let mut attempts = Vec::new();
        for (op_id, ack) in &self.acks {
            if ack.signalled || ack.attempt_queued || !ack.waiting.is_empty() {
                continue;
            }
            if !self.objects_diverged(&ack.targets) {
                attempts.push((op_id.clone(), ack.origin.clone(), ack.max_ack));
            }
        }
        for (op_id, origin, max_ack) in attempts {
            let at = self.now.max(max_ack);
            self.acks.get_mut(&op_id).unwrap().attempt_queued = true;
            self.schedule(
                at,
                EventPayload::Signal {
                    replica: origin,
                    phase: TransactionPhase::T6Commitment,
                    op: op_id,
                },
            );
        }
    }

    /// Emits the T6 signal if the gate still holds; otherwise re-arms. The
    /// emitted signal is sound by construction: agreement is re-verified at
    /// the instant of emission.
    fn attempt_commitment(&mut self, origin: ReplicaId, op_id: OpId) {
        let ack = match self.acks.get_mut(&op_id) {
            Some(a) => a,
            None => return,
        };
        ack.attempt_queued = false;
        if ack.signalled || !ack.waiting.is_empty() {
            return;
        }
        let targets = ack.targets.clone();
        if self.objects_diverged(&targets) {
            self.log(format!("t6-defer op={} reason=divergence", op_id));
            return;
        }
        let ack = self.acks.get_mut(&op_id).unwrap();
        ack.signalled = true;
        self.signals.push(SignalRecord {
            at: self.now,
            replica: origin.clone(),
            phase: TransactionPhase::T6Commitment,
            op: op_id.clone(),
            diverged: false,
            user_visible: true,
        });
        self.log(format!(
            "signal phase={} replica={} op={} diverged=false",
            TransactionPhase::T6Commitment,
            origin,
            op_id
        ));
    }

    /// Runs until the queue empties or the event budget is exhausted.
    pub fn run_until_quiescent(mut self, max_events: u64) -> Result<Trace, SimError> {
        assert!(max_events > 0, "max_events must be positive");
        let quiescent = loop {
            if self.queue.is_empty() {
                break true;
            }
            if self.events_processed >= max_events {
                break false;
            }
            self.step()?;
        };
        let final_states: BTreeMap<ReplicaId, StateMachine> = self
            .replicas
            .iter()
            .map(|(id, r)| (id.clone(), r.state.clone()))
            .collect();
        let finals: BTreeMap<ReplicaId, Snapshot> = self
            .replicas
            .iter()
            .map(|(id, r)| (id.clone(), r.snapshot()))
            .collect();
        Ok(Trace {
            scenario: self.scenario.name.clone(),
            strategy: self.cfg.strategy.clone(),
            mode: self.cfg.mode,
            causal_delivery: self.cfg.causal_delivery,
            seed: self.cfg.seed,
            events: self.events,
            graph: self.graph,
            final_states,
            finals,
            signals: self.signals,
            notifications: self.notifications,
            object_timeline: self.object_timeline,
            quiescent,
            events_processed: self.events_processed,
        })
    }
}

/// Convenience: build and run a scenario under one configuration.
pub fn run_scenario(scenario: &Scenario, cfg: RunConfig) -> Result<Trace, SimError> {
    let bound = scenario.quiescence_bound;
    Simulator::new(scenario, cfg).run_until_quiescent(bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{find_builtin, parse_scenario};

    fn cfg(strategy: Strategy, mode: SignalMode, causal: bool) -> RunConfig {
        RunConfig {
            strategy,
            mode,
            causal_delivery: causal,
            seed: 0,
        }
    }

    #[test]
    fn empty_scenario_is_immediately_quiescent() {
        let s = parse_scenario(
            "scenario empty\n[replicas]\nreplica a offset=0 drift=0 online\n[script]\n",
        )
        .unwrap();
        let trace = run_scenario(&s, cfg(Strategy::LwwTimestamp, SignalMode::CompletionOnly, false))
            .unwrap();
        assert!(trace.quiescent);
        assert!(trace.events.is_empty());
        assert!(trace.graph.is_empty());
        assert!(!trace.final_divergence());
    }

    #[test]
    fn s1_converges_lossily_under_lww_timestamp() {
        let s = find_builtin("s1").unwrap();
        let trace = run_scenario(&s, cfg(Strategy::LwwTimestamp, SignalMode::CompletionOnly, false))
            .unwrap();
        assert!(trace.quiescent);
        assert!(!trace.final_divergence());
        // Bob's later stamp wins everywhere; Alice's paragraph is gone.
        for snap in trace.finals.values() {
            assert!(snap.canonical.contains("bob rewrote paragraph seven"));
            assert!(!snap.canonical.contains("alice rewrote paragraph three"));
        }
        // A T4 signal was emitted while replicas diverged on the doc.
        assert!(trace
            .signals
            .iter()
            .any(|sig| sig.phase == TransactionPhase::T4Completion && sig.diverged));
        assert!(trace.notifications.is_empty());
    }

    #[test]
    fn s1_diverges_under_arrival_order_resolution() {
        let s = find_builtin("s1").unwrap();
        let trace = run_scenario(
            &s,
            cfg(Strategy::LwwServerArrival, SignalMode::CompletionOnly, false),
        )
        .unwrap();
        assert!(trace.quiescent);
        assert!(trace.final_divergence());
    }

    #[test]
    fn s1_multi_value_materializes_both_and_commits_at_t6() {
        let s = find_builtin("s1").unwrap();
        let trace = run_scenario(
            &s,
            cfg(
                Strategy::MultiValueMaterialize,
                SignalMode::ReflectedCommitment,
                true,
            ),
        )
        .unwrap();
        assert!(trace.quiescent);
        assert!(!trace.final_divergence());
        for snap in trace.finals.values() {
            assert!(snap.canonical.contains("alice rewrote paragraph three"));
            assert!(snap.canonical.contains("bob rewrote paragraph seven"));
        }
        assert!(!trace.notifications.is_empty());
        // no T4 badge in this mode; T6 signals exist and are sound
        assert!(trace.signals.iter().all(|s| s.user_visible));
        assert!(trace
            .signals
            .iter()
            .any(|s| s.phase == TransactionPhase::T6Commitment));
        assert!(trace.signals.iter().all(|s| !s.diverged));
    }

    #[test]
    fn s1_semantic_merge_keeps_both_edits_in_one_version() {
        let s = find_builtin("s1").unwrap();
        let trace = run_scenario(
            &s,
            cfg(Strategy::SemanticMerge, SignalMode::ReflectedCommitment, true),
        )
        .unwrap();
        assert!(trace.quiescent);
        assert!(!trace.final_divergence());
        for snap in trace.finals.values() {
            assert!(snap.canonical.contains("alice rewrote paragraph three"));
            assert!(snap.canonical.contains("bob rewrote paragraph seven"));
            assert!(snap.canonical.contains("versions=1"));
        }
    }

    #[test]
    fn s3_phantom_under_lww_cured_by_convergent_sets() {
        let s = find_builtin("s3").unwrap();
        let lww = run_scenario(&s, cfg(Strategy::LwwTimestamp, SignalMode::CompletionOnly, false))
            .unwrap();
        assert!(lww.quiescent);
        for snap in lww.finals.values() {
            assert!(snap.canonical.contains("msg m1"), "m1 should reappear");
            assert!(snap.canonical.contains("msg m2"), "m2 should reappear");
        }
        let fixed = run_scenario(
            &s,
            cfg(Strategy::ConvergentSets, SignalMode::ReflectedCommitment, true),
        )
        .unwrap();
        assert!(fixed.quiescent);
        assert!(!fixed.final_divergence());
        for snap in fixed.finals.values() {
            assert!(!snap.canonical.contains("msg m1"), "tombstone must hold");
            assert!(!snap.canonical.contains("msg m2"));
        }
    }

    #[test]
    fn s6_flipflops_forever_under_lww_but_settles_under_or_sets() {
        let s = find_builtin("s6").unwrap();
        let lww = run_scenario(&s, cfg(Strategy::LwwTimestamp, SignalMode::CompletionOnly, false))
            .unwrap();
        assert!(!lww.quiescent, "stubborn LWW clients must not settle");
        let fixed = run_scenario(
            &s,
            cfg(Strategy::ConvergentSets, SignalMode::ReflectedCommitment, true),
        )
        .unwrap();
        assert!(fixed.quiescent);
        assert!(!fixed.final_divergence());
        // user b's observing un-read wins the argument
        for snap in fixed.finals.values() {
            assert!(snap.canonical.contains("read=false"));
        }
    }

    #[test]
    fn deliver_requeues_at_partition_end() {
        let text = "scenario part\n[replicas]\nreplica a offset=0 drift=0 online\nreplica b offset=0 drift=0 online\n[network]\ndefault-latency 50ms\npartition b 1s..10s\n[script]\nat 2s a compose m1\n";
        let s = parse_scenario(text).unwrap();
        let trace = run_scenario(&s, cfg(Strategy::ConvergentSets, SignalMode::CompletionOnly, false))
            .unwrap();
        assert!(trace.quiescent);
        let requeue = trace
            .events
            .iter()
            .find(|e| e.line.contains("requeued-at-partition-end"))
            .expect("delivery must hit the partition");
        assert!(requeue.line.contains("t=10000000000"));
        // applied after the partition lifted
        let apply = trace
            .events
            .iter()
            .find(|e| e.line.contains("apply replica=b"))
            .unwrap();
        assert_eq!(apply.at, TrueTime::from_secs(10));
        assert!(!trace.final_divergence());
    }

    #[test]
    fn identical_runs_produce_identical_traces() {
        let s = find_builtin("s2").unwrap();
        let a = run_scenario(&s, cfg(Strategy::LwwTimestamp, SignalMode::CompletionOnly, false))
            .unwrap();
        let b = run_scenario(&s, cfg(Strategy::LwwTimestamp, SignalMode::CompletionOnly, false))
            .unwrap();
        assert_eq!(a.render(), b.render());
    }

    #[test]
    fn trace_true_time_is_monotone() {
        let s = find_builtin("s3").unwrap();
        let trace = run_scenario(&s, cfg(Strategy::LwwTimestamp, SignalMode::CompletionOnly, false))
            .unwrap();
        let mut prev = TrueTime::ZERO;
        for e in &trace.events {
            assert!(e.at >= prev);
            prev = e.at;
        }
    }
}
