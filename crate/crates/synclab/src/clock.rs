//! Time primitives: ground-truth simulation time, per-device wall clocks,
//! vector clocks, and hybrid logical timestamps.
//!
//! `TrueTime` is the simulator's private notion of "when something really
//! happened". Replicas never see it; they see `LocalTimestamp`s produced by
//! their own `ClockModel`, which may be offset, drifting, or stepped.
//! `VectorClock` and `HybridTimestamp` are the causality-tracking
//! alternatives that replicas are allowed to consult.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

pub const NANOS_PER_SEC: i64 = 1_000_000_000;
pub const NANOS_PER_MILLI: i64 = 1_000_000;

/// Identifier of one device/replica. Ordered so that tie-breaks and map
/// iteration are deterministic.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReplicaId(pub String);

impl ReplicaId {
    pub fn new(name: impl Into<String>) -> Self {
        ReplicaId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Ground-truth instant, nanoseconds since the simulation epoch.
///
/// Only the simulator and the detectors may look at this; strategies and
/// replica logic must order events by other means.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TrueTime(pub i64);

impl TrueTime {
    pub const ZERO: TrueTime = TrueTime(0);

    pub fn from_secs(s: i64) -> Self {
        TrueTime(s * NANOS_PER_SEC)
    }

    pub fn from_millis(ms: i64) -> Self {
        TrueTime(ms * NANOS_PER_MILLI)
    }

    pub fn nanos(self) -> i64 {
        self.0
    }

    pub fn plus(self, delta_ns: i64) -> Self {
        TrueTime(self.0 + delta_ns)
    }
}

impl fmt::Display for TrueTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Debug for TrueTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "true:{}", self.0)
    }
}

/// Wall-clock reading reported by one device, nanoseconds since epoch.
///
/// Unlike `TrueTime` this is not monotone across devices, and after a step
/// event it need not be monotone even within one device.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct LocalTimestamp(pub i64);

impl LocalTimestamp {
    pub fn from_secs(s: i64) -> Self {
        LocalTimestamp(s * NANOS_PER_SEC)
    }

    pub fn nanos(self) -> i64 {
        self.0
    }
}

impl fmt::Display for LocalTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Debug for LocalTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "local:{}", self.0)
    }
}

/// Deterministic model of one device's wall clock.
///
/// The reported reading for ground-truth instant `t` is
/// `t + offset + drift_ppm * t / 10^6 + sum of steps triggered at or before t`.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ClockModel {
    /// Constant offset in nanoseconds (positive: clock runs ahead).
    pub offset_ns: i64,
    /// Linear drift in parts per million of elapsed true time.
    pub drift_ppm: i64,
    /// Discrete jumps: at each trigger instant the reported clock moves by
    /// the signed amount. Kept sorted by trigger time.
    pub steps: Vec<(TrueTime, i64)>,
}

impl ClockModel {
    pub fn new(offset_ns: i64, drift_ppm: i64) -> Self {
        ClockModel {
            offset_ns,
            drift_ppm,
            steps: Vec::new(),
        }
    }

    /// Registers a step event. Steps may be added mid-run (an NTP jump);
    /// ordering is preserved.
    pub fn add_step(&mut self, at: TrueTime, jump_ns: i64) {
        self.steps.push((at, jump_ns));
        self.steps.sort_by_key(|(t, _)| *t);
    }
}

/// Reads the device clock at ground-truth instant `t`. Pure; the same
/// `(model, t)` always yields the same reading.
pub fn local_now(model: &ClockModel, t: TrueTime) -> LocalTimestamp {
    let drift = (t.0 as i128 * model.drift_ppm as i128 / 1_000_000) as i64;
    let steps: i64 = model
        .steps
        .iter()
        .filter(|(at, _)| *at <= t)
        .map(|(_, jump)| *jump)
        .sum();
    LocalTimestamp(t.0 + model.offset_ns + drift + steps)
}

/// Outcome of comparing two points in a causal history.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CausalOrdering {
    Before,
    After,
    Equal,
    Concurrent,
}

impl fmt::Display for CausalOrdering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CausalOrdering::Before => "before",
            CausalOrdering::After => "after",
            CausalOrdering::Equal => "equal",
            CausalOrdering::Concurrent => "concurrent",
        };
        f.write_str(s)
    }
}

/// Per-replica event counters. Canonical form: zero entries are never
/// stored, so structural equality coincides with semantic equality.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct VectorClock {
    entries: BTreeMap<ReplicaId, u64>,
}

impl VectorClock {
    pub fn new() -> Self {
        VectorClock::default()
    }

    pub fn get(&self, id: &ReplicaId) -> u64 {
        self.entries.get(id).copied().unwrap_or(0)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&ReplicaId, u64)> {
        self.entries.iter().map(|(k, v)| (k, *v))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Returns a copy with `id`'s counter advanced by one. The input is
    /// untouched. Counter overflow means the scenario is far beyond desk
    /// scale and is treated as fatal.
    #[must_use]
    pub fn incremented(&self, id: &ReplicaId) -> VectorClock {
        let mut out = self.clone();
        let counter = out.entries.entry(id.clone()).or_insert(0);
        *counter = counter
            .checked_add(1)
            .expect("vector clock counter overflow: scenario too large");
        out
    }

    /// Pointwise maximum of the two clocks, in canonical form.
    #[must_use]
    pub fn merged(&self, other: &VectorClock) -> VectorClock {
        let mut out = self.clone();
        for (id, n) in &other.entries {
            let counter = out.entries.entry(id.clone()).or_insert(0);
            *counter = (*counter).max(*n);
        }
        out
    }

    /// Causal comparison: `Before` iff self ≤ other pointwise and differs,
    /// `Concurrent` iff the clocks are incomparable.
    pub fn compare(&self, other: &VectorClock) -> CausalOrdering {
        let mut self_exceeds = false;
        let mut other_exceeds = false;
        for id in self.entries.keys().chain(other.entries.keys()) {
            let a = self.get(id);
            let b = other.get(id);
            match a.cmp(&b) {
                Ordering::Greater => self_exceeds = true,
                Ordering::Less => other_exceeds = true,
                Ordering::Equal => {}
            }
        }
        match (self_exceeds, other_exceeds) {
            (false, false) => CausalOrdering::Equal,
            (false, true) => CausalOrdering::Before,
            (true, false) => CausalOrdering::After,
            (true, true) => CausalOrdering::Concurrent,
        }
    }

    /// True iff self ≥ other pointwise (Equal or After).
    pub fn dominates(&self, other: &VectorClock) -> bool {
        matches!(
            self.compare(other),
            CausalOrdering::Equal | CausalOrdering::After
        )
    }

    /// True iff self strictly precedes other.
    pub fn before(&self, other: &VectorClock) -> bool {
        self.compare(other) == CausalOrdering::Before
    }

    /// Canonical `{a:1,b:2}` rendering used by trace records.
    pub fn canonical(&self) -> String {
        let body: Vec<String> = self
            .entries
            .iter()
            .map(|(id, n)| format!("{}:{}", id, n))
            .collect();
        format!("{{{}}}", body.join(","))
    }
}

impl fmt::Display for VectorClock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

impl fmt::Debug for VectorClock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Hybrid logical timestamp: a physical-ish component `l` (never behind the
/// largest wall reading the owner has seen) plus a tiebreak counter `c`.
/// Pairs order lexicographically.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct HybridTimestamp {
    pub l: i64,
    pub c: u32,
}

impl HybridTimestamp {
    pub fn new(l: i64, c: u32) -> Self {
        HybridTimestamp { l, c }
    }
}

impl fmt::Display for HybridTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.l, self.c)
    }
}

impl fmt::Debug for HybridTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Advances a replica's hybrid timestamp for a local or receive event.
///
/// `l' = max(h.l, local, received.l)`; the counter resets to zero when `l'`
/// strictly exceeds every input's logical component, otherwise it increments
/// past the largest counter among the inputs that share `l'`. The result is
/// strictly greater than `h` and than `received`.
pub fn hlc_tick(
    h: HybridTimestamp,
    local: LocalTimestamp,
    received: Option<HybridTimestamp>,
) -> HybridTimestamp {
    let received_l = received.map(|r| r.l);
    let l_new = h.l.max(local.0).max(received_l.unwrap_or(i64::MIN));
    let mut c_new: u32 = 0;
    if l_new == h.l {
        c_new = c_new.max(h.c + 1);
    }
    if received_l == Some(l_new) {
        c_new = c_new.max(received.unwrap().c + 1);
    }
    let out = HybridTimestamp { l: l_new, c: c_new };
    debug_assert!(out > h);
    if let Some(r) = received {
        debug_assert!(out > r);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rid(s: &str) -> ReplicaId {
        ReplicaId::new(s)
    }

    fn vc(pairs: &[(&str, u64)]) -> VectorClock {
        let mut out = VectorClock::new();
        for (id, n) in pairs {
            for _ in 0..*n {
                out = out.incremented(&rid(id));
            }
        }
        out
    }

    #[test]
    fn local_now_constant_offset() {
        // A device running three seconds fast reports +3s at epoch.
        let model = ClockModel::new(3 * NANOS_PER_SEC, 0);
        assert_eq!(
            local_now(&model, TrueTime::ZERO),
            LocalTimestamp::from_secs(3)
        );
    }

    #[test]
    fn local_now_identity_model() {
        let model = ClockModel::default();
        let t = TrueTime(123_456_789);
        assert_eq!(local_now(&model, t).0, 123_456_789);
    }

    #[test]
    fn local_now_drift_and_step() {
        // drift +100ppm, step -60s at t=10s, read at t=20s:
        // 20s + 2ms - 60s.
        let mut model = ClockModel::new(0, 100);
        model.add_step(TrueTime::from_secs(10), -60 * NANOS_PER_SEC);
        let got = local_now(&model, TrueTime::from_secs(20));
        let want = 20 * NANOS_PER_SEC + 2 * NANOS_PER_MILLI - 60 * NANOS_PER_SEC;
        assert_eq!(got.0, want);
    }

    #[test]
    fn local_now_step_applies_at_trigger_instant() {
        let mut model = ClockModel::new(0, 0);
        model.add_step(TrueTime::from_secs(10), 5);
        assert_eq!(local_now(&model, TrueTime(NANOS_PER_SEC * 10 - 1)).0, NANOS_PER_SEC * 10 - 1);
        assert_eq!(
            local_now(&model, TrueTime::from_secs(10)).0,
            10 * NANOS_PER_SEC + 5
        );
    }

    #[test]
    fn vc_increment_from_empty() {
        let out = VectorClock::new().incremented(&rid("A"));
        assert_eq!(out.get(&rid("A")), 1);
        assert_eq!(out.canonical(), "{A:1}");
    }

    #[test]
    fn vc_increment_existing_and_composed() {
        let base = vc(&[("A", 1), ("B", 2)]);
        let out = base.incremented(&rid("B"));
        assert_eq!(out.canonical(), "{A:1,B:3}");
        // input untouched
        assert_eq!(base.canonical(), "{A:1,B:2}");

        let twice = vc(&[("A", 1)]).incremented(&rid("A")).incremented(&rid("A"));
        assert_eq!(twice.canonical(), "{A:3}");
    }

    #[test]
    fn vc_merge_pointwise_max_and_identity() {
        assert_eq!(
            vc(&[("A", 1)]).merged(&vc(&[("B", 2)])).canonical(),
            "{A:1,B:2}"
        );
        assert_eq!(
            vc(&[("A", 3), ("B", 1)])
                .merged(&vc(&[("A", 1), ("B", 4)]))
                .canonical(),
            "{A:3,B:4}"
        );
        let x = vc(&[("A", 2), ("C", 1)]);
        assert_eq!(x.merged(&VectorClock::new()), x);
    }

    #[test]
    fn vc_compare_cases() {
        assert_eq!(
            VectorClock::new().compare(&VectorClock::new()),
            CausalOrdering::Equal
        );
        assert_eq!(
            vc(&[("A", 1)]).compare(&vc(&[("A", 1), ("B", 1)])),
            CausalOrdering::Before
        );
        assert_eq!(
            vc(&[("A", 1), ("B", 1)]).compare(&vc(&[("A", 1)])),
            CausalOrdering::After
        );
        assert_eq!(
            vc(&[("A", 2)]).compare(&vc(&[("B", 1)])),
            CausalOrdering::Concurrent
        );
    }

    #[test]
    fn hlc_same_physical_bumps_counter() {
        let out = hlc_tick(HybridTimestamp::new(100, 3), LocalTimestamp(100), None);
        assert_eq!(out, HybridTimestamp::new(100, 4));
    }

    #[test]
    fn hlc_physical_advance_resets_counter() {
        let out = hlc_tick(HybridTimestamp::new(100, 0), LocalTimestamp(200), None);
        assert_eq!(out, HybridTimestamp::new(200, 0));
    }

    #[test]
    fn hlc_receive_branch() {
        let out = hlc_tick(
            HybridTimestamp::new(100, 0),
            LocalTimestamp(90),
            Some(HybridTimestamp::new(150, 2)),
        );
        assert_eq!(out, HybridTimestamp::new(150, 3));
    }

    #[test]
    fn hlc_stays_ahead_of_backwards_wall_clock() {
        let mut h = HybridTimestamp::new(1_000, 0);
        // wall clock jumps back; hybrid keeps moving forward
        for local in [900, 800, 700] {
            let next = hlc_tick(h, LocalTimestamp(local), None);
            assert!(next > h);
            assert_eq!(next.l, 1_000);
            h = next;
        }
        assert_eq!(h.c, 3);
    }
}
