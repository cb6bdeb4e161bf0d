//! Report emission: one deterministic, human-readable account of a run —
//! findings, the four-condition verdict with evidence, convergence, and
//! the information-loss numbers — followed by a machine-readable block.
//! Regenerating from the same trace yields identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::detect::{Finding, FitoVerdict, Pathology};
use crate::oplog::{detect_inversions, linear_projection, ProjectionKey};
use crate::sim::Trace;

/// Counts by pathology, in enum order.
pub fn finding_counts(findings: &[Finding]) -> BTreeMap<Pathology, usize> {
    let mut out = BTreeMap::new();
    for f in findings {
        *out.entry(f.pathology).or_insert(0) += 1;
    }
    out
}

/// Renders the full report for one completed run.
pub fn emit_report(trace: &Trace, findings: &[Finding], verdict: &FitoVerdict) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "== synclab run report ==");
    let _ = writeln!(out, "scenario:        {}", trace.scenario);
    let _ = writeln!(out, "strategy:        {}", trace.strategy);
    let _ = writeln!(out, "signal mode:     {}", trace.mode);
    let _ = writeln!(out, "causal delivery: {}", trace.causal_delivery);
    let _ = writeln!(out, "seed:            {}", trace.seed);
    let _ = writeln!(
        out,
        "terminal:        {} after {} events",
        if trace.quiescent {
            "quiescent"
        } else {
            "event budget exhausted"
        },
        trace.events_processed
    );
    let _ = writeln!(out);

    let _ = writeln!(out, "-- convergence --");
    for (id, snap) in &trace.finals {
        let _ = writeln!(out, "replica {} digest {}", id, snap.digest);
    }
    let _ = writeln!(
        out,
        "converged: {}",
        if trace.final_divergence() { "no" } else { "yes" }
    );
    let _ = writeln!(out);

    let _ = writeln!(out, "-- ordering --");
    let loss = trace.graph.projection_loss();
    let _ = writeln!(out, "operations: {}", trace.graph.len());
    let _ = writeln!(out, "projection-loss (concurrent pairs): {}", loss);
    if trace.graph.is_empty() {
        let _ = writeln!(out, "inversions by-local-timestamp: 0");
        let _ = writeln!(out, "inversions by-hybrid: 0");
    } else {
        for key in [ProjectionKey::ByLocalTimestamp, ProjectionKey::ByHybrid] {
            let chain = linear_projection(&trace.graph, key);
            let n = detect_inversions(&trace.graph, &chain)
                .map(|v| v.len())
                .unwrap_or(0);
            let _ = writeln!(out, "inversions {}: {}", key, n);
        }
    }
    let _ = writeln!(
        out,
        "conflict notifications: {}",
        trace.notifications.len()
    );
    let _ = writeln!(out);

    let _ = writeln!(out, "-- findings --");
    if findings.is_empty() {
        let _ = writeln!(out, "no findings");
    } else {
        for f in findings {
            let _ = writeln!(out, "{}", f);
        }
    }
    let _ = writeln!(out);

    let _ = writeln!(out, "-- failure-pattern verdict --");
    for (name, value, evidence) in verdict.lines(trace) {
        let _ = writeln!(out, "{:<22} {:<5} — {}", name, value, evidence);
    }
    let _ = writeln!(out, "pattern-present: {}", verdict.pattern_present());
    let _ = writeln!(out);

    let _ = writeln!(out, "[machine]");
    let _ = writeln!(out, "scenario={}", trace.scenario);
    let _ = writeln!(out, "strategy={}", trace.strategy);
    let _ = writeln!(out, "mode={}", trace.mode);
    let _ = writeln!(out, "causal-delivery={}", trace.causal_delivery);
    let _ = writeln!(out, "seed={}", trace.seed);
    let _ = writeln!(out, "quiescent={}", trace.quiescent);
    let _ = writeln!(out, "events={}", trace.events_processed);
    let _ = writeln!(out, "converged={}", !trace.final_divergence());
    let _ = writeln!(out, "projection-loss={}", loss);
    if trace.graph.is_empty() {
        let _ = writeln!(out, "inversions-local=0");
        let _ = writeln!(out, "inversions-hybrid=0");
    } else {
        let local = linear_projection(&trace.graph, ProjectionKey::ByLocalTimestamp);
        let hybrid = linear_projection(&trace.graph, ProjectionKey::ByHybrid);
        let _ = writeln!(
            out,
            "inversions-local={}",
            detect_inversions(&trace.graph, &local).map(|v| v.len()).unwrap_or(0)
        );
        let _ = writeln!(
            out,
            "inversions-hybrid={}",
            detect_inversions(&trace.graph, &hybrid).map(|v| v.len()).unwrap_or(0)
        );
    }
    let _ = writeln!(out, "notifications={}", trace.notifications.len());
    let _ = writeln!(out, "findings={}", findings.len());
    for (i, f) in findings.iter().enumerate() {
        let _ = writeln!(out, "finding.{}={}", i, f);
    }
    let _ = writeln!(
        out,
        "fito={}{}{}{}",
        verdict.forward_commitment as u8,
        verdict.absent_reflection as u8,
        verdict.completion_masquerade as u8,
        verdict.invisible_corruption as u8
    );
    let _ = writeln!(out, "pattern-present={}", verdict.pattern_present());
    let _ = writeln!(out, "[/machine]");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{classify_fito, detect_all};
    use crate::scenario::find_builtin;
    use crate::sim::{run_scenario, RunConfig, SignalMode};
    use crate::strategy::Strategy;

    #[test]
    fn report_regeneration_is_byte_identical() {
        let s = find_builtin("s1").unwrap();
        let cfg = RunConfig {
            strategy: Strategy::LwwTimestamp,
            mode: SignalMode::CompletionOnly,
            causal_delivery: false,
            seed: 0,
        };
        let t1 = run_scenario(&s, cfg.clone()).unwrap();
        let t2 = run_scenario(&s, cfg).unwrap();
        let f1 = detect_all(&t1);
        let f2 = detect_all(&t2);
        let r1 = emit_report(&t1, &f1, &classify_fito(&t1, &f1));
        let r2 = emit_report(&t2, &f2, &classify_fito(&t2, &f2));
        assert_eq!(r1, r2);
    }

    #[test]
    fn lww_report_names_the_discarded_origin() {
        let s = find_builtin("s1").unwrap();
        let trace = run_scenario(
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
        let report = emit_report(&trace, &findings, &classify_fito(&trace, &findings));
        // Alice's discarded paragraph edit is op alice:2.
        assert!(report.contains("alice:2"));
        assert!(report.contains("SilentDeletion"));
        assert!(report.contains("pattern-present: true"));
    }

    #[test]
    fn clean_run_reports_no_findings_section() {
        let s = find_builtin("s1").unwrap();
        let trace = run_scenario(
            &s,
            RunConfig {
                strategy: Strategy::MultiValueMaterialize,
                mode: SignalMode::ReflectedCommitment,
                causal_delivery: true,
                seed: 0,
            },
        )
        .unwrap();
        let findings = detect_all(&trace);
        let report = emit_report(&trace, &findings, &classify_fito(&trace, &findings));
        assert!(report.contains("no findings"));
        assert!(report.contains("pattern-present: false"));
        assert!(report.contains("fito=0000"));
    }
}
