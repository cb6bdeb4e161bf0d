//! Command-line interface: run one scenario, list what's built in, sweep
//! the convergence oracle, or run the full scenario × strategy × mode
//! matrix.
//!
//! Exit codes: 0 for a clean run, 1 when `--expect-clean` was given and
//! findings surfaced (or a verify sweep failed), 2 for usage, parse, or
//! I/O errors.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::detect::{classify_fito, detect_all, Pathology};
use crate::oracle::{brute_force_converge, DEFAULT_MAX_OPS};
use crate::report::emit_report;
use crate::scenario::{builtin_scenarios, find_builtin, parse_scenario, Scenario};
use crate::sim::{run_scenario, RunConfig, SignalMode, Trace};
use crate::strategy::Strategy;

#[derive(Parser, Debug)]
#[command(name = "synclab")]
#[command(about = "Deterministic lab for multi-device sync conflict resolution")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario under one strategy and signal mode.
    Run {
        /// Built-in name (S1 .. S8, or full name) or path to a scenario file.
        #[arg(long)]
        scenario: String,
        /// LwwTimestamp, LwwServerArrival, MultiValueMaterialize,
        /// ConvergentSets, SemanticMerge, or Transactional(<inner>).
        #[arg(long)]
        strategy: String,
        /// CompletionOnly or ReflectedCommitment.
        #[arg(long)]
        mode: String,
        /// Buffer remote ops until their dependencies have applied.
        #[arg(long, default_value_t = false)]
        causal_delivery: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the full trace file here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the report here (it always prints to stdout).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Exit 1 if any finding surfaces.
        #[arg(long, default_value_t = false)]
        expect_clean: bool,
    },
    /// List built-in scenarios, strategies, and signal modes.
    List,
    /// Sweep the brute-force convergence oracle over the built-ins.
    Verify {
        #[arg(long)]
        strategy: String,
        /// Skip scenarios whose runs produce more operations than this.
        #[arg(long, default_value_t = DEFAULT_MAX_OPS)]
        max_ops: usize,
    },
    /// Run every built-in under every strategy and both signal modes.
    Matrix {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for per-run trace/report files plus matrix.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Entry point returning the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    match cli.command {
        Command::Run {
            scenario,
            strategy,
            mode,
            causal_delivery,
            seed,
            trace,
            report,
            expect_clean,
        } => cmd_run(
            &scenario,
            &strategy,
            &mode,
            causal_delivery,
            seed,
            trace,
            report,
            expect_clean,
        ),
        Command::List => cmd_list(),
        Command::Verify { strategy, max_ops } => cmd_verify(&strategy, max_ops),
        Command::Matrix { seed, out } => cmd_matrix(seed, out),
    }
}

fn load_scenario(name_or_path: &str) -> Result<Scenario, String> {
    if let Some(s) = find_builtin(name_or_path) {
        return Ok(s);
    }
    let path = PathBuf::from(name_or_path);
    if path.exists() {
        let text = fs::read_to_string(&path)
            .map_err(|e| format!("cannot read {}: {}", path.display(), e))?;
        return parse_scenario(&text).map_err(|e| format!("{}: {}", path.display(), e));
    }
    Err(format!(
        "unknown scenario `{}` (not a built-in, not a file)",
        name_or_path
    ))
}

fn parse_strategy(text: &str) -> Result<Strategy, String> {
    text.parse::<Strategy>().map_err(|e| e.to_string())
}

fn parse_mode(text: &str) -> Result<SignalMode, String> {
    text.parse::<SignalMode>()
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    scenario: &str,
    strategy: &str,
    mode: &str,
    causal_delivery: bool,
    seed: u64,
    trace_path: Option<PathBuf>,
    report_path: Option<PathBuf>,
    expect_clean: bool,
) -> i32 {
    let run = || -> Result<(Trace, String, usize), String> {
        let scenario = load_scenario(scenario)?;
        let strategy = parse_strategy(strategy)?;
        let mode = parse_mode(mode)?;
        let trace = run_scenario(
            &scenario,
            RunConfig {
                strategy,
                mode,
                causal_delivery,
                seed,
            },
        )
        .map_err(|e| e.to_string())?;
        let findings = detect_all(&trace);
        let verdict = classify_fito(&trace, &findings);
        let report = emit_report(&trace, &findings, &verdict);
        Ok((trace, report, findings.len()))
    };
    let (trace, report, finding_count) = match run() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}", e);
            return 2;
        }
    };
    if let Some(path) = trace_path {
        if let Err(e) = fs::write(&path, trace.render()) {
            eprintln!("error: cannot write {}: {}", path.display(), e);
            return 2;
        }
    }
    if let Some(path) = report_path {
        if let Err(e) = fs::write(&path, &report) {
            eprintln!("error: cannot write {}: {}", path.display(), e);
            return 2;
        }
    }
    print!("{}", report);
    if expect_clean && finding_count > 0 {
        1
    } else {
        0
    }
}

fn cmd_list() -> i32 {
    println!("built-in scenarios:");
    for (name, s) in builtin_scenarios() {
        println!(
            "  {:<24} {} replicas, {} script entries",
            name,
            s.replicas.len(),
            s.script.len()
        );
    }
    println!("strategies:");
    for s in Strategy::all() {
        println!("  {}", s);
    }
    println!("signal modes:");
    println!("  CompletionOnly");
    println!("  ReflectedCommitment");
    0
}

/// Natural per-strategy delivery setting: the faulty baselines run with
/// plain arrival-order delivery, the causality-aware fixes with causal
/// buffering on.
fn natural_causal(strategy: &Strategy) -> bool {
    strategy.causality_aware()
}

fn cmd_verify(strategy_text: &str, max_ops: usize) -> i32 {
    let strategy = match parse_strategy(strategy_text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {}", e);
            return 2;
        }
    };
    let mut failures = 0;
    println!(
        "oracle sweep: strategy={} bound={} ops",
        strategy, max_ops
    );
    for (name, scenario) in builtin_scenarios() {
        let trace = match run_scenario(
            &scenario,
            RunConfig {
                strategy: strategy.clone(),
                mode: SignalMode::ReflectedCommitment,
                causal_delivery: natural_causal(&strategy),
                seed: 0,
            },
        ) {
            Ok(t) => t,
            Err(e) => {
                println!("  {:<24} error: {}", name, e);
                failures += 1;
                continue;
            }
        };
        let ops: Vec<_> = trace.graph.ops_in_order().cloned().collect();
        if ops.len() > max_ops {
            println!(
                "  {:<24} skipped ({} ops exceed bound {})",
                name,
                ops.len(),
                max_ops
            );
            continue;
        }
        match brute_force_converge(&ops, &trace.graph, &strategy, max_ops) {
            Ok(report) => {
                let sim_digests_covered = trace
                    .finals
                    .values()
                    .all(|snap| report.outcomes.contains(&snap.digest));
                let ok = report.convergent && sim_digests_covered;
                println!(
                    "  {:<24} {} orders={} outcomes={} sim-state-enumerated={}",
                    name,
                    if report.convergent {
                        "convergent"
                    } else {
                        "NOT convergent"
                    },
                    report.orders_checked,
                    report.outcomes.len(),
                    sim_digests_covered
                );
                if let Some((a, b)) = &report.counterexample {
                    let fmt = |v: &[crate::oplog::OpId]| {
                        v.iter().map(|o| o.to_string()).collect::<Vec<_>>().join(",")
                    };
                    println!("    counterexample order A: {}", fmt(a));
                    println!("    counterexample order B: {}", fmt(b));
                }
                if !ok {
                    failures += 1;
                }
            }
            Err(e) => {
                println!("  {:<24} {}", name, e);
            }
        }
    }
    if failures > 0 {
        1
    } else {
        0
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| match c {
            '(' => '-',
            ')' | ' ' => '_',
            other => other,
        })
        .collect::<String>()
        .trim_end_matches('_')
        .to_string()
}

fn cmd_matrix(seed: u64, out_dir: Option<PathBuf>) -> i32 {
    if let Some(dir) = &out_dir {
        if let Err(e) = fs::create_dir_all(dir) {
            eprintln!("error: cannot create {}: {}", dir.display(), e);
            return 2;
        }
    }
    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:<24} {:<32} {:<20} {:>2} {:>2} {:>3} {:>3} {:>3} {:>3} {:>3} {:>3} {:>5} {:>8}",
        "scenario", "strategy", "mode", "q", "c", "SD", "PM", "LR", "MM", "SS", "CI", "fito", "pattern"
    );
    for (name, scenario) in builtin_scenarios() {
        for strategy in Strategy::all() {
            for mode in [SignalMode::CompletionOnly, SignalMode::ReflectedCommitment] {
                let cfg = RunConfig {
                    strategy: strategy.clone(),
                    mode,
                    causal_delivery: natural_causal(&strategy),
                    seed,
                };
                let trace = match run_scenario(&scenario, cfg) {
                    Ok(t) => t,
                    Err(e) => {
                        eprintln!("error: {} / {} / {}: {}", name, strategy, mode, e);
                        return 2;
                    }
                };
                let findings = detect_all(&trace);
                let verdict = classify_fito(&trace, &findings);
                let count = |p: Pathology| {
                    findings.iter().filter(|f| f.pathology == p).count()
                };
                let _ = writeln!(
                    table,
                    "{:<24} {:<32} {:<20} {:>2} {:>2} {:>3} {:>3} {:>3} {:>3} {:>3} {:>3} {:>5} {:>8}",
                    name,
                    strategy.to_string(),
                    mode.to_string(),
                    if trace.quiescent { "y" } else { "n" },
                    if trace.final_divergence() { "n" } else { "y" },
                    count(Pathology::SilentDeletion),
                    count(Pathology::PhantomMessage),
                    count(Pathology::LostReadState),
                    count(Pathology::MissingMove),
                    count(Pathology::StuckSync),
                    count(Pathology::CausalInversion),
                    format!(
                        "{}{}{}{}",
                        verdict.forward_commitment as u8,
                        verdict.absent_reflection as u8,
                        verdict.completion_masquerade as u8,
                        verdict.invisible_corruption as u8
                    ),
                    if verdict.pattern_present() {
                        "present"
                    } else {
                        "absent"
                    }
                );
                if let Some(dir) = &out_dir {
                    let base = format!("{}__{}__{}", name, sanitize(&strategy.to_string()), mode);
                    let report = emit_report(&trace, &findings, &verdict);
                    if let Err(e) = fs::write(dir.join(format!("{}.trace", base)), trace.render())
                    {
                        eprintln!("error: {}", e);
                        return 2;
                    }
                    if let Err(e) = fs::write(dir.join(format!("{}.report", base)), report) {
                        eprintln!("error: {}", e);
                        return 2;
                    }
                }
            }
        }
    }
    print!("{}", table);
    if let Some(dir) = &out_dir {
        if let Err(e) = fs::write(dir.join("matrix.txt"), &table) {
            eprintln!("error: {}", e);
            return 2;
        }
    }
    0
}
