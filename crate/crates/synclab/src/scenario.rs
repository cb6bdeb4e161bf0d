//! Scenario definitions: which devices exist, how their clocks lie, what
//! the network looks like, and the script of user actions.
//!
//! The file format is deliberately line-oriented — sections, one key/value
//! or directive per line — so scenarios diff cleanly and golden tests stay
//! readable. `parse_scenario` and `print_scenario` round-trip.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::clock::{ReplicaId, TrueTime};
use crate::oplog::{DocId, Folder, MsgId, OpKind};
use crate::sim::{NetworkModel, Partition};

/// One device declaration: identity, clock misbehavior, starting
/// connectivity, and whether its client stubbornly re-asserts user intent
/// when a sync overwrite contradicts it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplicaSpec {
    pub id: ReplicaId,
    pub offset_ns: i64,
    pub drift_ppm: i64,
    pub online: bool,
    pub reassert: bool,
}

/// One script line: at a ground-truth instant, one replica does something.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScriptEntry {
    pub at: TrueTime,
    pub replica: ReplicaId,
    pub directive: Directive,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Directive {
    Action(OpKind),
    Offline,
    Online,
    ClockStep(i64),
}

/// A complete scenario: replicas, network, script, and the event budget
/// after which a run is declared non-quiescent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub replicas: Vec<ReplicaSpec>,
    pub network: NetworkModel,
    pub script: Vec<ScriptEntry>,
    pub quiescence_bound: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: undeclared replica `{id}`")]
    UndeclaredReplica { line: usize, id: String },
    #[error("line {line}: script is not sorted by time")]
    UnsortedScript { line: usize },
    #[error("line {line}: duplicate replica `{id}`")]
    DuplicateReplica { line: usize, id: String },
    #[error("scenario has no name")]
    MissingName,
}

// ---------------------------------------------------------------------------
// Durations
// ---------------------------------------------------------------------------

/// Parses a signed duration: `-60s`, `+3s`, `50ms`, `1500us`, `250ns`, `0`.
pub fn parse_duration(text: &str) -> Option<i64> {
    let t = text.trim();
    if t == "0" {
        return Some(0);
    }
    let (digits, mult) = if let Some(rest) = t.strip_suffix("ns") {
        (rest, 1)
    } else if let Some(rest) = t.strip_suffix("us") {
        (rest, 1_000)
    } else if let Some(rest) = t.strip_suffix("ms") {
        (rest, 1_000_000)
    } else if let Some(rest) = t.strip_suffix('s') {
        (rest, 1_000_000_000)
    } else {
        return None;
    };
    let value: i64 = digits.parse().ok()?;
    Some(value * mult)
}

/// Renders nanoseconds with the largest unit that divides exactly.
pub fn format_duration(ns: i64) -> String {
    if ns == 0 {
        return "0".to_string();
    }
    if ns % 1_000_000_000 == 0 {
        format!("{}s", ns / 1_000_000_000)
    } else if ns % 1_000_000 == 0 {
        format!("{}ms", ns / 1_000_000)
    } else if ns % 1_000 == 0 {
        format!("{}us", ns / 1_000)
    } else {
        format!("{}ns", ns)
    }
}

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

/// Splits a line into tokens. Double-quoted tokens may contain spaces and
/// the escapes `\"` and `\\`; they are marked as quoted so directives can
/// tell content apart from identifiers.
fn tokenize(line: &str, lineno: usize) -> Result<Vec<(String, bool)>, ScenarioError> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        if c == '"' {
            chars.next();
            let mut tok = String::new();
            loop {
                match chars.next() {
                    Some('\\') => match chars.next() {
                        Some('"') => tok.push('"'),
                        Some('\\') => tok.push('\\'),
                        other => {
                            return Err(ScenarioError::Syntax {
                                line: lineno,
                                msg: format!("bad escape {:?} in string", other),
                            })
                        }
                    },
                    Some('"') => break,
                    Some(ch) => tok.push(ch),
                    None => {
                        return Err(ScenarioError::Syntax {
                            line: lineno,
                            msg: "unterminated string".to_string(),
                        })
                    }
                }
            }
            out.push((tok, true));
        } else {
            let mut tok = String::new();
            while let Some(&ch) = chars.peek() {
                if ch.is_whitespace() {
                    break;
                }
                tok.push(ch);
                chars.next();
            }
            out.push((tok, false));
        }
    }
    Ok(out)
}

fn quote(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    out.push('"');
    for c in text.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            other => out.push(other),
        }
    }
    out.push('"');
    out
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

#[derive(PartialEq)]
enum Section {
    Preamble,
    Replicas,
    Network,
    Script,
}

/// Parses scenario text, validating every invariant: declared replicas,
/// sorted script, well-formed directives.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut name: Option<String> = None;
    let mut quiescence_bound: u64 = 10_000;
    let mut replicas: Vec<ReplicaSpec> = Vec::new();
    let mut network = NetworkModel::default();
    let mut script: Vec<ScriptEntry> = Vec::new();
    let mut section = Section::Preamble;
    let mut last_at: Option<TrueTime> = None;

    let err = |line: usize, msg: String| ScenarioError::Syntax { line, msg };

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line {
            "[replicas]" => {
                section = Section::Replicas;
                continue;
            }
            "[network]" => {
                section = Section::Network;
                continue;
            }
            "[script]" => {
                section = Section::Script;
                continue;
            }
            _ => {}
        }
        let tokens = tokenize(line, lineno)?;
        let word = |i: usize| -> Result<&str, ScenarioError> {
            tokens
                .get(i)
                .map(|(t, _)| t.as_str())
                .ok_or_else(|| err(lineno, format!("missing token {}", i + 1)))
        };
        match section {
            Section::Preamble => match word(0)? {
                "scenario" => name = Some(word(1)?.to_string()),
                "quiescence-bound" => {
                    quiescence_bound = word(1)?
                        .parse()
                        .map_err(|_| err(lineno, "bad quiescence bound".to_string()))?
                }
                other => {
                    return Err(err(lineno, format!("unexpected `{}` before sections", other)))
                }
            },
            Section::Replicas => {
                if word(0)? != "replica" {
                    return Err(err(lineno, "expected `replica`".to_string()));
                }
                let id = ReplicaId::new(word(1)?);
                if replicas.iter().any(|r| r.id == id) {
                    return Err(ScenarioError::DuplicateReplica {
                        line: lineno,
                        id: id.to_string(),
                    });
                }
                let mut spec = ReplicaSpec {
                    id,
                    offset_ns: 0,
                    drift_ppm: 0,
                    online: true,
                    reassert: false,
                };
                for (tok, _) in &tokens[2..] {
                    if let Some(v) = tok.strip_prefix("offset=") {
                        spec.offset_ns = parse_duration(v)
                            .ok_or_else(|| err(lineno, format!("bad offset `{}`", v)))?;
                    } else if let Some(v) = tok.strip_prefix("drift=") {
                        spec.drift_ppm = v
                            .parse()
                            .map_err(|_| err(lineno, format!("bad drift `{}`", v)))?;
                    } else if tok == "online" {
                        spec.online = true;
                    } else if tok == "offline" {
                        spec.online = false;
                    } else if tok == "reassert" {
                        spec.reassert = true;
                    } else {
                        return Err(err(lineno, format!("unknown replica field `{}`", tok)));
                    }
                }
                replicas.push(spec);
            }
            Section::Network => match word(0)? {
                "default-latency" => {
                    network.default_latency_ns = parse_duration(word(1)?)
                        .ok_or_else(|| err(lineno, "bad latency".to_string()))?;
                }
                "latency" => {
                    let id = require_replica(&replicas, word(1)?, lineno)?;
                    let ns = parse_duration(word(2)?)
                        .ok_or_else(|| err(lineno, "bad latency".to_string()))?;
                    network.latency.insert(id, ns);
                }
                "jitter" => {
                    network.jitter_ns = parse_duration(word(1)?)
                        .ok_or_else(|| err(lineno, "bad jitter".to_string()))?;
                }
                "partition" => {
                    let id = require_replica(&replicas, word(1)?, lineno)?;
                    let range = word(2)?;
                    let (start, end) = range
                        .split_once("..")
                        .ok_or_else(|| err(lineno, "partition wants start..end".to_string()))?;
                    let start = parse_duration(start)
                        .ok_or_else(|| err(lineno, "bad partition start".to_string()))?;
                    let end = if end.is_empty() {
                        None
                    } else {
                        Some(TrueTime(parse_duration(end).ok_or_else(|| {
                            err(lineno, "bad partition end".to_string())
                        })?))
                    };
                    network.partitions.push(Partition {
                        replica: id,
                        start: TrueTime(start),
                        end,
                    });
                }
                other => return Err(err(lineno, format!("unknown network line `{}`", other))),
            },
            Section::Script => {
                if word(0)? != "at" {
                    return Err(err(lineno, "script lines start with `at`".to_string()));
                }
                let at = TrueTime(
                    parse_duration(word(1)?)
                        .ok_or_else(|| err(lineno, "bad time".to_string()))?,
                );
                if let Some(prev) = last_at {
                    if at < prev {
                        return Err(ScenarioError::UnsortedScript { line: lineno });
                    }
                }
                last_at = Some(at);
                let replica = require_replica(&replicas, word(2)?, lineno)?;
                let directive = parse_directive(&tokens[3..], lineno)?;
                script.push(ScriptEntry {
                    at,
                    replica,
                    directive,
                });
            }
        }
    }

    Ok(Scenario {
        name: name.ok_or(ScenarioError::MissingName)?,
        replicas,
        network,
        script,
        quiescence_bound,
    })
}

fn require_replica(
    replicas: &[ReplicaSpec],
    name: &str,
    lineno: usize,
) -> Result<ReplicaId, ScenarioError> {
    let id = ReplicaId::new(name);
    if replicas.iter().any(|r| r.id == id) {
        Ok(id)
    } else {
        Err(ScenarioError::UndeclaredReplica {
            line: lineno,
            id: name.to_string(),
        })
    }
}

fn parse_directive(
    tokens: &[(String, bool)],
    lineno: usize,
) -> Result<Directive, ScenarioError> {
    let err = |msg: String| ScenarioError::Syntax { line: lineno, msg };
    let head = tokens
        .first()
        .map(|(t, _)| t.as_str())
        .ok_or_else(|| err("missing directive".to_string()))?;
    match head {
        "offline" => Ok(Directive::Offline),
        "online" => Ok(Directive::Online),
        "clock-step" => {
            let v = tokens
                .get(1)
                .map(|(t, _)| t.as_str())
                .ok_or_else(|| err("clock-step wants a duration".to_string()))?;
            Ok(Directive::ClockStep(parse_duration(v).ok_or_else(|| {
                err(format!("bad clock-step `{}`", v))
            })?))
        }
        "txn" => {
            let mut members = Vec::new();
            for chunk in tokens[1..].split(|(t, quoted)| !quoted && t == ";") {
                if chunk.is_empty() {
                    continue;
                }
                members.push(parse_action(chunk, lineno)?);
            }
            Ok(Directive::Action(OpKind::TxnGroup(members)))
        }
        _ => Ok(Directive::Action(parse_action(tokens, lineno)?)),
    }
}

fn parse_action(tokens: &[(String, bool)], lineno: usize) -> Result<OpKind, ScenarioError> {
    let err = |msg: String| ScenarioError::Syntax { line: lineno, msg };
    let head = tokens
        .first()
        .map(|(t, _)| t.as_str())
        .ok_or_else(|| err("missing action".to_string()))?;
    let word = |i: usize| -> Result<&str, ScenarioError> {
        tokens
            .get(i)
            .map(|(t, _)| t.as_str())
            .ok_or_else(|| err(format!("`{}` is missing arguments", head)))
    };
    match head {
        "create-doc" => {
            let doc = DocId::new(word(1)?);
            let paragraphs: Vec<String> = tokens[2..]
                .iter()
                .map(|(t, _)| t.clone())
                .collect();
            Ok(OpKind::CreateDoc { doc, paragraphs })
        }
        "write-doc" => Ok(OpKind::WriteDoc {
            doc: DocId::new(word(1)?),
            paragraph: word(2)?
                .parse()
                .map_err(|_| err("bad paragraph index".to_string()))?,
            content: word(3)?.to_string(),
        }),
        "delete-doc" => Ok(OpKind::DeleteDoc {
            doc: DocId::new(word(1)?),
        }),
        "mark-read" => Ok(OpKind::MarkRead {
            msg: MsgId::new(word(1)?),
        }),
        "mark-unread" => Ok(OpKind::MarkUnread {
            msg: MsgId::new(word(1)?),
        }),
        "move" => Ok(OpKind::Move {
            msg: MsgId::new(word(1)?),
            folder: Folder::new(word(2)?),
        }),
        "delete-msg" => Ok(OpKind::DeleteMsg {
            msg: MsgId::new(word(1)?),
        }),
        "compose" => {
            let msg = MsgId::new(word(1)?);
            let in_reply_to = match tokens.get(2).map(|(t, _)| t.as_str()) {
                Some("reply-to") => Some(MsgId::new(word(3)?)),
                Some(other) => {
                    return Err(err(format!("unexpected `{}` after compose", other)))
                }
                None => None,
            };
            Ok(OpKind::Compose { msg, in_reply_to })
        }
        other => Err(err(format!("unknown action `{}`", other))),
    }
}

// ---------------------------------------------------------------------------
// Printer
// ---------------------------------------------------------------------------

/// Canonical text for a scenario; `parse_scenario(print_scenario(s)) == s`.
pub fn print_scenario(s: &Scenario) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario {}", s.name);
    let _ = writeln!(out, "quiescence-bound {}", s.quiescence_bound);
    let _ = writeln!(out);
    let _ = writeln!(out, "[replicas]");
    for r in &s.replicas {
        let _ = write!(
            out,
            "replica {} offset={} drift={} {}",
            r.id,
            format_duration(r.offset_ns),
            r.drift_ppm,
            if r.online { "online" } else { "offline" }
        );
        if r.reassert {
            let _ = write!(out, " reassert");
        }
        let _ = writeln!(out);
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "[network]");
    let _ = writeln!(
        out,
        "default-latency {}",
        format_duration(s.network.default_latency_ns)
    );
    for (id, ns) in &s.network.latency {
        let _ = writeln!(out, "latency {} {}", id, format_duration(*ns));
    }
    if s.network.jitter_ns != 0 {
        let _ = writeln!(out, "jitter {}", format_duration(s.network.jitter_ns));
    }
    for p in &s.network.partitions {
        let end = p.end.map(|t| format_duration(t.0)).unwrap_or_default();
        let _ = writeln!(
            out,
            "partition {} {}..{}",
            p.replica,
            format_duration(p.start.0),
            end
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "[script]");
    for e in &s.script {
        let _ = writeln!(
            out,
            "at {} {} {}",
            format_duration(e.at.0),
            e.replica,
            print_directive(&e.directive)
        );
    }
    out
}

fn print_directive(d: &Directive) -> String {
    match d {
        Directive::Offline => "offline".to_string(),
        Directive::Online => "online".to_string(),
        Directive::ClockStep(ns) => format!("clock-step {}", format_duration(*ns)),
        Directive::Action(OpKind::TxnGroup(members)) => {
            let parts: Vec<String> = members.iter().map(print_action).collect();
            format!("txn {}", parts.join(" ; "))
        }
        Directive::Action(kind) => print_action(kind),
    }
}

fn print_action(kind: &OpKind) -> String {
    match kind {
        OpKind::CreateDoc { doc, paragraphs } => {
            let paras: Vec<String> = paragraphs.iter().map(|p| quote(p)).collect();
            format!("create-doc {} {}", doc, paras.join(" "))
        }
        OpKind::WriteDoc {
            doc,
            paragraph,
            content,
        } => format!("write-doc {} {} {}", doc, paragraph, quote(content)),
        OpKind::DeleteDoc { doc } => format!("delete-doc {}", doc),
        OpKind::MarkRead { msg } => format!("mark-read {}", msg),
        OpKind::MarkUnread { msg } => format!("mark-unread {}", msg),
        OpKind::Move { msg, folder } => format!("move {} {}", msg, folder),
        OpKind::DeleteMsg { msg } => format!("delete-msg {}", msg),
        OpKind::Compose { msg, in_reply_to } => match in_reply_to {
            Some(orig) => format!("compose {} reply-to {}", msg, orig),
            None => format!("compose {}", msg),
        },
        OpKind::TxnGroup(_) => unreachable!("groups print at directive level"),
    }
}

// ---------------------------------------------------------------------------
// Built-in corpus
// ---------------------------------------------------------------------------

const S1: &str = r#"
# Two devices edit different paragraphs of one document while neither has
# seen the other's change. Bob's clock runs a second ahead, so a
# timestamp race always crowns him.
scenario S1-concurrent-edit
quiescence-bound 10000

[replicas]
replica alice offset=0 drift=0 online
replica bob offset=+1s drift=0 online

[network]
default-latency 50ms

[script]
at 1s alice create-doc d1 "title" "one" "two" "alpha" "four" "five" "six" "omega"
at 5s alice write-doc d1 3 "alice rewrote paragraph three"
at 5s bob write-doc d1 7 "bob rewrote paragraph seven"
"#;

const S2: &str = r#"
# A phone reads a message, its clock steps back a minute (an NTP-style
# correction), and only then is the reply composed and the original
# archived. The reply's reported wall time now precedes the read's.
# Reference wall readings for the scene as a clock would display them:
# read 2:34:50, reply 2:34:55, archived 2:35:00 — monotone as displayed;
# the step below is what turns the recorded (read, reply) pair into an
# inversion under timestamp order.
scenario S2-reply-inversion
quiescence-bound 10000

[replicas]
replica laptop offset=0 drift=0 online
replica phone offset=0 drift=0 online

[network]
default-latency 50ms

[script]
at 1s laptop compose m1
at 10s phone mark-read m1
at 11s phone clock-step -60s
at 15s phone compose m2 reply-to m1
at 20s phone move m1 archive
"#;

const S3: &str = r#"
# The phone (running three seconds fast) goes offline and flags two
# messages; the laptop deletes both; the phone reconnects and syncs its
# stale state, whose timestamps outrank the deletions.
scenario S3-offline-phantom
quiescence-bound 10000

[replicas]
replica laptop offset=0 drift=0 online
replica phone offset=+3s drift=0 online

[network]
default-latency 50ms

[script]
at 1s laptop compose m1
at 1200ms laptop compose m2
at 4s phone offline
at 5s phone mark-read m1
at 5500ms phone mark-read m2
at 6s laptop delete-msg m1
at 6500ms laptop delete-msg m2
at 20s phone online
"#;

const S4: &str = r#"
# The desk toggles a message read then unread; later the phone (clock
# five seconds behind) marks it read. The phone's causally-final flag
# carries the smaller timestamp, so timestamp resolution keeps "unread".
scenario S4-lost-read
quiescence-bound 10000

[replicas]
replica desk offset=0 drift=0 online
replica phone offset=-5s drift=0 online

[network]
default-latency 50ms

[script]
at 1s desk compose m1
at 5s desk mark-read m1
at 6s desk mark-unread m1
at 10s phone mark-read m1
"#;

const S5: &str = r#"
# The desk files a message into `archive`; the offline phone (clock ten
# seconds ahead) had concurrently filed it into `todo`. On reconnect the
# stale placement outranks the archive move, which never takes effect.
scenario S5-missing-move
quiescence-bound 10000

[replicas]
replica desk offset=0 drift=0 online
replica phone offset=+10s drift=0 online

[network]
default-latency 50ms

[script]
at 1s desk compose m1
at 3s phone offline
at 4s phone move m1 todo
at 6s desk move m1 archive
at 20s phone online
"#;

const S6: &str = r#"
# Two stubborn clients disagree about one flag and each re-asserts its
# user's intent whenever a sync overwrite contradicts it. Under timestamp
# resolution every re-assertion outranks the previous write and the pair
# ping-pongs forever; causality-aware clients stand down once the
# overwrite demonstrably observed their own op.
scenario S6-stuck-flipflop
quiescence-bound 240

[replicas]
replica a offset=0 drift=0 online reassert
replica b offset=0 drift=0 online reassert

[network]
default-latency 50ms

[script]
at 1s a compose m1
at 5s a mark-read m1
at 5s b mark-unread m1
"#;

const S7: &str = r#"
# Five rounds of concurrent edits to the same document. Conflict-copy
# count grows round by round under materializing strategies; timestamp
# resolution silently sheds one branch per round instead.
scenario S7-divergence-stress
quiescence-bound 10000

[replicas]
replica alice offset=0 drift=0 online
replica bob offset=+1s drift=0 online

[network]
default-latency 50ms

[script]
at 1s alice create-doc d1 "head" "x" "y" "z"
at 10s alice write-doc d1 1 "alice r1"
at 10s bob write-doc d1 2 "bob r1"
at 20s alice write-doc d1 1 "alice r2"
at 20s bob write-doc d1 2 "bob r2"
at 30s alice write-doc d1 1 "alice r3"
at 30s bob write-doc d1 2 "bob r3"
at 40s alice write-doc d1 1 "alice r4"
at 40s bob write-doc d1 2 "bob r4"
at 50s alice write-doc d1 1 "alice r5"
at 50s bob write-doc d1 2 "bob r5"
"#;

const S8: &str = r#"
# Three paragraph edits travel as one atomic group: peers see none or all.
scenario S8-txn-group
quiescence-bound 10000

[replicas]
replica alice offset=0 drift=0 online
replica bob offset=0 drift=0 online

[network]
default-latency 50ms

[script]
at 1s alice create-doc d1 "a" "b" "c" "d"
at 5s alice txn write-doc d1 0 "x0" ; write-doc d1 1 "x1" ; write-doc d1 2 "x2"
at 6s bob write-doc d1 3 "bob rewrote the tail"
"#;

/// The built-in corpus, keyed by full scenario name.
pub fn builtin_scenarios() -> BTreeMap<String, Scenario> {
    let mut out = BTreeMap::new();
    for text in [S1, S2, S3, S4, S5, S6, S7, S8] {
        let s = parse_scenario(text).expect("built-in scenarios must parse");
        out.insert(s.name.clone(), s);
    }
    out
}

/// Finds a built-in by exact name or case-insensitive short key (`s3`).
pub fn find_builtin(name: &str) -> Option<Scenario> {
    let all = builtin_scenarios();
    if let Some(s) = all.get(name) {
        return Some(s.clone());
    }
    let lower = name.to_lowercase();
    let matches: Vec<&Scenario> = all
        .values()
        .filter(|s| {
            let n = s.name.to_lowercase();
            n == lower || n.split('-').next() == Some(lower.as_str())
        })
        .collect();
    match matches.as_slice() {
        [one] => Some((*one).clone()),
        _ => None,
    }
}

impl Scenario {
    /// Ids of all declared replicas.
    pub fn replica_ids(&self) -> BTreeSet<ReplicaId> {
        self.replicas.iter().map(|r| r.id.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse_and_round_trip() {
        let all = builtin_scenarios();
        assert_eq!(all.len(), 8);
        for (name, s) in &all {
            let printed = print_scenario(s);
            let reparsed = parse_scenario(&printed)
                .unwrap_or_else(|e| panic!("{} failed round-trip: {}", name, e));
            assert_eq!(&reparsed, s, "{} round-trip changed the scenario", name);
        }
    }

    #[test]
    fn s3_offline_interval_covers_laptop_deletes() {
        let s = find_builtin("s3").unwrap();
        let offline_at = s
            .script
            .iter()
            .find(|e| matches!(e.directive, Directive::Offline))
            .unwrap()
            .at;
        let online_at = s
            .script
            .iter()
            .find(|e| matches!(e.directive, Directive::Online))
            .unwrap()
            .at;
        for e in &s.script {
            if let Directive::Action(OpKind::DeleteMsg { .. }) = &e.directive {
                assert!(e.at > offline_at && e.at < online_at);
            }
        }
    }

    #[test]
    fn empty_script_is_valid() {
        let s = parse_scenario(
            "scenario empty\n[replicas]\nreplica a offset=0 drift=0 online\n[network]\n[script]\n",
        )
        .unwrap();
        assert!(s.script.is_empty());
        assert_eq!(s.quiescence_bound, 10_000);
    }

    #[test]
    fn undeclared_replica_is_named_in_error() {
        let text = "scenario bad\n[replicas]\nreplica a offset=0 drift=0 online\n[script]\nat 1s c compose m1\n";
        match parse_scenario(text) {
            Err(ScenarioError::UndeclaredReplica { id, .. }) => assert_eq!(id, "c"),
            other => panic!("expected undeclared-replica error, got {:?}", other),
        }
    }

    #[test]
    fn unsorted_script_rejected() {
        let text = "scenario bad\n[replicas]\nreplica a offset=0 drift=0 online\n[script]\nat 2s a compose m1\nat 1s a compose m2\n";
        assert!(matches!(
            parse_scenario(text),
            Err(ScenarioError::UnsortedScript { line: 6 })
        ));
    }

    #[test]
    fn duration_round_trip() {
        for ns in [0, 1, 999, 1_000, 50_000_000, -60_000_000_000, 3_000_000_000] {
            assert_eq!(parse_duration(&format_duration(ns)), Some(ns));
        }
        assert_eq!(parse_duration("+3s"), Some(3_000_000_000));
        assert_eq!(parse_duration("junk"), None);
    }

    #[test]
    fn s1_has_two_concurrent_writes() {
        let s = find_builtin("S1-concurrent-edit").unwrap();
        let writes: Vec<&ScriptEntry> = s
            .script
            .iter()
            .filter(|e| matches!(e.directive, Directive::Action(OpKind::WriteDoc { .. })))
            .collect();
        assert_eq!(writes.len(), 2);
        assert_eq!(writes[0].at, writes[1].at);
        assert_ne!(writes[0].replica, writes[1].replica);
    }
}
