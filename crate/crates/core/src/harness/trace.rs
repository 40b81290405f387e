//! JSON-lines run traces: a header line, then one line per turn with the
//! plan in tool-call wire shape.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::classify::BehaviorLabel;
use super::HarnessError;
use crate::agent::{RunAccounting, RunResult, Termination};
use crate::gateway::messages::{parse_tool_call, tool_call_to_wire};
use crate::plan::{Evidence, TokenSource, Turn};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub task_id: String,
    pub config_digest: String,
    pub answer: String,
    pub label: BehaviorLabel,
    pub duration_sec: f64,
    pub termination: Termination,
    #[serde(default)]
    pub correct: Option<bool>,
    pub accounting: RunAccounting,
}

#[derive(Serialize, Deserialize)]
struct TurnLine {
    kind: String,
    turn_index: u32,
    tool_call: Value,
    evidence: Evidence,
    context_tokens: u64,
    response_tokens: u64,
    auxiliary_tokens: u64,
    token_source: TokenSource,
}

/// Hex SHA-256 of any serializable configuration.
pub fn config_digest<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// `<task_id>.trace.jsonl`, with unsafe characters replaced; a short hash
/// keeps ids that sanitize alike apart.
pub fn trace_file_name(task_id: &str) -> String {
    let clean: String = task_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    if clean == task_id && !clean.is_empty() && !clean.starts_with('.') {
        format!("{clean}.trace.jsonl")
    } else {
        let h = hex::encode(Sha256::digest(task_id.as_bytes()));
        format!("{}-{}.trace.jsonl", clean.trim_start_matches('.'), &h[..8])
    }
}

pub fn write_trace(path: &Path, header: &TraceHeader, result: &RunResult) -> Result<(), HarnessError> {
    let io = |e| HarnessError::Io(path.to_path_buf(), e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let mut head = serde_json::to_value(header).expect("header serializes");
    head["kind"] = json!("header");
    writeln!(w, "{head}").map_err(io)?;
    for t in &result.turns {
        let line = TurnLine {
            kind: "turn".into(),
            turn_index: t.plan.turn_index,
            tool_call: tool_call_to_wire(&t.plan),
            evidence: t.evidence.clone(),
            context_tokens: t.context_tokens,
            response_tokens: t.response_tokens,
            auxiliary_tokens: t.auxiliary_tokens,
            token_source: t.token_source,
        };
        writeln!(w, "{}", serde_json::to_string(&line).expect("turn serializes")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a trace back into its header and turns; plans are re-parsed
/// through the tool-call parser.
pub fn read_trace(path: &Path) -> Result<(TraceHeader, Vec<Turn>), HarnessError> {
    let bad = |msg: String| HarnessError::Trace(path.to_path_buf(), msg);
    let file = File::open(path).map_err(|e| HarnessError::Io(path.to_path_buf(), e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| bad("empty trace".into()))?
        .map_err(|e| HarnessError::Io(path.to_path_buf(), e))?;
    let header: TraceHeader = serde_json::from_str(&first).map_err(|e| bad(format!("header: {e}")))?;
    let mut turns = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| HarnessError::Io(path.to_path_buf(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let tl: TurnLine = serde_json::from_str(&line).map_err(|e| bad(format!("line {}: {e}", n + 2)))?;
        let plan = parse_tool_call(&json!({ "tool_calls": [tl.tool_call] }), tl.turn_index)
            .map_err(|e| bad(format!("line {}: {e}", n + 2)))?;
        turns.push(Turn {
            plan,
            evidence: tl.evidence,
            context_tokens: tl.context_tokens,
            response_tokens: tl.response_tokens,
            auxiliary_tokens: tl.auxiliary_tokens,
            token_source: tl.token_source,
        });
    }
    Ok((header, turns))
}

pub fn trace_path(dir: &Path, task_id: &str) -> PathBuf {
    dir.join(trace_file_name(task_id))
}
