//! Subject memory table: a capped registry of recurring entities, their
//! descriptions, and where in the video they were seen.
//!
//! Two update paths exist. [`LlmMemory`] asks a chat model to consolidate
//! the registry with the memory-update prompt; [`RuleBasedMemory`] merges
//! subjects parsed from oracle-style observations deterministically. Both
//! enforce the 15-subject cap locally, whatever the model returns.

use std::collections::HashSet;

use indexmap::IndexMap;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::gateway::backend::{ChatBackend, Usage};
use crate::gateway::messages::{tool_call_to_wire, ChatMessage, Role};
use crate::gateway::prompts;
use crate::plan::Turn;
use crate::sampling::parse_anchors;
use crate::timeline::TimeInterval;

pub const MAX_SUBJECTS: usize = 15;
const DIGEST_EVIDENCE_CHARS: usize = 500;

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("MalformedRegistryJson: {0}")]
    MalformedRegistryJson(String),
    #[error("unparseable registry line {line}: {reason}")]
    RenderParse { line: usize, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SubjectRecord {
    pub descriptions: Vec<String>,
    /// Sorted by start, ties by end.
    pub appeared_intervals: Vec<TimeInterval>,
}

impl SubjectRecord {
    /// Latest evidence of the subject: the maximum interval end.
    pub fn latest_appearance(&self) -> f64 {
        self.appeared_intervals
            .iter()
            .map(|iv| iv.end_sec)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn add_description(&mut self, desc: &str) -> bool {
        let desc = desc.trim();
        if desc.is_empty() || self.descriptions.iter().any(|d| d == desc) {
            return false;
        }
        self.descriptions.push(desc.to_string());
        true
    }

    fn add_interval(&mut self, iv: TimeInterval) {
        if !self.appeared_intervals.contains(&iv) {
            self.appeared_intervals.push(iv);
            self.appeared_intervals.sort_by(|a, b| a.temporal_cmp(b));
        }
    }
}

/// Subjects in ranking order: most recent appearance first.
#[derive(Debug, Clone, Default)]
pub struct SubjectRegistry {
    entries: IndexMap<String, SubjectRecord>,
}

impl PartialEq for SubjectRegistry {
    fn eq(&self, other: &Self) -> bool {
        self.entries.iter().eq(other.entries.iter())
    }
}

impl SubjectRegistry {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&SubjectRecord> {
        self.entries.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &SubjectRecord)> {
        self.entries.iter()
    }

    /// Ranks by latest appearance (current-turn subjects first on ties,
    /// then existing order) and keeps the top [`MAX_SUBJECTS`].
    fn rank_and_prune(mut entries: IndexMap<String, SubjectRecord>, current: &HashSet<String>) -> Self {
        entries.sort_by(|ka, a, kb, b| {
            b.latest_appearance()
                .total_cmp(&a.latest_appearance())
                .then_with(|| current.contains(kb).cmp(&current.contains(ka)))
        });
        entries.truncate(MAX_SUBJECTS);
        Self { entries }
    }

    /// The `updated_subject_registry` JSON shape used by the memory prompt.
    pub fn to_json(&self) -> Value {
        let mut subjects = Map::new();
        for (id, rec) in &self.entries {
            subjects.insert(
                id.clone(),
                json!({
                    "description": rec.descriptions,
                    "appeared_intervals": rec
                        .appeared_intervals
                        .iter()
                        .map(|iv| format!("[{}, {}]", iv.start_sec, iv.end_sec))
                        .collect::<Vec<_>>(),
                }),
            );
        }
        json!({ "updated_subject_registry": subjects })
    }

    /// Reads the prompt's output shape. A bare `{}` means no subjects. Bad
    /// interval entries are skipped; the cap is enforced on the result.
    pub fn from_json(value: &Value) -> Result<Self, MemoryError> {
        let obj = value
            .as_object()
            .ok_or_else(|| MemoryError::MalformedRegistryJson("expected a JSON object".into()))?;
        if obj.is_empty() {
            return Ok(Self::default());
        }
        let subjects = obj
            .get("updated_subject_registry")
            .and_then(Value::as_object)
            .ok_or_else(|| MemoryError::MalformedRegistryJson("missing updated_subject_registry object".into()))?;
        let mut entries = IndexMap::new();
        for (id, v) in subjects {
            let id = id.trim();
            if id.is_empty() {
                continue;
            }
            let rec_obj = v
                .as_object()
                .ok_or_else(|| MemoryError::MalformedRegistryJson(format!("subject {id} is not an object")))?;
            let mut rec = SubjectRecord::default();
            match rec_obj.get("description") {
                Some(Value::Array(items)) => {
                    for d in items.iter().filter_map(Value::as_str) {
                        rec.add_description(d);
                    }
                }
                Some(Value::String(s)) => {
                    rec.add_description(s);
                }
                _ => {}
            }
            if let Some(Value::Array(items)) = rec_obj.get("appeared_intervals") {
                for iv in items.iter().filter_map(interval_from_json) {
                    rec.add_interval(iv);
                }
            }
            entries.insert(id.to_string(), rec);
        }
        Ok(Self::rank_and_prune(entries, &HashSet::new()))
    }
}

fn interval_from_json(v: &Value) -> Option<TimeInterval> {
    let (s, e) = match v {
        Value::String(s) => {
            let inner = s.trim().strip_prefix('[')?.strip_suffix(']')?;
            let (a, b) = inner.split_once(',')?;
            (a.trim().parse().ok()?, b.trim().parse().ok()?)
        }
        Value::Array(pair) if pair.len() == 2 => (pair[0].as_f64()?, pair[1].as_f64()?),
        Value::Object(o) => (o.get("start_sec")?.as_f64()?, o.get("end_sec")?.as_f64()?),
        _ => return None,
    };
    TimeInterval::new(s, e).ok()
}

/// Merges extracted `(subject_id, description, interval)` items into `prev`.
///
/// Same-id items append non-duplicate descriptions and intervals; new ids
/// are added; the result is ranked and cut to [`MAX_SUBJECTS`]. Exact
/// duplicate descriptions are the only ones merged.
pub fn update_rules(prev: &SubjectRegistry, extracted: &[(String, String, TimeInterval)]) -> SubjectRegistry {
    let mut entries = prev.entries.clone();
    let mut current = HashSet::new();
    for (id, desc, iv) in extracted {
        let id = id.trim();
        if id.is_empty() {
            continue;
        }
        let rec = entries.entry(id.to_string()).or_default();
        let had_descriptions = !rec.descriptions.is_empty();
        if rec.add_description(desc) && had_descriptions {
            tracing::debug!(
                subject = id,
                description = desc.as_str(),
                "new description for known subject"
            );
        }
        rec.add_interval(*iv);
        current.insert(id.to_string());
    }
    SubjectRegistry::rank_and_prune(entries, &current)
}

fn escape(text: &str, special: char) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c if c == special => {
                out.push('\\');
                out.push(c);
            }
            c => out.push(c),
        }
    }
    out
}

/// One line per subject, in ranking order:
/// `<id>: <descriptions joined by "; ">  seen: [<start>-<end>s, ...]`.
/// `\`, newlines, `:` in ids and `;` in descriptions are backslash-escaped.
pub fn render_registry(reg: &SubjectRegistry) -> String {
    reg.entries
        .iter()
        .map(|(id, rec)| {
            let descs: Vec<String> = rec.descriptions.iter().map(|d| escape(d, ';')).collect();
            let seen: Vec<String> = rec
                .appeared_intervals
                .iter()
                .map(|iv| format!("{}-{}s", iv.start_sec, iv.end_sec))
                .collect();
            format!("{}: {}  seen: [{}]", escape(id, ':'), descs.join("; "), seen.join(", "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Splits on unescaped `sep`, unescaping each piece.
fn split_unescaped(text: &str, sep: char) -> Vec<String> {
    let mut pieces = vec![String::new()];
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => match chars.next() {
                Some('n') => pieces.last_mut().unwrap().push('\n'),
                Some(other) => pieces.last_mut().unwrap().push(other),
                None => pieces.last_mut().unwrap().push('\\'),
            },
            c if c == sep => pieces.push(String::new()),
            c => pieces.last_mut().unwrap().push(c),
        }
    }
    pieces
}

/// Inverse of [`render_registry`].
pub fn parse_rendered_registry(text: &str) -> Result<SubjectRegistry, MemoryError> {
    let mut entries = IndexMap::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
        let err = |reason: &str| MemoryError::RenderParse {
            line: n + 1,
            reason: reason.to_string(),
        };
        let (head, seen) = line.rsplit_once("  seen: [").ok_or_else(|| err("missing seen list"))?;
        let seen = seen.strip_suffix(']').ok_or_else(|| err("unterminated seen list"))?;
        let id_pieces = split_unescaped(head, ':');
        let id = id_pieces.first().cloned().unwrap_or_default();
        // Re-escape the tail after the first unescaped ':' to recover descriptions.
        let id_len = escape(&id, ':').len();
        let rest = head[id_len..]
            .strip_prefix(": ")
            .ok_or_else(|| err("missing id separator"))?;
        let mut rec = SubjectRecord::default();
        if !rest.is_empty() {
            for (i, piece) in split_unescaped(rest, ';').into_iter().enumerate() {
                let piece = if i > 0 {
                    piece.strip_prefix(' ').map(str::to_string).unwrap_or(piece)
                } else {
                    piece
                };
                rec.descriptions.push(piece);
            }
        }
        if !seen.is_empty() {
            for item in seen.split(", ") {
                let body = item.strip_suffix('s').ok_or_else(|| err("interval missing unit"))?;
                let (s, e) = body.split_once('-').ok_or_else(|| err("interval missing '-'"))?;
                let iv = TimeInterval {
                    start_sec: s.parse().map_err(|_| err("bad start"))?,
                    end_sec: e.parse().map_err(|_| err("bad end"))?,
                };
                rec.appeared_intervals.push(iv);
            }
        }
        entries.insert(id, rec);
    }
    Ok(SubjectRegistry { entries })
}

/// Subjects reported in oracle-style observation lines,
/// `<anchors> <description> (entities: a, b)`, one item per entity.
pub fn extract_subjects(turn: &Turn) -> Vec<(String, String, TimeInterval)> {
    let mut out = Vec::new();
    for reply in &turn.evidence.group_replies {
        for line in reply.text.lines() {
            let Some((body, entities)) = line.rsplit_once(" (entities: ") else {
                continue;
            };
            let Some(entities) = entities.strip_suffix(')') else {
                continue;
            };
            let anchors = parse_anchors(body);
            let description = match body.rfind("s] ") {
                Some(pos) if !anchors.is_empty() => &body[pos + 3..],
                _ => body,
            };
            let lo = anchors.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = anchors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let interval = if hi > lo {
                TimeInterval {
                    start_sec: lo,
                    end_sec: hi,
                }
            } else {
                reply.interval
            };
            for entity in entities.split(", ").map(str::trim).filter(|e| !e.is_empty()) {
                out.push((entity.to_string(), description.trim().to_string(), interval));
            }
        }
    }
    out
}

/// Result of one memory update.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryOutcome {
    pub registry: SubjectRegistry,
    pub usage: Option<Usage>,
    /// Estimated tokens when the backend reports no usage.
    pub estimated_tokens: u64,
}

pub trait MemoryUpdater: Send + Sync {
    fn update(&self, prev: &SubjectRegistry, turn: &Turn, history: &[Turn]) -> MemoryOutcome;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedMemory;

impl MemoryUpdater for RuleBasedMemory {
    fn update(&self, prev: &SubjectRegistry, turn: &Turn, _history: &[Turn]) -> MemoryOutcome {
        MemoryOutcome {
            registry: update_rules(prev, &extract_subjects(turn)),
            usage: None,
            estimated_tokens: 0,
        }
    }
}

/// Model-backed updater using the memory-update prompt.
pub struct LlmMemory<B> {
    pub backend: B,
}

impl<B: ChatBackend> LlmMemory<B> {
    pub fn new(backend: B) -> Self {
        Self { backend }
    }
}

fn truncate_chars(text: &str, max: usize) -> String {
    match text.char_indices().nth(max) {
        Some((idx, _)) => format!("{}...", &text[..idx]),
        None => text.to_string(),
    }
}

/// Tool names, queries, and the first 500 characters of each evidence.
pub fn history_digest(history: &[Turn]) -> String {
    history
        .iter()
        .map(|t| {
            format!(
                "turn {}: {} query={:?} evidence={:?}",
                t.plan.turn_index,
                t.plan.tool().wire_name(),
                t.plan.query,
                truncate_chars(&t.evidence.text, DIGEST_EVIDENCE_CHARS)
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn memory_messages(prev: &SubjectRegistry, turn: &Turn, history: &[Turn]) -> Vec<ChatMessage> {
    let observed = update_rules(&SubjectRegistry::default(), &extract_subjects(turn));
    let digest = history_digest(history);
    let user = format!(
        "Current subject registry:\n{}\n\nHistory:\n{}\n\nCurrent turn:\nTool call: {}\nRaw output:\n{}\n\n[new observed subject registry]\n{}",
        prev.to_json(),
        if digest.is_empty() { "(none)" } else { &digest },
        tool_call_to_wire(&turn.plan)["function"],
        turn.evidence.text,
        observed.to_json()["updated_subject_registry"],
    );
    vec![
        ChatMessage::text(Role::System, prompts::MEMORY_UPDATE.trim_end()),
        ChatMessage::text(Role::User, user),
    ]
}

/// Pulls the first JSON object out of a model reply, tolerating code fences
/// and surrounding prose.
pub fn parse_registry_reply(content: &str) -> Result<SubjectRegistry, MemoryError> {
    let start = content.find('{');
    let end = content.rfind('}');
    let (Some(s), Some(e)) = (start, end) else {
        return Err(MemoryError::MalformedRegistryJson("no JSON object in reply".into()));
    };
    if e < s {
        return Err(MemoryError::MalformedRegistryJson("no JSON object in reply".into()));
    }
    let value: Value =
        serde_json::from_str(&content[s..=e]).map_err(|err| MemoryError::MalformedRegistryJson(err.to_string()))?;
    SubjectRegistry::from_json(&value)
}

pub fn update_llm<B: ChatBackend + ?Sized>(
    prev: &SubjectRegistry,
    turn: &Turn,
    history: &[Turn],
    updater: &B,
) -> MemoryOutcome {
    let messages = memory_messages(prev, turn, history);
    let estimated_tokens = crate::agent::token_estimate(&messages, crate::agent::DEFAULT_IMAGE_TOKENS);
    let reply = match updater.complete(&messages, None) {
        Ok(r) => r,
        Err(e) => {
            tracing::warn!(error = %e, "memory update failed; keeping previous registry");
            return MemoryOutcome {
                registry: prev.clone(),
                usage: None,
                estimated_tokens,
            };
        }
    };
    let content = reply.message.get("content").and_then(Value::as_str).unwrap_or_default();
    let registry = match parse_registry_reply(content) {
        Ok(r) => r,
        Err(e) => {
            tracing::warn!(error = %e, "malformed registry reply; keeping previous registry");
            prev.clone()
        }
    };
    MemoryOutcome {
        registry,
        usage: reply.usage,
        estimated_tokens,
    }
}

impl<B: ChatBackend> MemoryUpdater for LlmMemory<B> {
    fn update(&self, prev: &SubjectRegistry, turn: &Turn, history: &[Turn]) -> MemoryOutcome {
        update_llm(prev, turn, history, &self.backend)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::backend::{BackendError, ChatReply};
    use crate::plan::{Evidence, GroupReply, SegmentArgs, ToolArgs, ToolCall};
    use proptest::prelude::*;

    fn iv(a: f64, b: f64) -> TimeInterval {
        TimeInterval::new(a, b).unwrap()
    }

    fn item(id: &str, desc: &str, a: f64, b: f64) -> (String, String, TimeInterval) {
        (id.into(), desc.into(), iv(a, b))
    }

    struct Canned(String);
    impl ChatBackend for Canned {
        fn complete(&self, _m: &[ChatMessage], _t: Option<&Value>) -> Result<ChatReply, BackendError> {
            Ok(ChatReply {
                message: json!({"role": "assistant", "content": self.0}),
                usage: None,
            })
        }
    }

    fn turn_with(text: &str, interval: TimeInterval) -> Turn {
        Turn {
            plan: ToolCall {
                query: "who".into(),
                args: ToolArgs::Segment(SegmentArgs {
                    interval,
                    fps: 1.0,
                    max_total_frames: 32,
                }),
                turn_index: 1,
            },
            evidence: Evidence {
                text: text.into(),
                group_replies: vec![GroupReply {
                    interval,
                    text: text.into(),
                }],
                frames_used: 10,
            },
            context_tokens: 0,
            response_tokens: 0,
            auxiliary_tokens: 0,
            token_source: Default::default(),
        }
    }

    #[test]
    fn same_id_merges_without_duplicate_description() {
        let prev = update_rules(
            &SubjectRegistry::default(),
            &[item("S1", "man in red shirt", 0.0, 10.0)],
        );
        let next = update_rules(&prev, &[item("S1", "man in red shirt", 30.0, 40.0)]);
        let rec = next.get("S1").unwrap();
        assert_eq!(rec.descriptions, vec!["man in red shirt"]);
        assert_eq!(rec.appeared_intervals, vec![iv(0.0, 10.0), iv(30.0, 40.0)]);
    }

    #[test]
    fn oldest_latest_appearance_is_evicted() {
        let items: Vec<_> = (1..=15)
            .map(|k| item(&format!("S{k}"), "x", k as f64 * 100.0 - 10.0, k as f64 * 100.0))
            .collect();
        let prev = update_rules(&SubjectRegistry::default(), &items);
        assert_eq!(prev.len(), 15);
        let next = update_rules(&prev, &[item("NEW", "y", 1600.0, 1620.0)]);
        assert_eq!(next.len(), 15);
        assert!(next.get("NEW").is_some());
        assert!(next.get("S1").is_none());
        assert_eq!(next.iter().next().unwrap().0, "NEW");
    }

    #[test]
    fn empty_update_is_identity() {
        let empty = SubjectRegistry::default();
        assert_eq!(update_rules(&empty, &[]), empty);
    }

    #[test]
    fn current_turn_wins_ties() {
        let prev = update_rules(&SubjectRegistry::default(), &[item("OLD", "a", 0.0, 50.0)]);
        let next = update_rules(&prev, &[item("NEW", "b", 10.0, 50.0)]);
        assert_eq!(next.iter().map(|(k, _)| k.as_str()).collect::<Vec<_>>(), ["NEW", "OLD"]);
    }

    #[test]
    fn render_examples() {
        assert_eq!(render_registry(&SubjectRegistry::default()), "");
        let one = update_rules(
            &SubjectRegistry::default(),
            &[item("S1", "man in red shirt", 10.0, 20.0)],
        );
        assert_eq!(render_registry(&one), "S1: man in red shirt  seen: [10-20s]");
        let two = update_rules(&one, &[item("S2", "dog", 100.0, 120.5)]);
        let text = render_registry(&two);
        assert_eq!(text.lines().next().unwrap(), "S2: dog  seen: [100-120.5s]");
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn render_escapes_separators() {
        let reg = update_rules(
            &SubjectRegistry::default(),
            &[item("a:b", "x; y", 1.0, 2.0), item("c", "p\\q\nr  seen: [", 3.0, 4.0)],
        );
        assert_eq!(parse_rendered_registry(&render_registry(&reg)).unwrap(), reg);
    }

    #[test]
    fn llm_update_paths() {
        let t = turn_with(
            "[time: 10.0s] [time: 20.0s] man in red shirt waves (entities: man in red shirt)",
            iv(0.0, 30.0),
        );
        let prev = SubjectRegistry::default();

        let seventeen: Map<String, Value> = (0..17)
            .map(|k| {
                (
                    format!("S{k}"),
                    json!({"description": ["d"], "appeared_intervals": [format!("[{}, {}]", k * 10, k * 10 + 5)]}),
                )
            })
            .collect();
        let reply = json!({"updated_subject_registry": seventeen}).to_string();
        let out = update_llm(&prev, &t, &[], &Canned(reply));
        assert_eq!(out.registry.len(), 15);
        assert!(out.registry.get("S0").is_none() && out.registry.get("S1").is_none());

        let out = update_llm(&prev, &t, &[], &Canned("{}".into()));
        assert!(out.registry.is_empty());

        let seeded = update_rules(&prev, &[item("S1", "x", 0.0, 1.0)]);
        let out = update_llm(&seeded, &t, &[], &Canned("not json {".into()));
        assert_eq!(out.registry, seeded);

        let fenced = "```json\n{\"updated_subject_registry\": {\"S1\": {\"description\": [\"man in red shirt\"], \"appeared_intervals\": [\"[10, 20]\"]}}}\n```";
        let out = update_llm(&prev, &t, &[], &Canned(fenced.into()));
        assert_eq!(out.registry.get("S1").unwrap().appeared_intervals, vec![iv(10.0, 20.0)]);
    }

    #[test]
    fn rule_memory_extracts_from_oracle_lines() {
        let t = turn_with(
            "[time: 10.0s] [time: 20.0s] man in red shirt waves (entities: man in red shirt, flag)\nNo content",
            iv(0.0, 30.0),
        );
        let out = RuleBasedMemory.update(&SubjectRegistry::default(), &t, &[]);
        assert_eq!(out.registry.len(), 2);
        let rec = out.registry.get("man in red shirt").unwrap();
        assert_eq!(rec.descriptions, vec!["man in red shirt waves"]);
        assert_eq!(rec.appeared_intervals, vec![iv(10.0, 20.0)]);
    }

    #[test]
    fn json_round_trip() {
        let reg = update_rules(
            &SubjectRegistry::default(),
            &[
                item("S1", "a", 0.5, 10.25),
                item("S2", "b", 3.0, 4.0),
                item("S1", "c", 20.0, 30.0),
            ],
        );
        assert_eq!(SubjectRegistry::from_json(&reg.to_json()).unwrap(), reg);
    }

    fn arb_items() -> impl Strategy<Value = Vec<(String, String, TimeInterval)>> {
        prop::collection::vec(
            ("[A-Z][a-z:;]{0,4}", "[a-z ;\\\\]{1,8}", 0.0f64..1000.0, 0.1f64..100.0)
                .prop_map(|(id, d, s, w)| (id, d, iv(s, s + w))),
            0..30,
        )
    }

    proptest! {
        #[test]
        fn cap_and_idempotence(a in arb_items(), b in arb_items()) {
            let r1 = update_rules(&SubjectRegistry::default(), &a);
            prop_assert!(r1.len() <= MAX_SUBJECTS);
            let r2 = update_rules(&r1, &b);
            prop_assert!(r2.len() <= MAX_SUBJECTS);
            prop_assert_eq!(update_rules(&r2, &b), r2.clone());
            prop_assert_eq!(parse_rendered_registry(&render_registry(&r2)).unwrap(), r2);
        }
    }
}
