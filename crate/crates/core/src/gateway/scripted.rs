//! Reasoners that need no model: a fixed step list, and a scan-then-focus
//! policy that reads its own tool results.

use serde_json::{json, Value};

use super::backend::{BackendError, ChatBackend, ChatReply};
use super::messages::{assistant_message_json, ChatMessage, Role};
use super::oracle::NO_RELEVANT_CONTENT;
use super::prompts::CORRECTIVE_INSTRUCTION;
use crate::plan::{ScanArgs, SegmentArgs, ToolArgs, ToolCall};
use crate::sampling::parse_anchors;
use crate::timeline::TimeInterval;

#[derive(Debug, Clone, PartialEq)]
pub enum ScriptedStep {
    Call(ToolCall),
    /// A reply with no tool call, carrying this text.
    NoToolCall(String),
}

/// Steps consumed one per reasoner request. Completed turns and corrective
/// re-prompts found in the conversation each advance the position, so the
/// policy holds no state.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedPolicy {
    pub steps: Vec<ScriptedStep>,
    /// Restart from the first step after the last; otherwise reply with no
    /// tool call once the steps run out.
    pub cycle: bool,
}

impl ScriptedPolicy {
    pub fn new(steps: Vec<ScriptedStep>) -> Self {
        Self { steps, cycle: false }
    }

    pub fn cycling(steps: Vec<ScriptedStep>) -> Self {
        Self { steps, cycle: true }
    }

    pub fn from_calls(calls: impl IntoIterator<Item = ToolCall>) -> Self {
        Self::new(calls.into_iter().map(ScriptedStep::Call).collect())
    }
}

fn is_corrective(m: &ChatMessage) -> bool {
    m.role == Role::User && m.text_content().starts_with(CORRECTIVE_INSTRUCTION)
}

/// Requests already answered in this conversation.
fn position(messages: &[ChatMessage]) -> usize {
    messages
        .iter()
        .filter(|m| m.role == Role::Tool || is_corrective(m))
        .count()
}

fn text_reply(text: &str) -> ChatReply {
    ChatReply {
        message: json!({"role": "assistant", "content": text}),
        usage: None,
    }
}

fn call_reply(call: &ToolCall) -> ChatReply {
    ChatReply {
        message: assistant_message_json(call),
        usage: None,
    }
}

impl ChatBackend for ScriptedPolicy {
    fn complete(&self, messages: &[ChatMessage], _tools: Option<&Value>) -> Result<ChatReply, BackendError> {
        let mut idx = position(messages);
        if self.cycle && !self.steps.is_empty() {
            idx %= self.steps.len();
        }
        Ok(match self.steps.get(idx) {
            Some(ScriptedStep::Call(call)) => call_reply(call),
            Some(ScriptedStep::NoToolCall(text)) => text_reply(text),
            None => text_reply("No further steps."),
        })
    }
}

/// Scans the whole video in six slices, focuses on the first slice whose
/// observation cites anchors, then answers with the option whose text
/// appears earliest in the focused observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanFocusPolicy {
    pub num_slices: u32,
    /// Seconds added on each side of the cited anchors.
    pub focus_margin_sec: f64,
}

impl Default for ScanFocusPolicy {
    fn default() -> Self {
        Self {
            num_slices: 6,
            focus_margin_sec: 15.0,
        }
    }
}

struct Prompt {
    duration: f64,
    question: String,
    options: Vec<(String, String)>,
}

fn read_prompt(messages: &[ChatMessage]) -> Option<Prompt> {
    let user = messages.iter().find(|m| m.role == Role::User)?.text_content();
    let mut duration = None;
    let mut question = None;
    let mut options = Vec::new();
    for line in user.lines() {
        if let Some(rest) = line.strip_prefix("Total video length: ") {
            duration = rest.trim_end_matches(" seconds.").trim().parse::<f64>().ok();
        } else if let Some(rest) = line.strip_prefix("Question: ") {
            question = Some(rest.trim().to_string());
        } else if question.is_some() {
            let mut chars = line.chars();
            if let (Some(letter), Some('.')) = (chars.next(), chars.next()) {
                if letter.is_ascii_uppercase() {
                    options.push((letter.to_string(), chars.as_str().trim().to_string()));
                }
            }
        }
    }
    Some(Prompt {
        duration: duration?,
        question: question?,
        options,
    })
}

/// Splits aggregated evidence back into `(interval, body)` sections.
pub fn split_sections(evidence: &str) -> Vec<(TimeInterval, String)> {
    let mut out: Vec<(TimeInterval, String)> = Vec::new();
    for line in evidence.lines() {
        let header = line
            .strip_prefix("=== Segment [")
            .and_then(|r| r.strip_suffix("s] ==="))
            .and_then(|r| r.split_once("s - "))
            .and_then(|(a, b)| TimeInterval::new(a.parse().ok()?, b.parse().ok()?).ok());
        match (header, out.last_mut()) {
            (Some(iv), _) => out.push((iv, String::new())),
            (None, Some((_, body))) => {
                if !body.is_empty() {
                    body.push('\n');
                }
                body.push_str(line);
            }
            (None, None) => {}
        }
    }
    out
}

impl ScanFocusPolicy {
    fn focus_target(&self, evidence: &str) -> Option<TimeInterval> {
        split_sections(evidence).into_iter().find_map(|(slice, body)| {
            if body.trim() == NO_RELEVANT_CONTENT || body.contains("[observer error") {
                return None;
            }
            let anchors = parse_anchors(&body);
            let lo = anchors.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = anchors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if anchors.is_empty() {
                return None;
            }
            let s = (lo - self.focus_margin_sec).max(slice.start_sec);
            let e = (hi + self.focus_margin_sec).min(slice.end_sec);
            TimeInterval::new(s, e).ok()
        })
    }

    fn pick_option(options: &[(String, String)], evidence: &str) -> String {
        let evidence = evidence.to_lowercase();
        options
            .iter()
            .filter(|(_, text)| !text.is_empty())
            .filter_map(|(letter, text)| evidence.find(&text.to_lowercase()).map(|pos| (pos, letter)))
            .min_by_key(|(pos, _)| *pos)
            .map(|(_, letter)| letter.clone())
            .unwrap_or_else(|| crate::agent::UNKNOWN_ANSWER.to_string())
    }
}

impl ChatBackend for ScanFocusPolicy {
    fn complete(&self, messages: &[ChatMessage], _tools: Option<&Value>) -> Result<ChatReply, BackendError> {
        let prompt = read_prompt(messages)
            .ok_or_else(|| BackendError::InvalidResponse("user prompt lacks video length or question".into()))?;
        let results: Vec<String> = messages
            .iter()
            .filter(|m| m.role == Role::Tool)
            .map(|m| m.text_content())
            .collect();
        let turn_index = results.len() as u32 + 1;
        let call = match results.len() {
            0 => ToolCall {
                query: prompt.question,
                args: ToolArgs::Scan(ScanArgs {
                    global_interval: TimeInterval::new(0.0, prompt.duration)
                        .map_err(|e| BackendError::InvalidResponse(e.to_string()))?,
                    num_slices: Some(self.num_slices),
                    slice_duration_sec: None,
                    fps: 0.25,
                    max_total_frames: 180,
                }),
                turn_index,
            },
            1 => match self.focus_target(&results[0]) {
                Some(iv) => ToolCall {
                    query: prompt.question,
                    args: ToolArgs::Segment(SegmentArgs {
                        interval: iv,
                        fps: 1.0,
                        max_total_frames: 32,
                    }),
                    turn_index,
                },
                None => ToolCall::finish(crate::agent::UNKNOWN_ANSWER),
            },
            _ => ToolCall::finish(Self::pick_option(&prompt.options, results.last().unwrap())),
        };
        Ok(call_reply(&call))
    }
}
