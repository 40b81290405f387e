use std::sync::Arc;

use base64::Engine;
use serde_json::{json, Value};
use thiserror::Error;

use super::prompts;
use super::schema::{arguments_json, validate_args, SchemaViolation};
use crate::memory::{render_registry, SubjectRegistry};
use crate::plan::{ToolCall, ToolKind, Turn};
use crate::sampling::{AnchoredFrame, FramePayload};
use crate::timeline::{TimeInterval, VideoSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContentPart {
    Text(String),
    Image { mime: &'static str, data: Arc<Vec<u8>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatMessage {
    pub role: Role,
    pub parts: Vec<ContentPart>,
    /// Wire-shape tool calls on assistant messages.
    pub tool_calls: Vec<Value>,
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            parts: vec![ContentPart::Text(text.into())],
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }

    /// Concatenated text parts.
    pub fn text_content(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text(t) => Some(t.as_str()),
                ContentPart::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn image_count(&self) -> usize {
        self.parts
            .iter()
            .filter(|p| matches!(p, ContentPart::Image { .. }))
            .count()
    }

    /// OpenAI-compatible chat message JSON; images become base64 data URLs.
    pub fn to_openai(&self) -> Value {
        let content = match self.parts.as_slice() {
            [] => Value::Null,
            [ContentPart::Text(t)] => Value::String(t.clone()),
            parts => Value::Array(
                parts
                    .iter()
                    .map(|p| match p {
                        ContentPart::Text(t) => json!({"type": "text", "text": t}),
                        ContentPart::Image { mime, data } => {
                            let b64 = base64::engine::general_purpose::STANDARD.encode(data.as_slice());
                            json!({"type": "image_url", "image_url": {"url": format!("data:{mime};base64,{b64}")}})
                        }
                    })
                    .collect(),
            ),
        };
        let mut msg = json!({"role": self.role.as_str(), "content": content});
        if !self.tool_calls.is_empty() {
            msg["tool_calls"] = Value::Array(self.tool_calls.clone());
        }
        if let Some(id) = &self.tool_call_id {
            msg["tool_call_id"] = Value::String(id.clone());
        }
        msg
    }
}

pub fn call_id(turn_index: u32) -> String {
    format!("call_{turn_index}")
}

/// `{type: "function", function: {name, arguments}}` with JSON-string arguments.
pub fn tool_call_to_wire(call: &ToolCall) -> Value {
    json!({
        "id": call_id(call.turn_index),
        "type": "function",
        "function": {
            "name": call.tool().wire_name(),
            "arguments": arguments_json(call).to_string(),
        }
    })
}

/// An assistant message carrying exactly `call`.
pub fn assistant_message_json(call: &ToolCall) -> Value {
    json!({"role": "assistant", "content": Value::Null, "tool_calls": [tool_call_to_wire(call)]})
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("NoToolCall: response carries no tool call")]
    NoToolCall,
    #[error("UnknownTool: {0}")]
    UnknownTool(String),
    #[error("MalformedArguments: {0}")]
    MalformedArguments(String),
    #[error(transparent)]
    Schema(#[from] SchemaViolation),
}

/// Extracts the first tool call of an assistant message and validates it.
pub fn parse_tool_call(message: &Value, turn_index: u32) -> Result<ToolCall, ParseError> {
    let first = message
        .get("tool_calls")
        .and_then(Value::as_array)
        .and_then(|calls| calls.first())
        .ok_or(ParseError::NoToolCall)?;
    let function = first.get("function").ok_or(ParseError::NoToolCall)?;
    let name = function
        .get("name")
        .and_then(Value::as_str)
        .ok_or_else(|| ParseError::MalformedArguments("function.name missing".into()))?;
    let kind = ToolKind::from_wire_name(name).ok_or_else(|| ParseError::UnknownTool(name.to_string()))?;
    let args = match function.get("arguments") {
        Some(Value::String(s)) if s.trim().is_empty() => json!({}),
        Some(Value::String(s)) => {
            serde_json::from_str::<Value>(s).map_err(|e| ParseError::MalformedArguments(e.to_string()))?
        }
        Some(obj @ Value::Object(_)) => obj.clone(),
        Some(other) => return Err(ParseError::MalformedArguments(format!("unexpected arguments {other}"))),
        None => json!({}),
    };
    Ok(validate_args(kind, &args, turn_index)?)
}

fn format_length(duration_sec: f64) -> String {
    format!("{duration_sec}")
}

pub fn registry_block(registry: &SubjectRegistry) -> Option<ChatMessage> {
    if registry.is_empty() {
        return None;
    }
    Some(ChatMessage::text(
        Role::User,
        format!("{}\n{}", prompts::REGISTRY_HEADER, render_registry(registry)),
    ))
}

/// System prompt, user prompt, one assistant/tool pair per history turn,
/// then the current subject registry when it is non-empty.
pub fn build_reasoner_messages(
    query: &str,
    source: &VideoSource,
    history: &[Turn],
    registry: Option<&SubjectRegistry>,
    max_calls: u32,
) -> Vec<ChatMessage> {
    let mut user = prompts::REASONER_USER
        .trim_end()
        .replace("VIDEO_LENGTH", &format_length(source.duration_sec))
        .replace("QUESTION_PLACEHOLDER", query);
    if !source.metadata.trim().is_empty() {
        user.push_str("\nVideo information: ");
        user.push_str(source.metadata.trim());
    }
    let mut messages = vec![
        ChatMessage::text(
            Role::System,
            prompts::REASONER_SYSTEM
                .trim_end()
                .replace("MAX_CALL", &max_calls.to_string()),
        ),
        ChatMessage::text(Role::User, user),
    ];
    for turn in history {
        messages.push(ChatMessage {
            role: Role::Assistant,
            parts: Vec::new(),
            tool_calls: vec![tool_call_to_wire(&turn.plan)],
            tool_call_id: None,
        });
        messages.push(ChatMessage {
            role: Role::Tool,
            parts: vec![ContentPart::Text(turn.evidence.text.clone())],
            tool_calls: Vec::new(),
            tool_call_id: Some(call_id(turn.plan.turn_index)),
        });
    }
    if let Some(block) = registry.and_then(registry_block) {
        messages.push(block);
    }
    messages
}

pub fn corrective_message() -> ChatMessage {
    ChatMessage::text(Role::User, prompts::CORRECTIVE_INSTRUCTION)
}

fn describe_events(payload: &FramePayload) -> Option<String> {
    match payload {
        FramePayload::Image(_) => None,
        FramePayload::Events(events) if events.is_empty() => Some("[frame: no notable content]".into()),
        FramePayload::Events(events) => Some(format!(
            "[frame: {}]",
            events
                .iter()
                .map(|e| e.description.as_str())
                .collect::<Vec<_>>()
                .join("; ")
        )),
    }
}

/// Tool-matched system prompt, then each frame's anchor immediately before
/// its image in timestamp order, then the query.
pub fn build_observer_messages(
    tool: ToolKind,
    query: &str,
    frames: &[AnchoredFrame],
    _interval: &TimeInterval,
) -> Vec<ChatMessage> {
    let mut ordered: Vec<&AnchoredFrame> = frames.iter().collect();
    ordered.sort_by(|a, b| a.frame.timestamp_sec.total_cmp(&b.frame.timestamp_sec));
    let mut parts = Vec::with_capacity(frames.len() * 2 + 1);
    for f in ordered {
        if !f.anchor_text.is_empty() {
            parts.push(ContentPart::Text(f.anchor_text.clone()));
        }
        match &f.frame.payload {
            FramePayload::Image(data) => parts.push(ContentPart::Image {
                mime: "image/png",
                data: data.clone(),
            }),
            other => parts.extend(describe_events(other).map(ContentPart::Text)),
        }
    }
    parts.push(ContentPart::Text(query.to_string()));
    vec![
        ChatMessage::text(Role::System, prompts::observer_prompt(tool).trim_end()),
        ChatMessage {
            role: Role::User,
            parts,
            tool_calls: Vec::new(),
            tool_call_id: None,
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::update_rules;
    use crate::plan::{Evidence, SegmentArgs, TokenSource, ToolArgs};
    use crate::sampling::FrameRef;
    use crate::timeline::ScriptedTimeline;

    fn source() -> VideoSource {
        VideoSource::scripted(ScriptedTimeline {
            duration_sec: 600.0,
            metadata: String::new(),
            events: vec![],
        })
    }

    fn segment_turn(i: u32) -> Turn {
        Turn {
            plan: ToolCall {
                query: format!("q{i}"),
                args: ToolArgs::Segment(SegmentArgs {
                    interval: TimeInterval::new(10.0 * i as f64, 10.0 * i as f64 + 5.0).unwrap(),
                    fps: 1.0,
                    max_total_frames: 32,
                }),
                turn_index: i,
            },
            evidence: Evidence {
                text: format!("evidence {i}"),
                ..Evidence::default()
            },
            context_tokens: 0,
            response_tokens: 0,
            auxiliary_tokens: 0,
            token_source: TokenSource::Estimated,
        }
    }

    #[test]
    fn parse_finish() {
        let msg = json!({"tool_calls": [{"type": "function", "function": {"name": "finish", "arguments": "{\"answer\":\"B\"}"}}]});
        let call = parse_tool_call(&msg, 3).unwrap();
        assert_eq!(call.tool(), ToolKind::Finish);
        assert_eq!(call.query, "B");
        assert_eq!(call.turn_index, 3);
    }

    #[test]
    fn parse_rejections() {
        let unknown =
            json!({"tool_calls": [{"type": "function", "function": {"name": "teleport", "arguments": "{}"}}]});
        assert_eq!(
            parse_tool_call(&unknown, 1),
            Err(ParseError::UnknownTool("teleport".into()))
        );
        let none = json!({"role": "assistant", "content": "I think B"});
        assert_eq!(parse_tool_call(&none, 1), Err(ParseError::NoToolCall));
        let bad = json!({"tool_calls": [{"type": "function", "function": {"name": "finish", "arguments": "{oops"}}]});
        assert!(matches!(
            parse_tool_call(&bad, 1),
            Err(ParseError::MalformedArguments(_))
        ));
    }

    #[test]
    fn only_first_tool_call_is_honored() {
        let msg = json!({"tool_calls": [
            {"type": "function", "function": {"name": "finish", "arguments": "{\"answer\":\"A\"}"}},
            {"type": "function", "function": {"name": "finish", "arguments": "{\"answer\":\"C\"}"}}
        ]});
        assert_eq!(parse_tool_call(&msg, 1).unwrap().query, "A");
    }

    #[test]
    fn reasoner_message_counts() {
        let src = source();
        let empty = SubjectRegistry::default();
        let msgs = build_reasoner_messages("Which?", &src, &[], Some(&empty), 20);
        assert_eq!(msgs.len(), 2);
        assert!(msgs[0].text_content().contains("at most 20 tool calls"));
        assert!(msgs[1].text_content().contains("Total video length: 600 seconds."));
        assert!(msgs[1].text_content().contains("Question: Which?"));

        let history: Vec<Turn> = (1..=3).map(segment_turn).collect();
        let reg = update_rules(
            &SubjectRegistry::default(),
            &[(
                "S1".into(),
                "man in red shirt".into(),
                TimeInterval::new(1.0, 2.0).unwrap(),
            )],
        );
        let msgs = build_reasoner_messages("Which?", &src, &history, Some(&reg), 20);
        assert_eq!(msgs.len(), 2 + 3 * 2 + 1);
        let registry_blocks = msgs
            .iter()
            .filter(|m| m.text_content().starts_with(prompts::REGISTRY_HEADER))
            .count();
        assert_eq!(registry_blocks, 1);
        assert_eq!(msgs[2].role, Role::Assistant);
        assert_eq!(msgs[3].tool_call_id.as_deref(), Some("call_1"));
        assert_eq!(build_reasoner_messages("Which?", &src, &history, None, 20).len(), 8);
    }

    #[test]
    fn observer_messages_interleave_anchors() {
        let frame = |t: f64| {
            AnchoredFrame::new(
                FrameRef {
                    timestamp_sec: t,
                    payload: FramePayload::Image(Arc::new(vec![1, 2, 3])),
                },
                true,
            )
        };
        let iv = TimeInterval::new(0.0, 20.0).unwrap();
        let msgs = build_observer_messages(ToolKind::SegmentFocus, "what", &[frame(15.3), frame(5.1)], &iv);
        assert_eq!(msgs[0].text_content(), prompts::OBSERVER_SEGMENT.trim_end());
        let p = &msgs[1].parts;
        assert_eq!(p.len(), 5);
        assert_eq!(p[0], ContentPart::Text("[time: 5.1s]".into()));
        assert!(matches!(p[1], ContentPart::Image { .. }));
        assert_eq!(p[2], ContentPart::Text("[time: 15.3s]".into()));
        assert!(matches!(p[3], ContentPart::Image { .. }));
        assert_eq!(p[4], ContentPart::Text("what".into()));

        let scan = build_observer_messages(ToolKind::ScanSearch, "q", &[frame(1.0)], &iv);
        assert!(scan[0]
            .text_content()
            .contains("sparsely sampled video frames from a single segment"));
        let stitched = build_observer_messages(ToolKind::StitchedVerify, "q", &[frame(1.0)], &iv);
        assert!(stitched[0].text_content().contains("stitched\" collection of frames"));
    }

    #[test]
    fn openai_encoding_of_images() {
        let msg = ChatMessage {
            role: Role::User,
            parts: vec![
                ContentPart::Text("[time: 1.0s]".into()),
                ContentPart::Image {
                    mime: "image/png",
                    data: Arc::new(b"abc".to_vec()),
                },
            ],
            tool_calls: vec![],
            tool_call_id: None,
        };
        let v = msg.to_openai();
        assert_eq!(v["content"][1]["image_url"]["url"], "data:image/png;base64,YWJj");
    }
}
