//! The reason–plan–observe controller: asks the reasoner for a plan each
//! turn, executes it, updates subject memory, and keeps the books.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::backend::{ChatBackend, Observer, Usage};
use crate::gateway::messages::{build_reasoner_messages, parse_tool_call, ChatMessage, Role};
use crate::gateway::prompts::CORRECTIVE_INSTRUCTION;
use crate::gateway::schema::tools_json;
use crate::memory::{MemoryUpdater, RuleBasedMemory, SubjectRegistry};
use crate::plan::{Evidence, TokenSource, ToolCall, Turn};
use crate::sampling::FrameDecoder;
use crate::timeline::{SourceKind, VideoSource};
use crate::toolkit::{execute_tool, ToolDefaults, ToolkitConfig};

pub const DEFAULT_IMAGE_TOKENS: u64 = 256;
pub const UNKNOWN_ANSWER: &str = "unknown";

/// `ceil(chars / 4)`.
pub fn text_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

fn tool_call_chars(call: &Value) -> usize {
    let f = &call["function"];
    let name = f["name"].as_str().map_or(0, |s| s.chars().count());
    let args = match &f["arguments"] {
        Value::String(s) => s.chars().count(),
        Value::Null => 0,
        other => other.to_string().chars().count(),
    };
    name + args
}

/// `ceil(total text characters / 4) + images * image_cost`. Tool-call names
/// and arguments count as text.
pub fn token_estimate(messages: &[ChatMessage], image_cost: u64) -> u64 {
    let mut chars = 0usize;
    let mut images = 0u64;
    for m in messages {
        chars += m.text_content().chars().count();
        chars += m.tool_calls.iter().map(tool_call_chars).sum::<usize>();
        images += m.image_count() as u64;
    }
    (chars as u64).div_ceil(4) + images * image_cost
}

/// Estimated completion tokens of an assistant message.
pub fn reply_tokens(message: &Value) -> u64 {
    let mut chars = message["content"].as_str().map_or(0, |s| s.chars().count());
    if let Some(calls) = message["tool_calls"].as_array() {
        chars += calls.iter().map(tool_call_chars).sum::<usize>();
    }
    (chars as u64).div_ceil(4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub max_turns: u32,
    pub tool_defaults: ToolDefaults,
    pub memory_enabled: bool,
    pub scan_fanout: usize,
    pub anchors_enabled: bool,
    pub image_token_cost: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_turns: 20,
            tool_defaults: ToolDefaults::default(),
            memory_enabled: true,
            scan_fanout: 4,
            anchors_enabled: true,
            image_token_cost: DEFAULT_IMAGE_TOKENS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Finished,
    Exhausted,
    /// The reasoner twice failed to produce a usable tool call.
    ReasonerUnrecoverable,
    /// The reasoner backend returned an error.
    ReasonerFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunAccounting {
    pub total_tokens: u64,
    pub peak_context_tokens: u64,
    pub total_frames: u64,
    pub steps: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub answer: String,
    pub turns: Vec<Turn>,
    pub final_registry: SubjectRegistry,
    pub accounting: RunAccounting,
    pub termination: Termination,
    /// Why the run stopped early, for non-`Finished` endings.
    pub note: Option<String>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("SourceUnavailable: {0}")]
    SourceUnavailable(String),
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
}

pub struct Agent {
    pub reasoner: Arc<dyn ChatBackend>,
    pub observer: Arc<dyn Observer>,
    pub memory: Arc<dyn MemoryUpdater>,
    pub decoder: FrameDecoder,
    pub config: RunConfig,
}

struct PlanOutcome {
    call: Option<ToolCall>,
    context_tokens: u64,
    response_tokens: u64,
    /// Tokens of attempts that produced no usable plan.
    wasted_tokens: u64,
    reported: bool,
    failure: Option<(Termination, String)>,
}

impl Agent {
    pub fn new(reasoner: Arc<dyn ChatBackend>, observer: Arc<dyn Observer>, config: RunConfig) -> Self {
        Self {
            reasoner,
            observer,
            memory: Arc::new(RuleBasedMemory),
            decoder: FrameDecoder::default(),
            config,
        }
    }

    pub fn with_memory(mut self, memory: Arc<dyn MemoryUpdater>) -> Self {
        self.memory = memory;
        self
    }

    pub fn with_decoder(mut self, decoder: FrameDecoder) -> Self {
        self.decoder = decoder;
        self
    }

    fn toolkit_config(&self) -> ToolkitConfig {
        ToolkitConfig {
            defaults: self.config.tool_defaults,
            decoder: self.decoder.clone(),
            anchors_enabled: self.config.anchors_enabled,
            scan_fanout: self.config.scan_fanout,
            image_token_cost: self.config.image_token_cost,
        }
    }

    /// Asks for a plan, re-prompting once with a corrective instruction
    /// when the reply has no usable tool call.
    fn plan(&self, mut messages: Vec<ChatMessage>, turn_index: u32, tools: &Value) -> PlanOutcome {
        let mut out = PlanOutcome {
            call: None,
            context_tokens: 0,
            response_tokens: 0,
            wasted_tokens: 0,
            reported: true,
            failure: None,
        };
        for attempt in 0..2 {
            let reply = match self.reasoner.complete(&messages, Some(tools)) {
                Ok(r) => r,
                Err(e) => {
                    out.failure = Some((Termination::ReasonerFailed, e.to_string()));
                    return out;
                }
            };
            let usage = reply.usage.unwrap_or_else(|| {
                out.reported = false;
                Usage {
                    prompt_tokens: token_estimate(&messages, self.config.image_token_cost),
                    completion_tokens: reply_tokens(&reply.message),
                }
            });
            match parse_tool_call(&reply.message, turn_index) {
                Ok(call) => {
                    out.call = Some(call);
                    out.context_tokens = usage.prompt_tokens;
                    out.response_tokens = usage.completion_tokens;
                    return out;
                }
                Err(e) => {
                    out.wasted_tokens += usage.total();
                    if attempt == 1 {
                        out.failure = Some((Termination::ReasonerUnrecoverable, e.to_string()));
                        return out;
                    }
                    tracing::warn!(turn = turn_index, error = %e, "reasoner reply unusable; re-prompting");
                    if let Some(text) = reply.message["content"].as_str().filter(|t| !t.trim().is_empty()) {
                        messages.push(ChatMessage::text(Role::Assistant, text));
                    }
                    messages.push(ChatMessage::text(
                        Role::User,
                        format!("{CORRECTIVE_INSTRUCTION}\nProblem: {e}"),
                    ));
                }
            }
        }
        unreachable!("both attempts return")
    }

    pub fn run(&self, query: &str, source: &VideoSource) -> Result<RunResult, RunError> {
        if self.config.max_turns == 0 {
            return Err(RunError::InvalidConfig("max_turns must be at least 1".into()));
        }
        self.config
            .tool_defaults
            .validate()
            .map_err(|e| RunError::InvalidConfig(e.to_string()))?;
        if !(source.duration_sec > 0.0 && source.duration_sec.is_finite()) {
            return Err(RunError::SourceUnavailable(format!("duration {}", source.duration_sec)));
        }
        if let SourceKind::DecodedFile { path } = &source.kind {
            if !path.exists() {
                return Err(RunError::SourceUnavailable(format!(
                    "{} does not exist",
                    path.display()
                )));
            }
        }

        let tools = tools_json();
        let toolkit = self.toolkit_config();
        let mut turns: Vec<Turn> = Vec::new();
        let mut registry = SubjectRegistry::default();
        let mut unrecorded_tokens = 0u64;
        let mut answer = UNKNOWN_ANSWER.to_string();
        let mut termination = Termination::Exhausted;
        let mut note = None;

        for turn_index in 1..=self.config.max_turns {
            let messages = build_reasoner_messages(
                query,
                source,
                &turns,
                self.config.memory_enabled.then_some(&registry),
                self.config.max_turns,
            );
            let planned = self.plan(messages, turn_index, &tools);
            let Some(call) = planned.call else {
                unrecorded_tokens += planned.wasted_tokens;
                let (t, why) = planned.failure.expect("failure set when no call");
                termination = t;
                note = Some(why);
                break;
            };
            let mut reported = planned.reported;
            let mut auxiliary = planned.wasted_tokens;

            if call.is_finish() {
                answer = call.query.clone();
                termination = Termination::Finished;
                turns.push(Turn {
                    plan: call,
                    evidence: Evidence::empty(),
                    context_tokens: planned.context_tokens,
                    response_tokens: planned.response_tokens,
                    auxiliary_tokens: auxiliary,
                    token_source: source_of(reported),
                });
                break;
            }

            let evidence = match execute_tool(&call, source, self.observer.as_ref(), &toolkit) {
                Ok(out) => {
                    auxiliary += out.observer_tokens;
                    reported &= out.tokens_reported;
                    out.evidence
                }
                Err(e) => {
                    tracing::warn!(turn = turn_index, error = %e, "tool execution failed");
                    Evidence::tool_error(e)
                }
            };
            let mut turn = Turn {
                plan: call,
                evidence,
                context_tokens: planned.context_tokens,
                response_tokens: planned.response_tokens,
                auxiliary_tokens: auxiliary,
                token_source: TokenSource::Estimated,
            };
            if self.config.memory_enabled {
                let outcome = self.memory.update(&registry, &turn, &turns);
                match outcome.usage {
                    Some(u) => turn.auxiliary_tokens += u.total(),
                    None => {
                        if outcome.estimated_tokens > 0 {
                            reported = false;
                        }
                        turn.auxiliary_tokens += outcome.estimated_tokens;
                    }
                }
                registry = outcome.registry;
            }
            turn.token_source = source_of(reported);
            turns.push(turn);
        }

        let accounting = RunAccounting {
            total_tokens: unrecorded_tokens
                + turns
                    .iter()
                    .map(|t| t.context_tokens + t.response_tokens + t.auxiliary_tokens)
                    .sum::<u64>(),
            peak_context_tokens: turns.iter().map(|t| t.context_tokens).max().unwrap_or(0),
            total_frames: turns.iter().map(|t| t.evidence.frames_used as u64).sum(),
            steps: turns.len() as u32,
        };
        Ok(RunResult {
            answer,
            turns,
            final_registry: registry,
            accounting,
            termination,
            note,
        })
    }
}

fn source_of(reported: bool) -> TokenSource {
    if reported {
        TokenSource::Reported
    } else {
        TokenSource::Estimated
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::backend::{BackendError, ChatReply};
    use crate::gateway::messages::ContentPart;
    use crate::gateway::oracle::TimelineOracle;
    use crate::gateway::scripted::{ScriptedPolicy, ScriptedStep};
    use crate::plan::{SegmentArgs, ToolArgs};
    use crate::timeline::{ScriptedTimeline, TimeInterval, TimelineEvent};
    use std::sync::Mutex;

    fn source() -> VideoSource {
        VideoSource::scripted(ScriptedTimeline {
            duration_sec: 600.0,
            metadata: String::new(),
            events: vec![TimelineEvent {
                start_sec: 100.0,
                end_sec: 140.0,
                description: "a purple acrobat juggles torches".into(),
                entities: vec!["purple acrobat".into()],
            }],
        })
    }

    fn focus(s: f64, e: f64) -> ToolCall {
        ToolCall {
            query: "what does the purple acrobat do".into(),
            args: ToolArgs::Segment(SegmentArgs {
                interval: TimeInterval::new(s, e).unwrap(),
                fps: 1.0,
                max_total_frames: 32,
            }),
            turn_index: 1,
        }
    }

    fn agent(policy: ScriptedPolicy, config: RunConfig) -> Agent {
        Agent::new(Arc::new(policy), Arc::new(TimelineOracle), config)
    }

    #[test]
    fn estimate_examples() {
        assert_eq!(token_estimate(&[], 256), 0);
        assert_eq!(
            token_estimate(&[ChatMessage::text(Role::User, "x".repeat(400))], 256),
            100
        );
        let img = ContentPart::Image {
            mime: "image/png",
            data: Arc::new(vec![1, 2, 3]),
        };
        let m = ChatMessage {
            role: Role::User,
            parts: vec![ContentPart::Text("y".repeat(40)), img.clone(), img],
            tool_calls: vec![],
            tool_call_id: None,
        };
        assert_eq!(token_estimate(&[m], 256), 522);
    }

    #[test]
    fn immediate_finish() {
        let r = agent(
            ScriptedPolicy::new(vec![ScriptedStep::Call(ToolCall::finish("C"))]),
            RunConfig::default(),
        )
        .run("q", &source())
        .unwrap();
        assert_eq!(r.answer, "C");
        assert_eq!(r.turns.len(), 1);
        assert_eq!(r.accounting.total_frames, 0);
        assert_eq!(r.termination, Termination::Finished);
    }

    #[test]
    fn never_finishing_policy_exhausts() {
        let policy = ScriptedPolicy::cycling(vec![ScriptedStep::Call(focus(100.0, 130.0))]);
        let r = agent(policy, RunConfig::default()).run("q", &source()).unwrap();
        assert_eq!(r.turns.len(), 20);
        assert_eq!(r.answer, UNKNOWN_ANSWER);
        assert_eq!(r.termination, Termination::Exhausted);
        assert_eq!(r.accounting.total_frames, 20 * 30);
        assert_eq!(
            r.accounting.peak_context_tokens,
            r.turns.iter().map(|t| t.context_tokens).max().unwrap()
        );
        assert!(r.accounting.peak_context_tokens <= r.accounting.total_tokens);
        assert!(r.final_registry.get("purple acrobat").is_some());
    }

    #[test]
    fn single_retry_then_success() {
        let policy = ScriptedPolicy::new(vec![
            ScriptedStep::NoToolCall("thinking".into()),
            ScriptedStep::Call(ToolCall::finish("B")),
        ]);
        let r = agent(policy, RunConfig::default()).run("q", &source()).unwrap();
        assert_eq!(r.answer, "B");
        assert_eq!(r.turns.len(), 1);
        assert!(r.turns[0].auxiliary_tokens > 0);
    }

    #[test]
    fn double_failure_is_unrecoverable() {
        let policy = ScriptedPolicy::new(vec![
            ScriptedStep::Call(focus(0.0, 10.0)),
            ScriptedStep::NoToolCall("a".into()),
            ScriptedStep::NoToolCall("b".into()),
        ]);
        let r = agent(policy, RunConfig::default()).run("q", &source()).unwrap();
        assert_eq!(r.answer, UNKNOWN_ANSWER);
        assert_eq!(r.turns.len(), 1);
        assert_eq!(r.termination, Termination::ReasonerUnrecoverable);
        assert!(r.accounting.total_tokens > r.turns[0].context_tokens + r.turns[0].response_tokens);
    }

    #[test]
    fn tool_errors_are_returned_as_evidence() {
        let policy = ScriptedPolicy::new(vec![
            ScriptedStep::Call(focus(700.0, 710.0)),
            ScriptedStep::Call(ToolCall::finish("A")),
        ]);
        let r = agent(policy, RunConfig::default()).run("q", &source()).unwrap();
        assert!(r.turns[0].evidence.text.starts_with("Tool error:"));
        assert_eq!(r.answer, "A");
    }

    struct Recording(Mutex<Vec<usize>>, ScriptedPolicy);
    impl ChatBackend for Recording {
        fn complete(&self, m: &[ChatMessage], t: Option<&Value>) -> Result<ChatReply, BackendError> {
            self.0.lock().unwrap().push(m.len());
            self.1.complete(m, t)
        }
    }

    struct CountingMemory(Mutex<u32>);
    impl MemoryUpdater for CountingMemory {
        fn update(&self, prev: &SubjectRegistry, t: &Turn, h: &[Turn]) -> crate::memory::MemoryOutcome {
            *self.0.lock().unwrap() += 1;
            RuleBasedMemory.update(prev, t, h)
        }
    }

    #[test]
    fn finish_skips_memory_and_history_grows() {
        let rec = Arc::new(Recording(
            Mutex::new(vec![]),
            ScriptedPolicy::new(vec![
                ScriptedStep::Call(focus(100.0, 130.0)),
                ScriptedStep::Call(focus(0.0, 20.0)),
                ScriptedStep::Call(ToolCall::finish("D")),
            ]),
        ));
        let memory = Arc::new(CountingMemory(Mutex::new(0)));
        let a = Agent::new(rec.clone(), Arc::new(TimelineOracle), RunConfig::default()).with_memory(memory.clone());
        let r = a.run("q", &source()).unwrap();
        assert_eq!(r.turns.len(), 3);
        assert_eq!(*memory.0.lock().unwrap(), 2);
        // system + user, then one pair per turn plus the registry block.
        assert_eq!(*rec.0.lock().unwrap(), vec![2, 5, 7]);
    }

    #[test]
    fn runs_are_deterministic() {
        let steps = vec![
            ScriptedStep::Call(focus(100.0, 130.0)),
            ScriptedStep::Call(ToolCall::finish("A")),
        ];
        let a = agent(ScriptedPolicy::new(steps.clone()), RunConfig::default())
            .run("q", &source())
            .unwrap();
        let b = agent(ScriptedPolicy::new(steps), RunConfig::default())
            .run("q", &source())
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_video_is_unavailable() {
        let src = VideoSource {
            kind: SourceKind::DecodedFile {
                path: "/nonexistent/video.mp4".into(),
            },
            duration_sec: 10.0,
            metadata: String::new(),
        };
        let a = agent(ScriptedPolicy::new(vec![]), RunConfig::default());
        assert!(matches!(a.run("q", &src), Err(RunError::SourceUnavailable(_))));
    }
}
