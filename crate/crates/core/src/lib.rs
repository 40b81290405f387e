//! A video question-answering agent that loops reason → plan → observe:
//! a chat model plans parameterized observations, a toolkit samples frames
//! under strict budgets and queries a vision model, and timestamp anchors
//! plus a subject memory keep the turns coherent.

pub mod agent;
pub mod gateway;
pub mod harness;
pub mod memory;
pub mod plan;
pub mod sampling;
pub mod timeline;
pub mod toolkit;

pub use agent::{Agent, RunAccounting, RunConfig, RunError, RunResult, Termination};
pub use plan::{Evidence, GroupReply, ToolArgs, ToolCall, ToolKind, Turn};
pub use timeline::{SamplingConfig, ScriptedTimeline, StitchSegment, TimeInterval, TimelineEvent, VideoSource};
