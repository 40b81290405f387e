//! Observation plans emitted by the reasoner and the records a run keeps
//! about them.

use serde::{Deserialize, Serialize};

use crate::timeline::{StitchSegment, TimeInterval};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ToolKind {
    ScanSearch,
    SegmentFocus,
    StitchedVerify,
    Finish,
}

impl ToolKind {
    pub const ALL: [ToolKind; 4] = [
        ToolKind::ScanSearch,
        ToolKind::SegmentFocus,
        ToolKind::StitchedVerify,
        ToolKind::Finish,
    ];

    /// Function name on the wire.
    pub fn wire_name(self) -> &'static str {
        match self {
            ToolKind::ScanSearch => "scan_observer",
            ToolKind::SegmentFocus => "segment_observer",
            ToolKind::StitchedVerify => "stitched_observer",
            ToolKind::Finish => "finish",
        }
    }

    pub fn from_wire_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.wire_name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanArgs {
    pub global_interval: TimeInterval,
    pub num_slices: Option<u32>,
    pub slice_duration_sec: Option<f64>,
    pub fps: f64,
    pub max_total_frames: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentArgs {
    pub interval: TimeInterval,
    pub fps: f64,
    pub max_total_frames: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StitchArgs {
    pub segments: Vec<StitchSegment>,
    pub global_interval: Option<TimeInterval>,
    /// Call-level rate; per-segment rates drive sampling.
    pub fps: f64,
    pub max_total_frames: u32,
}

/// Tool-specific arguments: the scope controls and tool settings of a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ToolArgs {
    Scan(ScanArgs),
    Segment(SegmentArgs),
    Stitch(StitchArgs),
    Finish,
}

/// A fully specified observation plan. For `Finish` the query carries the
/// final answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub query: String,
    pub args: ToolArgs,
    pub turn_index: u32,
}

impl ToolCall {
    pub fn tool(&self) -> ToolKind {
        match self.args {
            ToolArgs::Scan(_) => ToolKind::ScanSearch,
            ToolArgs::Segment(_) => ToolKind::SegmentFocus,
            ToolArgs::Stitch(_) => ToolKind::StitchedVerify,
            ToolArgs::Finish => ToolKind::Finish,
        }
    }

    pub fn finish(answer: impl Into<String>) -> Self {
        Self {
            query: answer.into(),
            args: ToolArgs::Finish,
            turn_index: 1,
        }
    }

    pub fn is_finish(&self) -> bool {
        matches!(self.args, ToolArgs::Finish)
    }

    /// The temporal extent the plan asks to look at, `None` for `Finish`.
    pub fn scope(&self) -> Option<TimeInterval> {
        match &self.args {
            ToolArgs::Scan(a) => Some(a.global_interval),
            ToolArgs::Segment(a) => Some(a.interval),
            ToolArgs::Stitch(a) => TimeInterval::hull(a.segments.iter().map(|s| &s.interval)),
            ToolArgs::Finish => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReply {
    pub interval: TimeInterval,
    pub text: String,
}

/// Aggregated observation returned by one tool execution.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Evidence {
    pub text: String,
    pub group_replies: Vec<GroupReply>,
    pub frames_used: u32,
}

impl Evidence {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Evidence for a plan that could not be executed; the reasoner sees
    /// the message and may re-plan.
    pub fn tool_error(message: impl std::fmt::Display) -> Self {
        Self {
            text: format!("Tool error: {message}"),
            group_replies: Vec::new(),
            frames_used: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenSource {
    Reported,
    #[default]
    Estimated,
}

/// One history entry: the plan, what it observed, and its token cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub plan: ToolCall,
    pub evidence: Evidence,
    /// Tokens visible to the reasoner when it produced `plan`.
    pub context_tokens: u64,
    pub response_tokens: u64,
    /// Observer and memory-updater tokens spent executing the plan.
    #[serde(default)]
    pub auxiliary_tokens: u64,
    #[serde(default)]
    pub token_source: TokenSource,
}
