//! Prompt assets. `MAX_CALL`, `VIDEO_LENGTH` and `QUESTION_PLACEHOLDER` are
//! substituted when messages are built.

use crate::plan::ToolKind;

pub const PROMPT_VERSION: &str = "1";

pub const REASONER_SYSTEM: &str = include_str!("../../assets/prompts/reasoner_system.txt");
pub const REASONER_USER: &str = include_str!("../../assets/prompts/reasoner_user.txt");
pub const OBSERVER_SCAN: &str = include_str!("../../assets/prompts/observer_scan.txt");
pub const OBSERVER_SEGMENT: &str = include_str!("../../assets/prompts/observer_segment.txt");
pub const OBSERVER_STITCHED: &str = include_str!("../../assets/prompts/observer_stitched.txt");
pub const MEMORY_UPDATE: &str = include_str!("../../assets/prompts/memory_update.txt");

pub const REGISTRY_HEADER: &str = "Current subject registry:";

pub const CORRECTIVE_INSTRUCTION: &str = "Your previous reply did not contain a valid tool call. \
Respond with exactly one call to one of the provided tools: scan_observer, segment_observer, \
stitched_observer, or finish.";

pub fn observer_prompt(tool: ToolKind) -> &'static str {
    match tool {
        ToolKind::ScanSearch => OBSERVER_SCAN,
        ToolKind::SegmentFocus => OBSERVER_SEGMENT,
        ToolKind::StitchedVerify | ToolKind::Finish => OBSERVER_STITCHED,
    }
}
