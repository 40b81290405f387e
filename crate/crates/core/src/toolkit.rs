//! Observation tools: context-group construction per tool, per-group
//! observer queries, and temporal-order aggregation.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::backend::{ObservationRequest, Observer};
use crate::gateway::messages::build_observer_messages;
use crate::plan::{Evidence, GroupReply, ToolArgs, ToolCall, ToolKind};
use crate::sampling::{
    extract_frames, format_secs, frame_count, rescale_budgets, sample_timestamps, AnchoredFrame, FrameDecoder,
    SamplingError,
};
use crate::timeline::{SamplingConfig, StitchSegment, TimeInterval, TimelineError, VideoSource};

#[derive(Debug, Error)]
pub enum ToolkitError {
    #[error("InvalidPartition: give exactly one of num_slices or slice_duration_sec")]
    InvalidPartition,
    #[error("DegenerateSlice: slice {index} of the scan would be empty")]
    DegenerateSlice { index: usize },
    #[error(transparent)]
    Timeline(#[from] TimelineError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("ToolExecutionFailed: every context group failed ({0})")]
    ToolExecutionFailed(String),
    #[error("finish is not an observation tool")]
    NotObservable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanDefaults {
    pub per_slice_frames: u32,
    pub fps: f64,
    pub max_total_frames: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentDefaults {
    pub fps: f64,
    pub max_total_frames: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StitchDefaults {
    pub global_fps: f64,
    pub per_segment_fps: f64,
    pub max_total_frames: u32,
}

/// Per-tool frame caps. The `max_total_frames` values are ceilings: a call
/// asking for more is held to them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolDefaults {
    pub scan: ScanDefaults,
    pub segment: SegmentDefaults,
    pub stitch: StitchDefaults,
}

impl Default for ToolDefaults {
    fn default() -> Self {
        Self {
            scan: ScanDefaults {
                per_slice_frames: 30,
                fps: 0.25,
                max_total_frames: 180,
            },
            segment: SegmentDefaults {
                fps: 1.0,
                max_total_frames: 32,
            },
            stitch: StitchDefaults {
                global_fps: 0.5,
                per_segment_fps: 1.0,
                max_total_frames: 128,
            },
        }
    }
}

impl ToolDefaults {
    pub fn validate(&self) -> Result<(), TimelineError> {
        SamplingConfig::new(self.scan.fps, self.scan.max_total_frames)?;
        SamplingConfig::new(self.scan.fps, self.scan.per_slice_frames)?;
        SamplingConfig::new(self.segment.fps, self.segment.max_total_frames)?;
        SamplingConfig::new(self.stitch.global_fps, self.stitch.max_total_frames)?;
        SamplingConfig::new(self.stitch.per_segment_fps, self.stitch.max_total_frames)?;
        Ok(())
    }

    pub fn cap_for(&self, tool: ToolKind) -> u32 {
        match tool {
            ToolKind::ScanSearch => self.scan.max_total_frames,
            ToolKind::SegmentFocus => self.segment.max_total_frames,
            ToolKind::StitchedVerify => self.stitch.max_total_frames,
            ToolKind::Finish => 0,
        }
    }
}

/// A context group before frames are extracted.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSpec {
    pub interval: TimeInterval,
    pub sampling: SamplingConfig,
    pub timestamps: Vec<f64>,
}

/// A batch of anchored frames shown to the observer in one query.
#[derive(Debug, Clone)]
pub struct ContextGroup {
    pub interval: TimeInterval,
    pub sampling: SamplingConfig,
    pub frames: Vec<AnchoredFrame>,
}

/// Equal-width slices or fixed-duration slices with a truncated last one,
/// each sampled at `min(per_slice_cap, floor(span * fps))` frames before
/// rescaling against `max_total`.
pub fn build_scan_groups(
    global_iv: &TimeInterval,
    num_slices: Option<u32>,
    slice_duration_sec: Option<f64>,
    fps: f64,
    max_total: u32,
    per_slice_cap: u32,
) -> Result<Vec<GroupSpec>, ToolkitError> {
    global_iv.validate()?;
    let width = global_iv.span();
    let count = match (num_slices, slice_duration_sec) {
        (Some(n), None) if n >= 1 => n as f64,
        (None, Some(d)) if d > 0.0 && d.is_finite() => (width / d - 1e-9).ceil().max(1.0),
        _ => return Err(ToolkitError::InvalidPartition),
    };
    // Every slice needs at least one frame.
    if count > max_total as f64 {
        return Err(SamplingError::CapTooSmall {
            cap: max_total,
            segments: count as usize,
        }
        .into());
    }
    let count = count as usize;
    let boundary = |k: usize| -> f64 {
        if k >= count {
            return global_iv.end_sec;
        }
        match slice_duration_sec {
            Some(d) => (global_iv.start_sec + k as f64 * d).min(global_iv.end_sec),
            None => global_iv.start_sec + width * k as f64 / count as f64,
        }
    };
    let mut slices = Vec::with_capacity(count);
    for k in 0..count {
        let (s, e) = (boundary(k), boundary(k + 1));
        if e <= s {
            return Err(ToolkitError::DegenerateSlice { index: k });
        }
        slices.push(TimeInterval {
            start_sec: s,
            end_sec: e,
        });
    }
    let requested: Vec<u32> = slices.iter().map(|s| frame_count(s, fps, per_slice_cap)).collect();
    let budgets = rescale_budgets(&requested, max_total)?;
    Ok(slices
        .into_iter()
        .zip(budgets)
        .map(|(iv, n)| GroupSpec {
            interval: iv,
            sampling: SamplingConfig { fps, max_frames: n },
            timestamps: sample_timestamps(&iv, n),
        })
        .collect())
}

pub fn build_segment_group(iv: &TimeInterval, fps: f64, max_total: u32) -> Result<GroupSpec, ToolkitError> {
    iv.validate()?;
    let n = frame_count(iv, fps, max_total);
    Ok(GroupSpec {
        interval: *iv,
        sampling: SamplingConfig {
            fps,
            max_frames: max_total,
        },
        timestamps: sample_timestamps(iv, n),
    })
}

/// Merges per-segment samples into one timestamp-sorted group spanning the
/// hull of the segments. Segments must already be clamped.
pub fn build_stitch_group(segments: &[StitchSegment], fps: f64, max_total: u32) -> Result<GroupSpec, ToolkitError> {
    let hull = TimeInterval::hull(segments.iter().map(|s| &s.interval)).ok_or(SamplingError::CapTooSmall {
        cap: max_total,
        segments: 0,
    })?;
    let requested: Vec<u32> = segments
        .iter()
        .map(|s| frame_count(&s.interval, s.fps, max_total))
        .collect();
    let budgets = rescale_budgets(&requested, max_total)?;
    let mut timestamps: Vec<f64> = segments
        .iter()
        .zip(&budgets)
        .flat_map(|(s, &n)| sample_timestamps(&s.interval, n))
        .collect();
    timestamps.sort_by(f64::total_cmp);
    Ok(GroupSpec {
        interval: hull,
        sampling: SamplingConfig {
            fps,
            max_frames: max_total,
        },
        timestamps,
    })
}

fn intersect(a: &TimeInterval, b: &TimeInterval) -> Result<TimeInterval, TimelineError> {
    let (s, e) = (a.start_sec.max(b.start_sec), a.end_sec.min(b.end_sec));
    if e <= s {
        return Err(TimelineError::EmptyIntersection {
            start: a.start_sec,
            duration: b.end_sec,
        });
    }
    Ok(TimeInterval {
        start_sec: s,
        end_sec: e,
    })
}

/// Clamps the call's scope to the video and builds its group specs.
pub fn plan_groups(
    call: &ToolCall,
    duration_sec: f64,
    defaults: &ToolDefaults,
) -> Result<Vec<GroupSpec>, ToolkitError> {
    let cap = |requested: u32, ceiling: u32| requested.min(ceiling).max(1);
    match &call.args {
        ToolArgs::Scan(a) => build_scan_groups(
            &a.global_interval.clamp(duration_sec)?,
            a.num_slices,
            a.slice_duration_sec,
            a.fps,
            cap(a.max_total_frames, defaults.scan.max_total_frames),
            defaults.scan.per_slice_frames,
        ),
        ToolArgs::Segment(a) => Ok(vec![build_segment_group(
            &a.interval.clamp(duration_sec)?,
            a.fps,
            cap(a.max_total_frames, defaults.segment.max_total_frames),
        )?]),
        ToolArgs::Stitch(a) => {
            let mut segments = Vec::with_capacity(a.segments.len());
            for seg in &a.segments {
                let iv = match &a.global_interval {
                    Some(g) => intersect(&seg.interval, g)?,
                    None => seg.interval,
                };
                segments.push(StitchSegment {
                    interval: iv.clamp(duration_sec)?,
                    fps: seg.fps,
                });
            }
            Ok(vec![build_stitch_group(
                &segments,
                a.fps,
                cap(a.max_total_frames, defaults.stitch.max_total_frames),
            )?])
        }
        ToolArgs::Finish => Err(ToolkitError::NotObservable),
    }
}

/// Headed group replies in temporal order (start, then end), blank-line
/// separated.
pub fn aggregate(replies: &[GroupReply]) -> String {
    let mut ordered: Vec<&GroupReply> = replies.iter().collect();
    ordered.sort_by(|a, b| a.interval.temporal_cmp(&b.interval));
    ordered
        .iter()
        .map(|r| {
            format!(
                "=== Segment [{}s - {}s] ===\n{}",
                format_secs(r.interval.start_sec),
                format_secs(r.interval.end_sec),
                r.text
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[derive(Debug, Clone, Default)]
pub struct ToolkitConfig {
    pub defaults: ToolDefaults,
    pub decoder: FrameDecoder,
    pub anchors_enabled: bool,
    /// Concurrent observer queries for Scan groups.
    pub scan_fanout: usize,
    /// Token charge per image when the observer reports no usage.
    pub image_token_cost: u64,
}

/// Evidence plus observer token spend for one tool execution.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolOutput {
    pub evidence: Evidence,
    pub observer_tokens: u64,
    /// True when every successful group's tokens came from the backend.
    pub tokens_reported: bool,
}

struct GroupOutcome {
    reply: GroupReply,
    frames: u32,
    tokens: u64,
    reported: bool,
    failed: Option<String>,
}

fn run_group(
    spec: &GroupSpec,
    tool: ToolKind,
    query: &str,
    source: &VideoSource,
    observer: &dyn Observer,
    config: &ToolkitConfig,
) -> GroupOutcome {
    let fail = |msg: String, frames: u32| GroupOutcome {
        reply: GroupReply {
            interval: spec.interval,
            text: format!("[observer error: {msg}]"),
        },
        frames,
        tokens: 0,
        reported: true,
        failed: Some(msg),
    };
    let frames = match extract_frames(source, &spec.timestamps, &config.decoder) {
        Ok(f) => f,
        Err(e) => return fail(e.to_string(), 0),
    };
    let frames: Vec<AnchoredFrame> = frames
        .into_iter()
        .map(|f| AnchoredFrame::new(f, config.anchors_enabled))
        .collect();
    let group = ContextGroup {
        interval: spec.interval,
        sampling: spec.sampling,
        frames,
    };
    let messages = build_observer_messages(tool, query, &group.frames, &group.interval);
    let request = ObservationRequest {
        tool,
        query,
        interval: group.interval,
        frames: &group.frames,
        messages: &messages,
    };
    let n = group.frames.len() as u32;
    match observer.observe(&request) {
        Ok(reply) => {
            let (tokens, reported) = match reply.usage {
                Some(u) => (u.total(), true),
                None => (
                    crate::agent::token_estimate(&messages, config.image_token_cost)
                        + crate::agent::text_tokens(&reply.text),
                    false,
                ),
            };
            GroupOutcome {
                reply: GroupReply {
                    interval: group.interval,
                    text: reply.text,
                },
                frames: n,
                tokens,
                reported,
                failed: None,
            }
        }
        Err(e) => {
            tracing::warn!(start = group.interval.start_sec, error = %e, "observer failed for group");
            fail(e.to_string(), n)
        }
    }
}

/// Builds the call's context groups, queries the observer once per group
/// (Scan groups concurrently, up to `scan_fanout` at a time), and
/// aggregates the replies. A failing group leaves an inline error marker.
pub fn execute_tool(
    call: &ToolCall,
    source: &VideoSource,
    observer: &dyn Observer,
    config: &ToolkitConfig,
) -> Result<ToolOutput, ToolkitError> {
    let specs = plan_groups(call, source.duration_sec, &config.defaults)?;
    let tool = call.tool();
    let workers = config.scan_fanout.max(1).min(specs.len());
    let outcomes: Vec<GroupOutcome> = if tool == ToolKind::ScanSearch && workers > 1 {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<GroupOutcome>>> = Mutex::new((0..specs.len()).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= specs.len() {
                        break;
                    }
                    let out = run_group(&specs[i], tool, &call.query, source, observer, config);
                    slots.lock().unwrap()[i] = Some(out);
                });
            }
        });
        slots
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|o| o.expect("every group runs"))
            .collect()
    } else {
        specs
            .iter()
            .map(|s| run_group(s, tool, &call.query, source, observer, config))
            .collect()
    };

    if let Some(first) = outcomes.iter().find_map(|o| o.failed.clone()) {
        if outcomes.iter().all(|o| o.failed.is_some()) {
            return Err(ToolkitError::ToolExecutionFailed(first));
        }
    }
    let frames_used = outcomes.iter().map(|o| o.frames).sum();
    let observer_tokens = outcomes.iter().map(|o| o.tokens).sum();
    let tokens_reported = outcomes.iter().all(|o| o.reported);
    let mut group_replies: Vec<GroupReply> = outcomes.into_iter().map(|o| o.reply).collect();
    group_replies.sort_by(|a, b| a.interval.temporal_cmp(&b.interval));
    Ok(ToolOutput {
        evidence: Evidence {
            text: aggregate(&group_replies),
            group_replies,
            frames_used,
        },
        observer_tokens,
        tokens_reported,
    })
}
