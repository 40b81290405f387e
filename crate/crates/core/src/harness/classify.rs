//! Assigns one behavior label to a trace using ordered structural rules.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::plan::{ToolArgs, Turn};
use crate::timeline::TimeInterval;
use crate::toolkit::{build_scan_groups, ToolDefaults};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BehaviorLabel {
    DirectInquiry,
    ProgressiveZoomIn,
    ScopePartitioning,
    StrategicReflection,
    IntegrativeVerify,
    StaticRepetition,
}

impl BehaviorLabel {
    pub const ALL: [BehaviorLabel; 6] = [
        BehaviorLabel::DirectInquiry,
        BehaviorLabel::ProgressiveZoomIn,
        BehaviorLabel::ScopePartitioning,
        BehaviorLabel::StrategicReflection,
        BehaviorLabel::IntegrativeVerify,
        BehaviorLabel::StaticRepetition,
    ];
}

impl fmt::Display for BehaviorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierThresholds {
    pub repeat_iou: f64,
    pub repeat_jaccard: f64,
    pub partition_iou: f64,
    pub partition_coverage: f64,
    pub reflection_span_ratio: f64,
}

impl Default for ClassifierThresholds {
    fn default() -> Self {
        Self {
            repeat_iou: 0.8,
            repeat_jaccard: 0.8,
            partition_iou: 0.2,
            partition_coverage: 0.6,
            reflection_span_ratio: 2.0,
        }
    }
}

const EPS: f64 = 1e-9;

fn query_tokens(q: &str) -> BTreeSet<String> {
    q.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn contained(inner: &TimeInterval, outer: &TimeInterval) -> bool {
    inner.start_sec >= outer.start_sec - EPS && inner.end_sec <= outer.end_sec + EPS
}

/// Intervals a turn actually looked at: scan slices, the focus interval,
/// or the stitched segments.
fn observed(turn: &Turn, duration_sec: f64) -> Vec<TimeInterval> {
    match &turn.plan.args {
        ToolArgs::Scan(a) => {
            let d = ToolDefaults::default();
            a.global_interval
                .clamp(duration_sec)
                .ok()
                .and_then(|g| {
                    build_scan_groups(
                        &g,
                        a.num_slices,
                        a.slice_duration_sec,
                        a.fps,
                        a.max_total_frames.max(1),
                        d.scan.per_slice_frames,
                    )
                    .ok()
                })
                .map(|groups| groups.into_iter().map(|g| g.interval).collect())
                .unwrap_or_else(|| vec![a.global_interval])
        }
        ToolArgs::Segment(a) => vec![a.interval],
        ToolArgs::Stitch(a) => a.segments.iter().map(|s| s.interval).collect(),
        ToolArgs::Finish => Vec::new(),
    }
}

fn union_length(intervals: &[TimeInterval], duration_sec: f64) -> f64 {
    let mut ivs: Vec<(f64, f64)> = intervals
        .iter()
        .map(|iv| (iv.start_sec.max(0.0), iv.end_sec.min(duration_sec)))
        .filter(|(s, e)| e > s)
        .collect();
    ivs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for (s, e) in ivs {
        match cur {
            Some((cs, ce)) if s <= ce => cur = Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += ce - cs;
                cur = Some((s, e));
            }
            None => cur = Some((s, e)),
        }
    }
    if let Some((cs, ce)) = cur {
        total += ce - cs;
    }
    total
}

fn static_repetition(steps: &[&Turn], th: &ClassifierThresholds) -> bool {
    steps.windows(3).any(|w| {
        let tool = w[0].plan.tool();
        if w.iter().any(|t| t.plan.tool() != tool) {
            return false;
        }
        let scopes: Vec<Option<TimeInterval>> = w.iter().map(|t| t.plan.scope()).collect();
        let queries: Vec<BTreeSet<String>> = w.iter().map(|t| query_tokens(&t.plan.query)).collect();
        (0..3).all(|i| {
            (i + 1..3).all(|j| {
                let iou_ok = match (&scopes[i], &scopes[j]) {
                    (Some(a), Some(b)) => a.iou(b) >= th.repeat_iou,
                    _ => false,
                };
                iou_ok && jaccard(&queries[i], &queries[j]) >= th.repeat_jaccard
            })
        })
    })
}

fn integrative_verify(steps: &[&Turn], duration_sec: f64) -> bool {
    steps.iter().enumerate().any(|(k, t)| {
        let ToolArgs::Stitch(a) = &t.plan.args else {
            return false;
        };
        let earlier: Vec<TimeInterval> = steps[..k].iter().flat_map(|e| observed(e, duration_sec)).collect();
        let hits = earlier
            .iter()
            .filter(|prev| a.segments.iter().any(|s| s.interval.overlap(prev) > 0.0))
            .count();
        hits >= 2
    })
}

fn strategic_reflection(steps: &[&Turn], th: &ClassifierThresholds) -> bool {
    let scopes: Vec<Option<TimeInterval>> = steps.iter().map(|t| t.plan.scope()).collect();
    (2..steps.len()).any(|k| {
        let (Some(cur), Some(p1), Some(p2)) = (scopes[k], scopes[k - 1], scopes[k - 2]) else {
            return false;
        };
        cur.iou(&p1) == 0.0 && cur.iou(&p2) == 0.0 && cur.span() >= th.reflection_span_ratio * p1.span()
    })
}

fn progressive_zoom_in(steps: &[&Turn], duration_sec: f64) -> bool {
    steps.iter().enumerate().any(|(i, scan)| {
        if !matches!(scan.plan.args, ToolArgs::Scan(_)) {
            return false;
        }
        let slices = observed(scan, duration_sec);
        steps.iter().enumerate().skip(i + 1).any(|(j, focus)| {
            let ToolArgs::Segment(a) = &focus.plan.args else {
                return false;
            };
            if !slices.iter().any(|s| contained(&a.interval, s)) {
                return false;
            }
            let spans: Vec<f64> = steps[i..=j]
                .iter()
                .filter_map(|t| t.plan.scope())
                .map(|s| s.span())
                .collect();
            spans.windows(2).all(|w| w[1] <= w[0] + EPS)
        })
    })
}

fn scope_partitioning(steps: &[&Turn], duration_sec: f64, th: &ClassifierThresholds) -> bool {
    let all: Vec<TimeInterval> = steps.iter().flat_map(|t| observed(t, duration_sec)).collect();
    if all.is_empty() {
        return false;
    }
    let disjoint = all
        .iter()
        .enumerate()
        .all(|(i, a)| all[i + 1..].iter().all(|b| a.iou(b) < th.partition_iou));
    disjoint && union_length(&all, duration_sec) >= th.partition_coverage * duration_sec
}

fn any_containment(steps: &[&Turn], duration_sec: f64) -> bool {
    steps.iter().enumerate().any(|(j, t)| {
        let Some(scope) = t.plan.scope() else {
            return false;
        };
        steps[..j]
            .iter()
            .flat_map(|e| observed(e, duration_sec))
            .any(|prev| contained(&scope, &prev))
    })
}

/// Rules in priority order, first match wins: repetition, direct inquiry
/// (at most one observation before the answer), integrative verification,
/// strategic reflection, progressive zoom-in, scope partitioning; then the
/// containment fallback.
pub fn classify_trace(turns: &[Turn], duration_sec: f64, th: &ClassifierThresholds) -> BehaviorLabel {
    let steps: Vec<&Turn> = turns.iter().filter(|t| !t.plan.is_finish()).collect();
    if static_repetition(&steps, th) {
        BehaviorLabel::StaticRepetition
    } else if steps.len() <= 1 {
        BehaviorLabel::DirectInquiry
    } else if integrative_verify(&steps, duration_sec) {
        BehaviorLabel::IntegrativeVerify
    } else if strategic_reflection(&steps, th) {
        BehaviorLabel::StrategicReflection
    } else if progressive_zoom_in(&steps, duration_sec) {
        BehaviorLabel::ProgressiveZoomIn
    } else if scope_partitioning(&steps, duration_sec, th) {
        BehaviorLabel::ScopePartitioning
    } else if any_containment(&steps, duration_sec) {
        BehaviorLabel::ProgressiveZoomIn
    } else {
        BehaviorLabel::ScopePartitioning
    }
}
