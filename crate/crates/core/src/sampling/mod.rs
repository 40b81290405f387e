//! Turns (interval, fps, cap) requests into frame timestamps, rescales
//! budgets under per-tool caps, and renders timestamp anchors.

mod decoder;

use std::path::PathBuf;
use std::sync::Arc;

use thiserror::Error;

use crate::timeline::{SourceKind, TimeInterval, TimelineEvent, VideoSource};

pub use decoder::FrameDecoder;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("CapTooSmall: cap {cap} cannot give {segments} segments one frame each")]
    CapTooSmall { cap: u32, segments: usize },
    #[error("DecoderFailure: {message}; stderr: {stderr}")]
    DecoderFailure { message: String, stderr: String },
    #[error("MissingFile: {0} does not exist")]
    MissingFile(PathBuf),
    #[error("timestamp {timestamp}s outside video of {duration}s")]
    TimestampOutOfRange { timestamp: f64, duration: f64 },
}

// Absorbs representation error in products like 60 * 0.25 before flooring.
const FLOOR_EPS: f64 = 1e-9;

/// `min(cap, max(1, floor(span * fps)))`.
pub fn frame_count(iv: &TimeInterval, fps: f64, cap: u32) -> u32 {
    let raw = (iv.span() * fps + FLOOR_EPS).floor();
    let n = if raw >= u32::MAX as f64 { u32::MAX } else { raw as u32 };
    n.max(1).min(cap.max(1))
}

/// `n` midpoint-placed timestamps: `start + (k + 0.5) * span / n`.
pub fn sample_timestamps(iv: &TimeInterval, n: u32) -> Vec<f64> {
    let n = n.max(1);
    let step = iv.span() / n as f64;
    (0..n).map(|k| iv.start_sec + (k as f64 + 0.5) * step).collect()
}

/// Scales requested frame counts down so their sum stays within `cap`.
///
/// Each item gets `max(1, floor(n_i * c / total))`, where `c` is `cap` unless
/// the minimum-one lift would push the sum past `cap`; then `c` is the
/// largest value below `cap` whose lifted sum fits. Remainders are dropped.
pub fn rescale_budgets(requested: &[u32], cap: u32) -> Result<Vec<u32>, SamplingError> {
    if (cap as usize) < requested.len() {
        return Err(SamplingError::CapTooSmall {
            cap,
            segments: requested.len(),
        });
    }
    let total: u64 = requested.iter().map(|&n| n as u64).sum();
    if total <= cap as u64 {
        return Ok(requested.to_vec());
    }
    let scaled = |c: u64| -> Vec<u32> {
        requested
            .iter()
            .map(|&n| ((n as u64 * c / total) as u32).max(1))
            .collect()
    };
    let fits = |v: &[u32]| v.iter().map(|&n| n as u64).sum::<u64>() <= cap as u64;

    let full = scaled(cap as u64);
    if fits(&full) {
        return Ok(full);
    }
    // The lifted sum is monotone in c and equals len <= cap at c = 0.
    let (mut lo, mut hi) = (0u64, cap as u64);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if fits(&scaled(mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(scaled(lo))
}

/// Rounds half-up to tenths of a second.
pub(crate) fn tenths(timestamp_sec: f64) -> u64 {
    (timestamp_sec.max(0.0) * 10.0 + 0.5 + FLOOR_EPS).floor() as u64
}

/// Seconds with one decimal, rounded half-up.
pub fn format_secs(timestamp_sec: f64) -> String {
    let t = tenths(timestamp_sec);
    format!("{}.{}", t / 10, t % 10)
}

/// `[time: S.s s]` anchor placed before each frame in observer context.
pub fn render_anchor(timestamp_sec: f64) -> String {
    format!("[time: {}s]", format_secs(timestamp_sec))
}

/// Parses anchors back out of observer text, in order of appearance.
pub fn parse_anchors(text: &str) -> Vec<f64> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(pos) = rest.find("[time: ") {
        rest = &rest[pos + 7..];
        if let Some(end) = rest.find("s]") {
            if let Ok(v) = rest[..end].parse::<f64>() {
                out.push(v);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum FramePayload {
    /// Encoded PNG bytes from the external decoder.
    Image(Arc<Vec<u8>>),
    /// Timeline events active at the frame instant.
    Events(Vec<TimelineEvent>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRef {
    pub timestamp_sec: f64,
    pub payload: FramePayload,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchoredFrame {
    pub frame: FrameRef,
    /// Empty when anchors are disabled.
    pub anchor_text: String,
}

impl AnchoredFrame {
    pub fn new(frame: FrameRef, anchors_enabled: bool) -> Self {
        let anchor_text = if anchors_enabled {
            render_anchor(frame.timestamp_sec)
        } else {
            String::new()
        };
        Self { frame, anchor_text }
    }
}

/// One frame per timestamp, in input order.
pub fn extract_frames(
    source: &VideoSource,
    timestamps: &[f64],
    decoder: &FrameDecoder,
) -> Result<Vec<FrameRef>, SamplingError> {
    if let Some(&bad) = timestamps.iter().find(|t| !(**t >= 0.0 && **t <= source.duration_sec)) {
        return Err(SamplingError::TimestampOutOfRange {
            timestamp: bad,
            duration: source.duration_sec,
        });
    }
    match &source.kind {
        SourceKind::ScriptedTimeline(timeline) => Ok(timestamps
            .iter()
            .map(|&t| FrameRef {
                timestamp_sec: t,
                payload: FramePayload::Events(timeline.events_at(t)),
            })
            .collect()),
        SourceKind::DecodedFile { path } => {
            let images = decoder.extract(path, timestamps)?;
            Ok(timestamps
                .iter()
                .zip(images)
                .map(|(&t, png)| FrameRef {
                    timestamp_sec: t,
                    payload: FramePayload::Image(Arc::new(png)),
                })
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeline::ScriptedTimeline;
    use proptest::prelude::*;

    fn iv(a: f64, b: f64) -> TimeInterval {
        TimeInterval::new(a, b).unwrap()
    }

    #[test]
    fn frame_count_examples() {
        assert_eq!(frame_count(&iv(0.0, 32.0), 1.0, 32), 32);
        assert_eq!(frame_count(&iv(10.0, 20.0), 0.05, 32), 1);
        assert_eq!(frame_count(&iv(0.0, 100.0), 1.0, 32), 32);
        assert_eq!(frame_count(&iv(0.0, 60.0), 0.25, 30), 15);
    }

    #[test]
    fn sample_timestamp_examples() {
        let ts = sample_timestamps(&iv(0.0, 32.0), 32);
        let expected: Vec<f64> = (0..32).map(|k| k as f64 + 0.5).collect();
        assert_eq!(ts, expected);
        assert_eq!(sample_timestamps(&iv(10.0, 20.0), 1), vec![15.0]);
        assert_eq!(sample_timestamps(&iv(0.0, 600.0), 3), vec![100.0, 300.0, 500.0]);
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale_budgets(&[40, 20], 128).unwrap(), vec![40, 20]);
        assert_eq!(rescale_budgets(&[100, 100], 128).unwrap(), vec![64, 64]);
        assert_eq!(rescale_budgets(&[200, 1], 128).unwrap(), vec![127, 1]);
        assert!(matches!(
            rescale_budgets(&[1, 1, 1], 2),
            Err(SamplingError::CapTooSmall { cap: 2, segments: 3 })
        ));
    }

    #[test]
    fn rescale_lift_overflow_stays_under_cap() {
        // floor(100*3/102)=2 plus two lifted ones would total 4 > 3.
        assert_eq!(rescale_budgets(&[100, 1, 1], 3).unwrap(), vec![1, 1, 1]);
        let out = rescale_budgets(&[500, 3, 2, 1], 10).unwrap();
        assert!(out.iter().sum::<u32>() <= 10);
    }

    #[test]
    fn anchor_examples() {
        assert_eq!(render_anchor(15.0), "[time: 15.0s]");
        assert_eq!(render_anchor(31.25), "[time: 31.3s]");
        assert_eq!(render_anchor(0.0), "[time: 0.0s]");
        assert_eq!(render_anchor(0.15), "[time: 0.2s]");
        assert_eq!(render_anchor(3599.95), "[time: 3600.0s]");
    }

    #[test]
    fn parse_anchors_reads_rendered_values() {
        let text = format!("{} foo {} bar", render_anchor(5.1), render_anchor(15.25));
        assert_eq!(parse_anchors(&text), vec![5.1, 15.3]);
    }

    #[test]
    fn scripted_extraction() {
        let timeline = ScriptedTimeline {
            duration_sec: 60.0,
            metadata: String::new(),
            events: vec![TimelineEvent {
                start_sec: 10.0,
                end_sec: 20.0,
                description: "a red car enters".into(),
                entities: vec![],
            }],
        };
        let src = VideoSource::scripted(timeline);
        let dec = FrameDecoder::default();
        let frames = extract_frames(&src, &[15.0], &dec).unwrap();
        assert_eq!(frames.len(), 1);
        assert!(matches!(&frames[0].payload, FramePayload::Events(e) if e.len() == 1));
        let frames = extract_frames(&src, &[5.0], &dec).unwrap();
        assert!(matches!(&frames[0].payload, FramePayload::Events(e) if e.is_empty()));
        assert!(matches!(
            extract_frames(&src, &[61.0], &dec),
            Err(SamplingError::TimestampOutOfRange { .. })
        ));
    }

    proptest! {
        #[test]
        fn rescale_preserves_magnitude_order(req in prop::collection::vec(1u32..400, 1..12), extra in 0u32..300) {
            let cap = req.len() as u32 + extra;
            let out = rescale_budgets(&req, cap).unwrap();
            prop_assert!(out.iter().map(|&n| n as u64).sum::<u64>() <= cap as u64);
            for i in 0..req.len() {
                prop_assert!(out[i] >= 1);
                for j in 0..req.len() {
                    if req[i] >= req[j] {
                        prop_assert!(out[i] >= out[j]);
                    }
                }
            }
        }

        #[test]
        fn adjacent_slices_never_share_timestamps(start in 0.0f64..1000.0, w in 0.5f64..300.0, n in 1u32..40) {
            let a = iv(start, start + w);
            let b = iv(start + w, start + 2.0 * w);
            let ta = sample_timestamps(&a, n);
            let tb = sample_timestamps(&b, n);
            for pair in ta.windows(2) {
                prop_assert!(pair[0] < pair[1]);
            }
            prop_assert!(ta.last().unwrap() < tb.first().unwrap());
            prop_assert!(ta.iter().all(|t| a.start_sec < *t && *t < a.end_sec));
        }

        #[test]
        fn anchors_injective_at_tenth_resolution(t in 0.0f64..10_000.0, d in 0.1f64..50.0) {
            prop_assert_ne!(render_anchor(t), render_anchor(t + d));
        }
    }
}
