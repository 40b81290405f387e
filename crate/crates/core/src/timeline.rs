//! Temporal vocabulary shared by every other module: intervals, sampling
//! settings, and the video sources that observations are drawn from.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimelineError {
    #[error("invalid interval [{start}, {end}]: {reason}")]
    InvalidInterval { start: f64, end: f64, reason: &'static str },
    #[error("interval starting at {start}s does not intersect video of {duration}s")]
    EmptyIntersection { start: f64, duration: f64 },
    #[error("invalid sampling config: {0}")]
    InvalidSampling(&'static str),
}

/// A closed-open span of video time in seconds.
///
/// Touching intervals such as `[0, 10]` and `[10, 20]` share no time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeInterval {
    pub start_sec: f64,
    pub end_sec: f64,
}

impl TimeInterval {
    pub fn new(start_sec: f64, end_sec: f64) -> Result<Self, TimelineError> {
        let iv = Self { start_sec, end_sec };
        iv.validate()?;
        Ok(iv)
    }

    pub fn validate(&self) -> Result<(), TimelineError> {
        let err = |reason| TimelineError::InvalidInterval {
            start: self.start_sec,
            end: self.end_sec,
            reason,
        };
        if !self.start_sec.is_finite() || !self.end_sec.is_finite() {
            return Err(err("bounds must be finite"));
        }
        if self.start_sec < 0.0 {
            return Err(err("start_sec must be non-negative"));
        }
        if self.end_sec <= self.start_sec {
            return Err(err("end_sec must exceed start_sec"));
        }
        Ok(())
    }

    pub fn span(&self) -> f64 {
        self.end_sec - self.start_sec
    }

    /// Intersects the interval with `[0, duration_sec]`.
    pub fn clamp(&self, duration_sec: f64) -> Result<Self, TimelineError> {
        if self.start_sec >= duration_sec {
            return Err(TimelineError::EmptyIntersection {
                start: self.start_sec,
                duration: duration_sec,
            });
        }
        Ok(Self {
            start_sec: self.start_sec.max(0.0),
            end_sec: self.end_sec.min(duration_sec),
        })
    }

    pub fn overlap(&self, other: &Self) -> f64 {
        (self.end_sec.min(other.end_sec) - self.start_sec.max(other.start_sec)).max(0.0)
    }

    pub fn contains(&self, other: &Self) -> bool {
        self.start_sec <= other.start_sec && other.end_sec <= self.end_sec
    }

    pub fn contains_instant(&self, t: f64) -> bool {
        self.start_sec <= t && t < self.end_sec
    }

    /// Intersection over union; zero for disjoint or touching intervals.
    pub fn iou(&self, other: &Self) -> f64 {
        let inter = self.overlap(other);
        if inter <= 0.0 {
            return 0.0;
        }
        let union = self.span() + other.span() - inter;
        inter / union
    }

    /// Smallest interval covering every input, `None` for an empty input.
    pub fn hull<'a>(intervals: impl IntoIterator<Item = &'a TimeInterval>) -> Option<Self> {
        intervals.into_iter().fold(None, |acc, iv| {
            Some(match acc {
                None => *iv,
                Some(h) => TimeInterval {
                    start_sec: h.start_sec.min(iv.start_sec),
                    end_sec: h.end_sec.max(iv.end_sec),
                },
            })
        })
    }

    /// Temporal ordering: start ascending, ties broken by end ascending.
    pub fn temporal_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.start_sec
            .total_cmp(&other.start_sec)
            .then(self.end_sec.total_cmp(&other.end_sec))
    }
}

pub fn clamp_interval(iv: &TimeInterval, duration_sec: f64) -> Result<TimeInterval, TimelineError> {
    iv.clamp(duration_sec)
}

pub fn interval_iou(a: &TimeInterval, b: &TimeInterval) -> f64 {
    a.iou(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub fps: f64,
    pub max_frames: u32,
}

impl SamplingConfig {
    pub fn new(fps: f64, max_frames: u32) -> Result<Self, TimelineError> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(TimelineError::InvalidSampling("fps must be positive"));
        }
        if max_frames == 0 {
            return Err(TimelineError::InvalidSampling("max_frames must be at least 1"));
        }
        Ok(Self { fps, max_frames })
    }
}

/// One entry of a stitched observation: a segment plus its own sampling rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StitchSegment {
    pub interval: TimeInterval,
    pub fps: f64,
}

/// An annotated event on a scripted timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub start_sec: f64,
    pub end_sec: f64,
    pub description: String,
    #[serde(default)]
    pub entities: Vec<String>,
}

impl TimelineEvent {
    pub fn interval(&self) -> TimeInterval {
        TimeInterval {
            start_sec: self.start_sec,
            end_sec: self.end_sec,
        }
    }
}

/// Synthetic video surrogate: a duration plus an event list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedTimeline {
    pub duration_sec: f64,
    #[serde(default)]
    pub metadata: String,
    #[serde(default)]
    pub events: Vec<TimelineEvent>,
}

impl ScriptedTimeline {
    pub fn load(path: &Path) -> Result<Self, SourceError> {
        if !path.exists() {
            return Err(SourceError::MissingFile(path.to_path_buf()));
        }
        let raw = fs::read_to_string(path).map_err(|e| SourceError::Io(path.to_path_buf(), e))?;
        let timeline: ScriptedTimeline =
            serde_json::from_str(&raw).map_err(|e| SourceError::Parse(path.to_path_buf(), e.to_string()))?;
        timeline.validate()?;
        Ok(timeline)
    }

    pub fn validate(&self) -> Result<(), SourceError> {
        if !(self.duration_sec.is_finite() && self.duration_sec > 0.0) {
            return Err(SourceError::InvalidDuration(self.duration_sec));
        }
        for ev in &self.events {
            ev.interval()
                .validate()
                .map_err(|e| SourceError::InvalidEvent(e.to_string()))?;
        }
        Ok(())
    }

    /// Events active at instant `t`, in file order.
    pub fn events_at(&self, t: f64) -> Vec<TimelineEvent> {
        self.events
            .iter()
            .filter(|ev| ev.interval().contains_instant(t))
            .cloned()
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("MissingFile: {0} does not exist")]
    MissingFile(PathBuf),
    #[error("failed to read {0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("failed to parse {0}: {1}")]
    Parse(PathBuf, String),
    #[error("video duration must be positive, got {0}")]
    InvalidDuration(f64),
    #[error("invalid timeline event: {0}")]
    InvalidEvent(String),
    #[error("could not probe video duration: {0}")]
    Probe(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceKind {
    DecodedFile { path: PathBuf },
    ScriptedTimeline(ScriptedTimeline),
}

/// The video V together with its free-text metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSource {
    pub kind: SourceKind,
    pub duration_sec: f64,
    pub metadata: String,
}

impl VideoSource {
    pub fn scripted(timeline: ScriptedTimeline) -> Self {
        Self {
            duration_sec: timeline.duration_sec,
            metadata: timeline.metadata.clone(),
            kind: SourceKind::ScriptedTimeline(timeline),
        }
    }

    pub fn decoded_file(
        path: impl Into<PathBuf>,
        duration_sec: f64,
        metadata: impl Into<String>,
    ) -> Result<Self, SourceError> {
        let path = path.into();
        if !path.exists() {
            return Err(SourceError::MissingFile(path));
        }
        if !(duration_sec.is_finite() && duration_sec > 0.0) {
            return Err(SourceError::InvalidDuration(duration_sec));
        }
        Ok(Self {
            kind: SourceKind::DecodedFile { path },
            duration_sec,
            metadata: metadata.into(),
        })
    }

    /// The whole video as an interval.
    pub fn full_interval(&self) -> TimeInterval {
        TimeInterval {
            start_sec: 0.0,
            end_sec: self.duration_sec,
        }
    }

    pub fn timeline(&self) -> Option<&ScriptedTimeline> {
        match &self.kind {
            SourceKind::ScriptedTimeline(t) => Some(t),
            SourceKind::DecodedFile { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iv(a: f64, b: f64) -> TimeInterval {
        TimeInterval::new(a, b).unwrap()
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp_interval(&iv(10.0, 50.0), 100.0).unwrap(), iv(10.0, 50.0));
        assert_eq!(clamp_interval(&iv(80.0, 130.0), 100.0).unwrap(), iv(80.0, 100.0));
        assert!(matches!(
            clamp_interval(&iv(120.0, 130.0), 100.0),
            Err(TimelineError::EmptyIntersection { .. })
        ));
        assert!(matches!(
            clamp_interval(&iv(100.0, 130.0), 100.0),
            Err(TimelineError::EmptyIntersection { .. })
        ));
    }

    #[test]
    fn iou_examples() {
        assert_eq!(interval_iou(&iv(0.0, 10.0), &iv(0.0, 10.0)), 1.0);
        assert_eq!(interval_iou(&iv(0.0, 10.0), &iv(10.0, 20.0)), 0.0);
        assert!((interval_iou(&iv(0.0, 10.0), &iv(5.0, 15.0)) - 5.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_intervals() {
        assert!(TimeInterval::new(-1.0, 5.0).is_err());
        assert!(TimeInterval::new(5.0, 5.0).is_err());
        assert!(TimeInterval::new(0.0, f64::NAN).is_err());
        assert!(SamplingConfig::new(0.0, 3).is_err());
        assert!(SamplingConfig::new(1.0, 0).is_err());
    }

    #[test]
    fn events_at_uses_half_open_bounds() {
        let t = ScriptedTimeline {
            duration_sec: 60.0,
            metadata: String::new(),
            events: vec![TimelineEvent {
                start_sec: 10.0,
                end_sec: 20.0,
                description: "a red car enters".into(),
                entities: vec!["red car".into()],
            }],
        };
        assert_eq!(t.events_at(15.0).len(), 1);
        assert_eq!(t.events_at(10.0).len(), 1);
        assert!(t.events_at(20.0).is_empty());
        assert!(t.events_at(5.0).is_empty());
    }

    fn arb_interval() -> impl Strategy<Value = TimeInterval> {
        (0.0f64..1000.0, 0.001f64..500.0).prop_map(|(s, w)| iv(s, s + w))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_identity(a in arb_interval(), b in arb_interval()) {
            let ab = a.iou(&b);
            prop_assert_eq!(ab, b.iou(&a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(a.iou(&a), 1.0);
            if a != b {
                prop_assert!(ab < 1.0);
            }
        }

        #[test]
        fn clamp_idempotent(a in arb_interval(), d in 1.0f64..1500.0) {
            if let Ok(c) = a.clamp(d) {
                prop_assert_eq!(c.clamp(d).unwrap(), c);
                prop_assert!(c.start_sec >= 0.0 && c.end_sec <= d);
            }
        }
    }
}
