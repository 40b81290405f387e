//! Batch evaluation over multiple-choice tasks, trace files, behavior
//! labels, and a synthetic task generator.

pub mod classify;
pub mod eval;
pub mod synth;
pub mod trace;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::FrameDecoder;
use crate::timeline::{ScriptedTimeline, SourceError, VideoSource};

pub use classify::{classify_trace, BehaviorLabel, ClassifierThresholds};
pub use eval::{evaluate, render_table, EvalReport, EvalSetup, LabelStats, TaskOutcome};
pub use trace::{read_trace, trace_file_name, write_trace, TraceHeader};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("IoFailure: {0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("bad manifest {0}: {1}")]
    Manifest(PathBuf, String),
    #[error("invalid task {task_id}: {reason}")]
    InvalidTask { task_id: String, reason: String },
    #[error("bad trace {0}: {1}")]
    Trace(PathBuf, String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqOption {
    pub letter: String,
    pub text: String,
}

/// One multiple-choice question about a video or a scripted timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqTask {
    pub task_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeline_path: Option<PathBuf>,
    /// Skips probing when the video duration is already known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_sec: Option<f64>,
    pub question: String,
    pub options: Vec<McqOption>,
    pub answer_letter: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
}

impl McqTask {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |reason: &str| HarnessError::InvalidTask {
            task_id: self.task_id.clone(),
            reason: reason.to_string(),
        };
        if self.video_path.is_some() == self.timeline_path.is_some() {
            return Err(bad("give exactly one of video_path or timeline_path"));
        }
        if self.options.len() < 2 {
            return Err(bad("at least two options are required"));
        }
        let mut letters: Vec<&str> = self.options.iter().map(|o| o.letter.as_str()).collect();
        if letters
            .iter()
            .any(|l| l.chars().count() != 1 || !l.chars().all(|c| c.is_ascii_uppercase()))
        {
            return Err(bad("option letters must be single uppercase letters"));
        }
        letters.sort_unstable();
        letters.dedup();
        if letters.len() != self.options.len() {
            return Err(bad("duplicate option letters"));
        }
        if !letters.contains(&self.answer_letter.as_str()) {
            return Err(bad("answer_letter is not an option letter"));
        }
        Ok(())
    }

    pub fn letters(&self) -> Vec<String> {
        self.options.iter().map(|o| o.letter.clone()).collect()
    }

    /// The question followed by one `<letter>. <text>` line per option.
    pub fn formatted_question(&self) -> String {
        format_question(&self.question, &self.options)
    }

    pub fn load_source(&self, decoder: &FrameDecoder) -> Result<VideoSource, SourceError> {
        let transcript = self
            .transcript
            .as_deref()
            .filter(|t| !t.trim().is_empty())
            .map(|t| format!("Transcript: {}", t.trim()));
        if let Some(path) = &self.timeline_path {
            let mut source = VideoSource::scripted(ScriptedTimeline::load(path)?);
            if let Some(t) = transcript {
                source.metadata = [source.metadata.trim(), t.as_str()]
                    .iter()
                    .filter(|s| !s.is_empty())
                    .copied()
                    .collect::<Vec<_>>()
                    .join("\n");
            }
            return Ok(source);
        }
        let path = self.video_path.as_ref().expect("validated task has a source");
        if !path.exists() {
            return Err(SourceError::MissingFile(path.clone()));
        }
        let duration = match self.duration_sec {
            Some(d) => d,
            None => decoder.probe_duration(path)?,
        };
        VideoSource::decoded_file(path, duration, transcript.unwrap_or_default())
    }
}

pub fn format_question(question: &str, options: &[McqOption]) -> String {
    let mut out = question.trim().to_string();
    for o in options {
        out.push_str(&format!("\n{}. {}", o.letter, o.text));
    }
    out
}

/// First standalone letter in `answer` (case-insensitive) that names an
/// option.
pub fn extract_answer_letter(answer: &str, letters: &[String]) -> Option<String> {
    answer
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.chars().count() == 1)
        .map(|w| w.to_uppercase())
        .find(|w| letters.iter().any(|l| l == w))
}

/// Reads a JSON array of tasks; relative paths resolve against the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<McqTask>, HarnessError> {
    let raw = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(path.to_path_buf(), e))?;
    let mut tasks: Vec<McqTask> =
        serde_json::from_str(&raw).map_err(|e| HarnessError::Manifest(path.to_path_buf(), e.to_string()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    for t in &mut tasks {
        for p in [&mut t.video_path, &mut t.timeline_path].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        t.validate()?;
    }
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn letters() -> Vec<String> {
        ["A", "B", "C", "D"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn letter_extraction() {
        assert_eq!(extract_answer_letter("The answer is B.", &letters()), Some("B".into()));
        assert_eq!(extract_answer_letter("c", &letters()), Some("C".into()));
        assert_eq!(extract_answer_letter("(D) because", &letters()), Some("D".into()));
        assert_eq!(extract_answer_letter("unknown", &letters()), None);
        assert_eq!(extract_answer_letter("Option E", &letters()), None);
    }

    fn task() -> McqTask {
        McqTask {
            task_id: "t1".into(),
            video_path: None,
            timeline_path: Some("tl.json".into()),
            duration_sec: None,
            question: "What happens?".into(),
            options: vec![
                McqOption {
                    letter: "A".into(),
                    text: "x".into(),
                },
                McqOption {
                    letter: "B".into(),
                    text: "y".into(),
                },
            ],
            answer_letter: "B".into(),
            transcript: None,
        }
    }

    #[test]
    fn task_validation() {
        assert!(task().validate().is_ok());
        let mut t = task();
        t.answer_letter = "C".into();
        assert!(t.validate().is_err());
        let mut t = task();
        t.video_path = Some("v.mp4".into());
        assert!(t.validate().is_err());
        let mut t = task();
        t.options.truncate(1);
        assert!(t.validate().is_err());
    }

    #[test]
    fn question_formatting() {
        assert_eq!(task().formatted_question(), "What happens?\nA. x\nB. y");
    }

    #[test]
    fn manifest_paths_resolve_relative_to_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(&path, serde_json::to_string(&vec![task()]).unwrap()).unwrap();
        let tasks = load_manifest(&path).unwrap();
        assert_eq!(
            tasks[0].timeline_path.as_deref(),
            Some(dir.path().join("tl.json").as_path())
        );
    }
}
