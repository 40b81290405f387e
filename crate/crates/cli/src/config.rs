//! Layered settings: flag > environment > config file > built-in default.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use framescout_core::agent::RunConfig;
use framescout_core::harness::ClassifierThresholds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// Scan-then-focus policy with the timeline oracle; timelines only.
    Scripted,
    /// OpenAI-compatible chat-completions endpoint.
    Http,
}

/// Contents of the `--config` TOML file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub backend: Option<BackendKind>,
    pub api_base: Option<String>,
    pub reasoner_model: Option<String>,
    pub observer_model: Option<String>,
    pub memory_model: Option<String>,
    pub timeout_secs: Option<u64>,
    pub max_in_flight: Option<usize>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub ffmpeg: Option<PathBuf>,
    pub ffprobe: Option<PathBuf>,
    #[serde(default)]
    pub run: Option<RunConfig>,
    #[serde(default)]
    pub classifier: Option<ClassifierThresholds>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&raw).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Values given on the command line or through the environment.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub backend: Option<BackendKind>,
    pub api_base: Option<String>,
    pub reasoner_model: Option<String>,
    pub observer_model: Option<String>,
    pub timeout_secs: Option<u64>,
    pub max_turns: Option<u32>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub no_memory: bool,
    pub no_anchors: bool,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub backend: BackendKind,
    pub api_base: Option<String>,
    pub reasoner_model: Option<String>,
    pub observer_model: Option<String>,
    pub memory_model: Option<String>,
    pub timeout_secs: Option<u64>,
    pub max_in_flight: usize,
    pub workers: usize,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub ffmpeg: Option<PathBuf>,
    pub ffprobe: Option<PathBuf>,
    pub run: RunConfig,
    pub thresholds: ClassifierThresholds,
}

pub fn resolve(file: FileConfig, o: Overrides) -> Result<Settings> {
    let mut run = file.run.unwrap_or_default();
    if let Some(t) = o.max_turns {
        run.max_turns = t;
    }
    if o.no_memory {
        run.memory_enabled = false;
    }
    if o.no_anchors {
        run.anchors_enabled = false;
    }
    if run.max_turns < 1 {
        bail!("max_turns must be at least 1");
    }
    run.tool_defaults
        .validate()
        .map_err(|e| anyhow::anyhow!("invalid tool defaults: {e}"))?;

    let reasoner_model = o.reasoner_model.or(file.reasoner_model);
    let backend = o.backend.or(file.backend).unwrap_or(if reasoner_model.is_some() {
        BackendKind::Http
    } else {
        BackendKind::Scripted
    });
    let workers = o.workers.or(file.workers).unwrap_or(4);
    if workers == 0 {
        bail!("workers must be at least 1");
    }
    Ok(Settings {
        backend,
        api_base: o.api_base.or(file.api_base),
        observer_model: o
            .observer_model
            .or(file.observer_model)
            .or_else(|| reasoner_model.clone()),
        memory_model: file.memory_model.or_else(|| reasoner_model.clone()),
        reasoner_model,
        timeout_secs: o.timeout_secs.or(file.timeout_secs),
        max_in_flight: file.max_in_flight.unwrap_or(4),
        workers,
        out_dir: o
            .out_dir
            .or(file.out_dir)
            .unwrap_or_else(|| PathBuf::from("framescout-out")),
        seed: o.seed.or(file.seed),
        ffmpeg: file.ffmpeg,
        ffprobe: file.ffprobe,
        run,
        thresholds: file.classifier.unwrap_or_default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beats_default() {
        let file: FileConfig = toml::from_str(
            r#"
            workers = 2
            seed = 9
            [run]
            max_turns = 7
            [run.tool_defaults.segment]
            fps = 2.0
            max_total_frames = 16
            "#,
        )
        .unwrap();
        let s = resolve(file.clone(), Overrides::default()).unwrap();
        assert_eq!((s.workers, s.seed, s.run.max_turns), (2, Some(9), 7));
        assert_eq!(s.run.tool_defaults.segment.max_total_frames, 16);
        assert_eq!(s.run.tool_defaults.scan.max_total_frames, 180);
        assert_eq!(s.backend, BackendKind::Scripted);

        let o = Overrides {
            workers: Some(5),
            max_turns: Some(3),
            no_memory: true,
            reasoner_model: Some("m".into()),
            ..Default::default()
        };
        let s = resolve(file, o).unwrap();
        assert_eq!((s.workers, s.run.max_turns, s.run.memory_enabled), (5, 3, false));
        assert_eq!(s.backend, BackendKind::Http);
        assert_eq!(s.observer_model.as_deref(), Some("m"));
    }

    #[test]
    fn defaults_and_rejections() {
        let s = resolve(FileConfig::default(), Overrides::default()).unwrap();
        assert_eq!(s.run, RunConfig::default());
        assert_eq!(s.out_dir, PathBuf::from("framescout-out"));
        let zero = Overrides {
            max_turns: Some(0),
            ..Default::default()
        };
        assert!(resolve(FileConfig::default(), zero).is_err());
        assert!(toml::from_str::<FileConfig>("bogus = 1").is_err());
    }
}
