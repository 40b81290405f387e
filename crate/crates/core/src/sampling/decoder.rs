use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use super::SamplingError;
use crate::timeline::SourceError;

/// Adapter around an ffmpeg-compatible decoder process.
///
/// Each batch of timestamps is decoded by one process invocation that
/// writes `frame_<index>_<timestamp_ms>.png` into a scratch directory.
/// Invocations are independent, so batches may run concurrently.
#[derive(Debug, Clone)]
pub struct FrameDecoder {
    pub program: PathBuf,
    pub probe_program: PathBuf,
    /// Output frame height; width follows the aspect ratio.
    pub scale_height: Option<u32>,
    pub batch_size: usize,
}

impl Default for FrameDecoder {
    fn default() -> Self {
        Self {
            program: PathBuf::from("ffmpeg"),
            probe_program: PathBuf::from("ffprobe"),
            scale_height: Some(448),
            batch_size: 32,
        }
    }
}

pub(crate) fn frame_file_name(index: usize, timestamp_sec: f64) -> String {
    format!("frame_{index}_{}.png", (timestamp_sec * 1000.0).round() as u64)
}

impl FrameDecoder {
    /// Arguments for one batch; `first_index` numbers the output files.
    pub fn batch_args(&self, video: &Path, timestamps: &[f64], first_index: usize, out_dir: &Path) -> Vec<String> {
        let mut args: Vec<String> = ["-hide_banner", "-loglevel", "error", "-y"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for t in timestamps {
            args.push("-ss".into());
            args.push(format!("{t:.3}"));
            args.push("-i".into());
            args.push(video.display().to_string());
        }
        for (i, t) in timestamps.iter().enumerate() {
            args.push("-map".into());
            args.push(format!("{i}:v:0"));
            args.push("-frames:v".into());
            args.push("1".into());
            if let Some(h) = self.scale_height {
                args.push("-vf".into());
                args.push(format!("scale=-2:{h}"));
            }
            args.push(out_dir.join(frame_file_name(first_index + i, *t)).display().to_string());
        }
        args
    }

    /// PNG bytes for each timestamp, in input order.
    pub fn extract(&self, video: &Path, timestamps: &[f64]) -> Result<Vec<Vec<u8>>, SamplingError> {
        if !video.exists() {
            return Err(SamplingError::MissingFile(video.to_path_buf()));
        }
        let scratch = tempfile::tempdir().map_err(|e| SamplingError::DecoderFailure {
            message: format!("cannot create scratch dir: {e}"),
            stderr: String::new(),
        })?;
        let mut frames = Vec::with_capacity(timestamps.len());
        for (batch_no, batch) in timestamps.chunks(self.batch_size.max(1)).enumerate() {
            let first = batch_no * self.batch_size.max(1);
            let output = Command::new(&self.program)
                .args(self.batch_args(video, batch, first, scratch.path()))
                .output()
                .map_err(|e| SamplingError::DecoderFailure {
                    message: format!("cannot spawn {}: {e}", self.program.display()),
                    stderr: String::new(),
                })?;
            let stderr = String::from_utf8_lossy(&output.stderr).into_owned();
            if !output.status.success() {
                return Err(SamplingError::DecoderFailure {
                    message: format!("decoder exited with {}", output.status),
                    stderr,
                });
            }
            for (i, t) in batch.iter().enumerate() {
                let file = scratch.path().join(frame_file_name(first + i, *t));
                let bytes = fs::read(&file).map_err(|e| SamplingError::DecoderFailure {
                    message: format!("missing decoder output {}: {e}", file.display()),
                    stderr: stderr.clone(),
                })?;
                frames.push(bytes);
            }
        }
        Ok(frames)
    }

    /// Container duration in seconds.
    pub fn probe_duration(&self, video: &Path) -> Result<f64, SourceError> {
        if !video.exists() {
            return Err(SourceError::MissingFile(video.to_path_buf()));
        }
        let output = Command::new(&self.probe_program)
            .args([
                "-v",
                "error",
                "-show_entries",
                "format=duration",
                "-of",
                "default=noprint_wrappers=1:nokey=1",
            ])
            .arg(video)
            .output()
            .map_err(|e| SourceError::Probe(format!("cannot spawn {}: {e}", self.probe_program.display())))?;
        if !output.status.success() {
            return Err(SourceError::Probe(String::from_utf8_lossy(&output.stderr).into_owned()));
        }
        let text = String::from_utf8_lossy(&output.stdout);
        text.trim()
            .parse::<f64>()
            .map_err(|_| SourceError::Probe(format!("unparseable duration {:?}", text.trim())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::os::unix::fs::PermissionsExt;

    // Stands in for ffmpeg: writes "<name>" into every *.png argument.
    fn stub_decoder(dir: &Path, fail: bool) -> PathBuf {
        let script = dir.join(if fail { "bad-decoder.sh" } else { "decoder.sh" });
        let body = if fail {
            "#!/bin/sh\necho 'corrupt input' >&2\nexit 3\n".to_string()
        } else {
            "#!/bin/sh\nfor a in \"$@\"; do case \"$a\" in *.png) basename \"$a\" > \"$a\";; esac; done\n".to_string()
        };
        fs::write(&script, body).unwrap();
        fs::set_permissions(&script, fs::Permissions::from_mode(0o755)).unwrap();
        script
    }

    #[test]
    fn batch_args_name_outputs_by_index_and_ms() {
        let dec = FrameDecoder::default();
        let args = dec.batch_args(Path::new("/v.mp4"), &[1.5, 2.25], 4, Path::new("/out"));
        assert!(args.contains(&"/out/frame_4_1500.png".to_string()));
        assert!(args.contains(&"/out/frame_5_2250.png".to_string()));
        assert_eq!(args.iter().filter(|a| *a == "-i").count(), 2);
    }

    #[test]
    fn extract_returns_frames_in_order_across_batches() {
        let dir = tempfile::tempdir().unwrap();
        let video = dir.path().join("v.mp4");
        fs::write(&video, b"x").unwrap();
        let dec = FrameDecoder {
            program: stub_decoder(dir.path(), false),
            batch_size: 2,
            ..FrameDecoder::default()
        };
        let frames = dec.extract(&video, &[1.0, 2.0, 3.0]).unwrap();
        let names: Vec<String> = frames
            .iter()
            .map(|b| String::from_utf8(b.clone()).unwrap().trim().to_string())
            .collect();
        assert_eq!(names, ["frame_0_1000.png", "frame_1_2000.png", "frame_2_3000.png"]);
    }

    #[test]
    fn decoder_failure_captures_stderr() {
        let dir = tempfile::tempdir().unwrap();
        let video = dir.path().join("v.mp4");
        fs::write(&video, b"x").unwrap();
        let dec = FrameDecoder {
            program: stub_decoder(dir.path(), true),
            ..FrameDecoder::default()
        };
        match dec.extract(&video, &[1.0]) {
            Err(SamplingError::DecoderFailure { stderr, .. }) => assert!(stderr.contains("corrupt input")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_video_is_reported() {
        let dec = FrameDecoder::default();
        assert!(matches!(
            dec.extract(Path::new("/nonexistent/v.mp4"), &[1.0]),
            Err(SamplingError::MissingFile(_))
        ));
    }
}
