use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::classify::{classify_trace, BehaviorLabel, ClassifierThresholds};
use super::trace::{config_digest, trace_path, write_trace, TraceHeader};
use super::{extract_answer_letter, McqTask};
use crate::agent::{Agent, RunConfig};
use crate::gateway::backend::{ChatBackend, Observer};
use crate::memory::MemoryUpdater;
use crate::sampling::FrameDecoder;

/// Backends and settings shared by every task of an evaluation.
pub struct EvalSetup {
    pub reasoner: Arc<dyn ChatBackend>,
    pub observer: Arc<dyn Observer>,
    pub memory: Arc<dyn MemoryUpdater>,
    pub decoder: FrameDecoder,
    pub config: RunConfig,
    pub thresholds: ClassifierThresholds,
    pub workers: usize,
    pub trace_dir: Option<PathBuf>,
    /// Names the backends in the config digest.
    pub backend_label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_id: String,
    pub answer: String,
    pub predicted: Option<String>,
    pub correct: bool,
    pub label: Option<BehaviorLabel>,
    pub steps: u32,
    pub frames: u64,
    pub total_tokens: u64,
    pub peak_context_tokens: u64,
    pub error: Option<String>,
    pub trace_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub count: usize,
    pub frequency: f64,
    pub accuracy: f64,
    pub avg_frames: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub avg_steps: f64,
    pub avg_frames: f64,
    pub total_tokens: u64,
    pub peak_context_tokens: u64,
    pub labels: BTreeMap<BehaviorLabel, LabelStats>,
    pub outcomes: Vec<TaskOutcome>,
}

fn failed(task: &McqTask, error: String) -> TaskOutcome {
    TaskOutcome {
        task_id: task.task_id.clone(),
        answer: String::new(),
        predicted: None,
        correct: false,
        label: None,
        steps: 0,
        frames: 0,
        total_tokens: 0,
        peak_context_tokens: 0,
        error: Some(error),
        trace_path: None,
    }
}

fn run_task(task: &McqTask, setup: &EvalSetup, agent: &Agent, digest: &str) -> TaskOutcome {
    if let Err(e) = task.validate() {
        return failed(task, e.to_string());
    }
    let source = match task.load_source(&setup.decoder) {
        Ok(s) => s,
        Err(e) => return failed(task, e.to_string()),
    };
    let result = match agent.run(&task.formatted_question(), &source) {
        Ok(r) => r,
        Err(e) => return failed(task, e.to_string()),
    };
    let predicted = extract_answer_letter(&result.answer, &task.letters());
    let correct = predicted.as_deref() == Some(task.answer_letter.as_str());
    let label = classify_trace(&result.turns, source.duration_sec, &setup.thresholds);
    let mut outcome = TaskOutcome {
        task_id: task.task_id.clone(),
        answer: result.answer.clone(),
        predicted,
        correct,
        label: Some(label),
        steps: result.accounting.steps,
        frames: result.accounting.total_frames,
        total_tokens: result.accounting.total_tokens,
        peak_context_tokens: result.accounting.peak_context_tokens,
        error: result.note.clone(),
        trace_path: None,
    };
    if let Some(dir) = &setup.trace_dir {
        let path = trace_path(dir, &task.task_id);
        let header = TraceHeader {
            task_id: task.task_id.clone(),
            config_digest: digest.to_string(),
            answer: result.answer.clone(),
            label,
            duration_sec: source.duration_sec,
            termination: result.termination,
            correct: Some(correct),
            accounting: result.accounting,
        };
        match write_trace(&path, &header, &result) {
            Ok(()) => outcome.trace_path = Some(path),
            Err(e) => outcome.error = Some(e.to_string()),
        }
    }
    outcome
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Runs every task with up to `workers` tasks in flight and aggregates the
/// results. A task that fails to load or run counts as incorrect.
pub fn evaluate(tasks: &[McqTask], setup: &EvalSetup) -> EvalReport {
    let agent = Agent {
        reasoner: setup.reasoner.clone(),
        observer: setup.observer.clone(),
        memory: setup.memory.clone(),
        decoder: setup.decoder.clone(),
        config: setup.config.clone(),
    };
    let digest = config_digest(&json!({
        "run": setup.config,
        "thresholds": setup.thresholds,
        "backends": setup.backend_label,
        "prompts": crate::gateway::prompts::PROMPT_VERSION,
    }));
    if let Some(dir) = &setup.trace_dir {
        if let Err(e) = std::fs::create_dir_all(dir) {
            tracing::warn!(dir = %dir.display(), error = %e, "cannot create trace directory");
        }
    }
    let slots: Mutex<Vec<Option<TaskOutcome>>> = Mutex::new(vec![None; tasks.len()]);
    let next = AtomicUsize::new(0);
    let workers = setup.workers.max(1).min(tasks.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= tasks.len() {
                    break;
                }
                let out = run_task(&tasks[i], setup, &agent, &digest);
                tracing::info!(task = %out.task_id, correct = out.correct, "task done");
                slots.lock().unwrap()[i] = Some(out);
            });
        }
    });
    let outcomes: Vec<TaskOutcome> = slots.into_inner().unwrap().into_iter().flatten().collect();
    summarize(outcomes)
}

pub fn summarize(outcomes: Vec<TaskOutcome>) -> EvalReport {
    let n = outcomes.len();
    let correct = outcomes.iter().filter(|o| o.correct).count();
    let labeled: Vec<&TaskOutcome> = outcomes.iter().filter(|o| o.label.is_some()).collect();
    let mut labels = BTreeMap::new();
    for label in BehaviorLabel::ALL {
        let group: Vec<&&TaskOutcome> = labeled.iter().filter(|o| o.label == Some(label)).collect();
        if group.is_empty() {
            continue;
        }
        labels.insert(
            label,
            LabelStats {
                count: group.len(),
                frequency: group.len() as f64 / labeled.len() as f64,
                accuracy: group.iter().filter(|o| o.correct).count() as f64 / group.len() as f64,
                avg_frames: mean(group.iter().map(|o| o.frames as f64)),
            },
        );
    }
    EvalReport {
        tasks: n,
        correct,
        accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        avg_steps: mean(outcomes.iter().map(|o| o.steps as f64)),
        avg_frames: mean(outcomes.iter().map(|o| o.frames as f64)),
        total_tokens: outcomes.iter().map(|o| o.total_tokens).sum(),
        peak_context_tokens: outcomes.iter().map(|o| o.peak_context_tokens).max().unwrap_or(0),
        labels,
        outcomes,
    }
}

/// Plain-text summary for the terminal.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = format!(
        "tasks {}  correct {}  accuracy {:.3}\navg steps {:.2}  avg frames {:.1}  total tokens {}  peak context {}\n",
        report.tasks,
        report.correct,
        report.accuracy,
        report.avg_steps,
        report.avg_frames,
        report.total_tokens,
        report.peak_context_tokens
    );
    if !report.labels.is_empty() {
        out.push_str(&format!(
            "\n{:<20} {:>6} {:>9} {:>9} {:>10}\n",
            "label", "count", "share", "accuracy", "avg frames"
        ));
        for (label, s) in &report.labels {
            out.push_str(&format!(
                "{:<20} {:>6} {:>9.3} {:>9.3} {:>10.1}\n",
                label.to_string(),
                s.count,
                s.frequency,
                s.accuracy,
                s.avg_frames
            ));
        }
    }
    let errors: Vec<&TaskOutcome> = report.outcomes.iter().filter(|o| o.error.is_some()).collect();
    if !errors.is_empty() {
        out.push_str("\nerrors:\n");
        for o in errors {
            out.push_str(&format!(
                "  {}: {}\n",
                o.task_id,
                o.error.as_deref().unwrap_or_default()
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::oracle::TimelineOracle;
    use crate::gateway::scripted::ScanFocusPolicy;
    use crate::harness::synth;
    use crate::memory::RuleBasedMemory;

    fn setup(trace_dir: Option<PathBuf>, workers: usize) -> EvalSetup {
        EvalSetup {
            reasoner: Arc::new(ScanFocusPolicy::default()),
            observer: Arc::new(TimelineOracle),
            memory: Arc::new(RuleBasedMemory),
            decoder: FrameDecoder::default(),
            config: RunConfig::default(),
            thresholds: ClassifierThresholds::default(),
            workers,
            trace_dir,
            backend_label: "scripted".into(),
        }
    }

    #[test]
    fn synthetic_tasks_all_solved_and_traced() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth::write_synthetic(dir.path(), 7, 4).unwrap();
        let tasks = crate::harness::load_manifest(&manifest).unwrap();
        let traces = dir.path().join("traces");
        let report = evaluate(&tasks, &setup(Some(traces.clone()), 3));
        assert_eq!(report.tasks, 4);
        assert_eq!(report.accuracy, 1.0, "{}", render_table(&report));
        assert_eq!(report.avg_steps, 3.0);
        let freq: f64 = report.labels.values().map(|s| s.frequency).sum();
        assert!((freq - 1.0).abs() < 1e-12);
        for o in &report.outcomes {
            assert!(o.trace_path.as_ref().unwrap().exists());
        }
    }

    #[test]
    fn unloadable_task_is_incorrect_but_reported() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth::write_synthetic(dir.path(), 1, 2).unwrap();
        let mut tasks = crate::harness::load_manifest(&manifest).unwrap();
        tasks[1].timeline_path = Some(dir.path().join("missing.json"));
        let report = evaluate(&tasks, &setup(None, 2));
        assert_eq!(report.tasks, 2);
        assert_eq!(report.accuracy, 0.5);
        assert!(report.outcomes[1].error.is_some());
        assert_eq!(report.labels.values().map(|s| s.count).sum::<usize>(), 1);
    }
}
