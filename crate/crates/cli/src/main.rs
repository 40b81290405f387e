mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use framescout_core::agent::Agent;
use framescout_core::gateway::http::{HttpChatClient, HttpConfig, HttpVlmObserver, ENV_API_KEY};
use framescout_core::gateway::{ChatBackend, Observer, ScanFocusPolicy, TimelineOracle};
use framescout_core::harness::eval::summarize;
use framescout_core::harness::trace::{config_digest, trace_path};
use framescout_core::harness::{
    classify_trace, evaluate, extract_answer_letter, load_manifest, read_trace, render_table, synth, write_trace,
    EvalSetup, McqOption, McqTask, TaskOutcome, TraceHeader,
};
use framescout_core::memory::{LlmMemory, MemoryUpdater, RuleBasedMemory};
use framescout_core::sampling::FrameDecoder;

use config::{BackendKind, FileConfig, Overrides, Settings};

#[derive(Parser, Debug)]
#[command(
    name = "framescout",
    version,
    about = "Answer questions about videos with a reason-plan-observe agent"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true, env = "FRAMESCOUT_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, env = "FRAMESCOUT_BACKEND")]
    backend: Option<BackendKind>,
    #[arg(long, global = true, env = "FRAMESCOUT_API_BASE")]
    api_base: Option<String>,
    #[arg(long, global = true, env = "FRAMESCOUT_REASONER_MODEL")]
    reasoner_model: Option<String>,
    #[arg(long, global = true, env = "FRAMESCOUT_OBSERVER_MODEL")]
    observer_model: Option<String>,
    #[arg(long, global = true, env = "FRAMESCOUT_TIMEOUT_SECS")]
    timeout_secs: Option<u64>,
    #[arg(long, global = true, env = "FRAMESCOUT_MAX_TURNS")]
    max_turns: Option<u32>,
    #[arg(long, global = true, env = "FRAMESCOUT_WORKERS")]
    workers: Option<usize>,
    #[arg(long, global = true, env = "FRAMESCOUT_OUT_DIR")]
    out_dir: Option<PathBuf>,
    /// Disable the subject memory table.
    #[arg(long, global = true)]
    no_memory: bool,
    /// Omit timestamp anchors from observer context.
    #[arg(long, global = true)]
    no_anchors: bool,
    #[arg(long, global = true, env = "FRAMESCOUT_SEED")]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Answer one question about a video or scripted timeline.
    Ask(AskArgs),
    /// Evaluate a task manifest and write a report.
    Eval { manifest: PathBuf },
    /// Summarize behavior labels over a directory of traces.
    Traces { dir: PathBuf },
    /// Generate seeded synthetic timelines and a manifest.
    Synth {
        #[arg(long, default_value_t = 4)]
        count: usize,
    },
}

#[derive(Args, Debug)]
struct AskArgs {
    #[arg(long, conflicts_with = "timeline", required_unless_present = "timeline")]
    video: Option<PathBuf>,
    #[arg(long)]
    timeline: Option<PathBuf>,
    /// Video length in seconds; probed with ffprobe when omitted.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    question: String,
    /// Answer choice, repeatable; lettered A, B, C... in order.
    #[arg(long = "option")]
    options: Vec<String>,
    #[arg(long)]
    transcript: Option<String>,
    #[arg(long, default_value = "ask")]
    task_id: String,
}

impl GlobalArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            backend: self.backend,
            api_base: self.api_base.clone(),
            reasoner_model: self.reasoner_model.clone(),
            observer_model: self.observer_model.clone(),
            timeout_secs: self.timeout_secs,
            max_turns: self.max_turns,
            workers: self.workers,
            out_dir: self.out_dir.clone(),
            no_memory: self.no_memory,
            no_anchors: self.no_anchors,
            seed: self.seed,
        }
    }
}

fn http_config(settings: &Settings, model: &str) -> HttpConfig {
    let mut cfg = HttpConfig::new(
        settings
            .api_base
            .clone()
            .or_else(|| std::env::var("OPENAI_BASE_URL").ok())
            .unwrap_or_else(|| "https://api.openai.com/v1".into()),
        model,
    );
    cfg.api_key = std::env::var(ENV_API_KEY)
        .ok()
        .or_else(|| std::env::var("OPENAI_API_KEY").ok())
        .filter(|k| !k.is_empty());
    if let Some(secs) = settings.timeout_secs {
        cfg.timeout = Duration::from_secs(secs);
    }
    cfg.max_in_flight = settings.max_in_flight;
    cfg
}

struct Backends {
    reasoner: Arc<dyn ChatBackend>,
    observer: Arc<dyn Observer>,
    memory: Arc<dyn MemoryUpdater>,
    label: String,
}

fn backends(settings: &Settings) -> Result<Backends> {
    match settings.backend {
        BackendKind::Scripted => Ok(Backends {
            reasoner: Arc::new(ScanFocusPolicy::default()),
            observer: Arc::new(TimelineOracle),
            memory: Arc::new(RuleBasedMemory),
            label: "scripted".into(),
        }),
        BackendKind::Http => {
            let reasoner_model = settings
                .reasoner_model
                .as_deref()
                .ok_or_else(|| anyhow!("http backend needs --reasoner-model"))?;
            let observer_model = settings.observer_model.as_deref().unwrap_or(reasoner_model);
            let memory_model = settings.memory_model.as_deref().unwrap_or(reasoner_model);
            Ok(Backends {
                reasoner: Arc::new(HttpChatClient::new(http_config(settings, reasoner_model))),
                observer: Arc::new(HttpVlmObserver::new(http_config(settings, observer_model))),
                memory: Arc::new(LlmMemory::new(HttpChatClient::new(http_config(settings, memory_model)))),
                label: format!("http:{reasoner_model}/{observer_model}/{memory_model}"),
            })
        }
    }
}

fn decoder(settings: &Settings) -> FrameDecoder {
    let mut d = FrameDecoder::default();
    if let Some(p) = &settings.ffmpeg {
        d.program = p.clone();
    }
    if let Some(p) = &settings.ffprobe {
        d.probe_program = p.clone();
    }
    d
}

fn setup(settings: &Settings, trace_dir: Option<PathBuf>) -> Result<EvalSetup> {
    let b = backends(settings)?;
    Ok(EvalSetup {
        reasoner: b.reasoner,
        observer: b.observer,
        memory: b.memory,
        decoder: decoder(settings),
        config: settings.run.clone(),
        thresholds: settings.thresholds,
        workers: settings.workers,
        trace_dir,
        backend_label: b.label,
    })
}

fn cmd_ask(settings: &Settings, args: &AskArgs) -> Result<()> {
    let letters = ('A'..='Z').map(|c| c.to_string());
    let options: Vec<McqOption> = letters
        .zip(&args.options)
        .map(|(letter, text)| McqOption {
            letter,
            text: text.clone(),
        })
        .collect();
    if args.options.len() > options.len() {
        bail!("at most 26 options are supported");
    }
    let task = McqTask {
        task_id: args.task_id.clone(),
        video_path: args.video.clone(),
        timeline_path: args.timeline.clone(),
        duration_sec: args.duration,
        question: args.question.clone(),
        options,
        answer_letter: String::new(),
        transcript: args.transcript.clone(),
    };
    let setup = setup(settings, None)?;
    let source = task
        .load_source(&setup.decoder)
        .with_context(|| "loading video source")?;
    let agent = Agent {
        reasoner: setup.reasoner.clone(),
        observer: setup.observer.clone(),
        memory: setup.memory.clone(),
        decoder: setup.decoder.clone(),
        config: setup.config.clone(),
    };
    let result = agent.run(&task.formatted_question(), &source)?;
    let label = classify_trace(&result.turns, source.duration_sec, &settings.thresholds);
    let trace_dir = settings.out_dir.join("traces");
    std::fs::create_dir_all(&trace_dir).with_context(|| format!("creating {}", trace_dir.display()))?;
    let path = trace_path(&trace_dir, &task.task_id);
    let header = TraceHeader {
        task_id: task.task_id.clone(),
        config_digest: config_digest(&digest_input(settings, &setup.backend_label)),
        answer: result.answer.clone(),
        label,
        duration_sec: source.duration_sec,
        termination: result.termination,
        correct: None,
        accounting: result.accounting,
    };
    write_trace(&path, &header, &result)?;

    let shown = if task.options.is_empty() {
        result.answer.clone()
    } else {
        extract_answer_letter(&result.answer, &task.letters()).unwrap_or_else(|| result.answer.clone())
    };
    println!("answer: {shown}");
    println!(
        "steps: {}  frames: {}  tokens: {}  peak context: {}",
        result.accounting.steps,
        result.accounting.total_frames,
        result.accounting.total_tokens,
        result.accounting.peak_context_tokens
    );
    println!("behavior: {label}");
    println!("trace: {}", path.display());
    if let Some(note) = &result.note {
        eprintln!("run ended early: {note}");
    }
    Ok(())
}

fn digest_input(settings: &Settings, backend: &str) -> impl serde::Serialize {
    (settings.run.clone(), settings.thresholds, backend.to_string())
}

fn cmd_eval(settings: &Settings, manifest: &Path) -> Result<()> {
    let tasks = load_manifest(manifest)?;
    if tasks.is_empty() {
        bail!("no tasks in {}", manifest.display());
    }
    let trace_dir = settings.out_dir.join("traces");
    let setup = setup(settings, Some(trace_dir))?;
    let report = evaluate(&tasks, &setup);
    std::fs::create_dir_all(&settings.out_dir)?;
    let report_path = settings.out_dir.join("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)
        .with_context(|| format!("writing {}", report_path.display()))?;
    print!("{}", render_table(&report));
    println!("accuracy: {}/{}", report.correct, report.tasks);
    println!("report: {}", report_path.display());
    Ok(())
}

fn cmd_traces(settings: &Settings, dir: &Path) -> Result<()> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".trace.jsonl"))
        .collect();
    paths.sort();
    let mut outcomes = Vec::new();
    let mut skipped = 0usize;
    for p in &paths {
        match read_trace(p) {
            Ok((header, turns)) => {
                let frames: u64 = turns.iter().map(|t| t.evidence.frames_used as u64).sum();
                outcomes.push(TaskOutcome {
                    task_id: header.task_id.clone(),
                    answer: header.answer.clone(),
                    predicted: None,
                    correct: header.correct.unwrap_or(false),
                    label: Some(classify_trace(&turns, header.duration_sec, &settings.thresholds)),
                    steps: turns.len() as u32,
                    frames,
                    total_tokens: header.accounting.total_tokens,
                    peak_context_tokens: header.accounting.peak_context_tokens,
                    error: None,
                    trace_path: Some(p.clone()),
                });
            }
            Err(e) => {
                tracing::warn!(error = %e, "skipping corrupt trace");
                skipped += 1;
            }
        }
    }
    if skipped > 0 {
        eprintln!("warning: skipped {skipped} corrupt trace file(s)");
    }
    if outcomes.is_empty() {
        bail!("no traces in {}", dir.display());
    }
    let report = summarize(outcomes);
    println!("traces: {}", report.tasks);
    println!(
        "{:<20} {:>6} {:>9} {:>10} {:>9}",
        "label", "count", "share", "avg frames", "accuracy"
    );
    for (label, s) in &report.labels {
        println!(
            "{:<20} {:>6} {:>9.3} {:>10.1} {:>9.3}",
            label.to_string(),
            s.count,
            s.frequency,
            s.avg_frames,
            s.accuracy
        );
    }
    Ok(())
}

fn cmd_synth(settings: &Settings, count: usize) -> Result<()> {
    let seed = settings
        .seed
        .ok_or_else(|| anyhow!("synth needs a seed (--seed, FRAMESCOUT_SEED or config)"))?;
    let manifest = synth::write_synthetic(&settings.out_dir, seed, count)?;
    println!("wrote {count} task(s) to {}", manifest.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.global.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let settings = config::resolve(file, cli.global.overrides())?;
    match &cli.command {
        Command::Ask(args) => cmd_ask(&settings, args),
        Command::Eval { manifest } => cmd_eval(&settings, manifest),
        Command::Traces { dir } => cmd_traces(&settings, dir),
        Command::Synth { count } => cmd_synth(&settings, *count),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("FRAMESCOUT_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
