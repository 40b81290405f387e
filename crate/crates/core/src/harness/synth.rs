//! Seeded synthetic tasks: each timeline plants one event that answers its
//! question, surrounded by filler events that share no keyword with it.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{HarnessError, McqOption, McqTask};
use crate::timeline::{ScriptedTimeline, TimelineEvent};

const COLORS: &[&str] = &[
    "crimson", "golden", "silver", "violet", "emerald", "amber", "scarlet", "cobalt",
];
const ENTITIES: &[&str] = &[
    "juggler",
    "cyclist",
    "drummer",
    "painter",
    "gardener",
    "skater",
    "fisherman",
    "dancer",
    "sailor",
    "baker",
];
const ACTIONS: &[&str] = &[
    "waves a flag",
    "rides a bicycle",
    "plays a trumpet",
    "paints a mural",
    "kicks a ball",
    "climbs a ladder",
    "feeds pigeons",
    "reads a newspaper",
    "sweeps the floor",
    "lights a lantern",
];
const FILLER: &[&str] = &[
    "clouds drift across the sky",
    "traffic moves along a distant road",
    "leaves rustle in a light breeze",
    "a crowd gathers near a fountain",
    "streetlights flicker on",
    "rain begins to fall softly",
    "a bus stops at the corner",
    "shadows lengthen across a courtyard",
];
const LETTERS: [&str; 4] = ["A", "B", "C", "D"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTask {
    pub task: McqTask,
    pub timeline: ScriptedTimeline,
}

/// Task `index` of the stream for `seed`. Each task draws from its own
/// stream, so a longer run extends a shorter one without changing it.
pub fn generate_one(seed: u64, index: u64) -> SynthTask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let duration = rng.random_range(300..=1800) as f64;
    let color = COLORS[rng.random_range(0..COLORS.len())];
    let entity = ENTITIES[rng.random_range(0..ENTITIES.len())];
    let mut actions: Vec<&str> = ACTIONS.to_vec();
    actions.shuffle(&mut rng);
    let chosen = &actions[..LETTERS.len()];
    let answer_pos = rng.random_range(0..LETTERS.len());
    let action = chosen[answer_pos];

    let len = rng.random_range(20.0..60.0f64).round();
    let start = rng.random_range(0.0..(duration - len)).round();
    let mut events = vec![TimelineEvent {
        start_sec: start,
        end_sec: start + len,
        description: format!("the {color} {entity} {action}"),
        entities: vec![format!("{color} {entity}")],
    }];
    for _ in 0..rng.random_range(3..=8) {
        let len = rng.random_range(10.0..120.0f64).round();
        let s = rng.random_range(0.0..(duration - len)).round();
        events.push(TimelineEvent {
            start_sec: s,
            end_sec: s + len,
            description: FILLER[rng.random_range(0..FILLER.len())].to_string(),
            entities: Vec::new(),
        });
    }
    events.sort_by(|a, b| a.start_sec.total_cmp(&b.start_sec));

    let task_id = format!("synth-{seed}-{index:04}");
    SynthTask {
        task: McqTask {
            task_id: task_id.clone(),
            video_path: None,
            timeline_path: Some(PathBuf::from(format!("timelines/{task_id}.json"))),
            duration_sec: None,
            question: format!("What does the {color} {entity} do?"),
            options: LETTERS
                .iter()
                .zip(chosen)
                .map(|(l, a)| McqOption {
                    letter: l.to_string(),
                    text: a.to_string(),
                })
                .collect(),
            answer_letter: LETTERS[answer_pos].to_string(),
            transcript: None,
        },
        timeline: ScriptedTimeline {
            duration_sec: duration,
            metadata: String::new(),
            events,
        },
    }
}

pub fn generate(seed: u64, count: usize) -> Vec<SynthTask> {
    (0..count as u64).map(|i| generate_one(seed, i)).collect()
}

/// Writes `timelines/*.json` and `manifest.json` under `dir`; returns the
/// manifest path.
pub fn write_synthetic(dir: &Path, seed: u64, count: usize) -> Result<PathBuf, HarnessError> {
    let tl_dir = dir.join("timelines");
    std::fs::create_dir_all(&tl_dir).map_err(|e| HarnessError::Io(tl_dir.clone(), e))?;
    let tasks = generate(seed, count);
    for t in &tasks {
        let path = dir.join(t.task.timeline_path.as_ref().expect("synthetic tasks use timelines"));
        let body = serde_json::to_string_pretty(&t.timeline).expect("timeline serializes");
        std::fs::write(&path, body).map_err(|e| HarnessError::Io(path.clone(), e))?;
    }
    let manifest = dir.join("manifest.json");
    let list: Vec<&McqTask> = tasks.iter().map(|t| &t.task).collect();
    std::fs::write(
        &manifest,
        serde_json::to_string_pretty(&list).expect("manifest serializes"),
    )
    .map_err(|e| HarnessError::Io(manifest.clone(), e))?;
    Ok(manifest)
}
