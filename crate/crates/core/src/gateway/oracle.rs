//! Deterministic observers for running the loop without models.

use std::collections::BTreeSet;

use super::backend::{BackendError, ObservationRequest, Observer, ObserverReply};
use crate::sampling::{AnchoredFrame, FramePayload};
use crate::timeline::TimelineEvent;

pub const NO_RELEVANT_CONTENT: &str = "No content relevant to the query in these frames.";

const MIN_KEYWORD_CHARS: usize = 4;

/// Lowercased alphanumeric tokens of at least four characters.
pub fn keywords(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.chars().count() >= MIN_KEYWORD_CHARS)
        .map(|w| w.to_lowercase())
        .collect()
}

fn event_keywords(event: &TimelineEvent) -> BTreeSet<String> {
    let mut kw = keywords(&event.description);
    for entity in &event.entities {
        kw.extend(keywords(entity));
    }
    kw
}

fn entity_mentioned(event: &TimelineEvent, query_lower: &str) -> bool {
    event
        .entities
        .iter()
        .any(|e| !e.trim().is_empty() && query_lower.contains(&e.to_lowercase()))
}

/// Reports, with anchors, every event seen in `frames` that shares a
/// keyword with `query` or whose entity name appears in it. Each event
/// appears once, listing all frames that saw it. Frames carry the timeline
/// events they overlap.
pub fn oracle_answer(query: &str, frames: &[AnchoredFrame]) -> Result<String, BackendError> {
    let query_kw = keywords(query);
    let query_lower = query.to_lowercase();
    let mut matched: Vec<(&TimelineEvent, Vec<&str>)> = Vec::new();
    for f in frames {
        let events = match &f.frame.payload {
            FramePayload::Events(events) => events,
            FramePayload::Image(_) => {
                return Err(BackendError::Unsupported(
                    "timeline oracle requires a scripted timeline source".into(),
                ))
            }
        };
        for ev in events {
            if event_keywords(ev).is_disjoint(&query_kw) && !entity_mentioned(ev, &query_lower) {
                continue;
            }
            match matched.iter_mut().find(|(e, _)| *e == ev) {
                Some((_, anchors)) => anchors.push(&f.anchor_text),
                None => matched.push((ev, vec![&f.anchor_text])),
            }
        }
    }
    if matched.is_empty() {
        return Ok(NO_RELEVANT_CONTENT.to_string());
    }
    let lines: Vec<String> = matched
        .into_iter()
        .map(|(ev, anchors)| {
            let anchors: Vec<&str> = anchors.into_iter().filter(|a| !a.is_empty()).collect();
            let mut line = String::new();
            if !anchors.is_empty() {
                line.push_str(&anchors.join(" "));
                line.push(' ');
            }
            line.push_str(&ev.description);
            if !ev.entities.is_empty() {
                line.push_str(&format!(" (entities: {})", ev.entities.join(", ")));
            }
            line
        })
        .collect();
    Ok(lines.join("\n"))
}

/// Observer backed by scripted-timeline frame payloads.
#[derive(Debug, Clone, Copy, Default)]
pub struct TimelineOracle;

impl Observer for TimelineOracle {
    fn observe(&self, request: &ObservationRequest<'_>) -> Result<ObserverReply, BackendError> {
        Ok(ObserverReply {
            text: oracle_answer(request.query, request.frames)?,
            usage: None,
        })
    }
}

/// Fixed-reply observer; fails for groups starting at any listed second.
#[derive(Debug, Clone, Default)]
pub struct CannedStub {
    pub reply: String,
    pub fail_at_starts: Vec<f64>,
}

impl CannedStub {
    pub fn new(reply: impl Into<String>) -> Self {
        Self {
            reply: reply.into(),
            fail_at_starts: Vec::new(),
        }
    }

    pub fn failing_at(mut self, starts: impl IntoIterator<Item = f64>) -> Self {
        self.fail_at_starts.extend(starts);
        self
    }
}

impl Observer for CannedStub {
    fn observe(&self, request: &ObservationRequest<'_>) -> Result<ObserverReply, BackendError> {
        if self
            .fail_at_starts
            .iter()
            .any(|s| (s - request.interval.start_sec).abs() < 1e-9)
        {
            return Err(BackendError::Failed(format!(
                "injected failure at {}s",
                request.interval.start_sec
            )));
        }
        Ok(ObserverReply {
            text: self.reply.clone(),
            usage: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::FrameRef;

    fn frame(t: f64, events: Vec<TimelineEvent>) -> AnchoredFrame {
        AnchoredFrame::new(
            FrameRef {
                timestamp_sec: t,
                payload: FramePayload::Events(events),
            },
            true,
        )
    }

    fn red_car() -> TimelineEvent {
        TimelineEvent {
            start_sec: 10.0,
            end_sec: 20.0,
            description: "a red car enters".into(),
            entities: vec!["red car".into()],
        }
    }

    #[test]
    fn matching_event_reported_with_anchor() {
        let out = oracle_answer("Where is the red car?", &[frame(15.0, vec![red_car()])]).unwrap();
        assert_eq!(out, "[time: 15.0s] a red car enters (entities: red car)");
    }

    #[test]
    fn short_words_never_match() {
        let out = oracle_answer("a b c", &[frame(15.0, vec![red_car()])]).unwrap();
        assert_eq!(out, NO_RELEVANT_CONTENT);
        let mut plain = red_car();
        plain.entities.clear();
        assert_eq!(
            oracle_answer("red car", &[frame(15.0, vec![plain])]).unwrap(),
            NO_RELEVANT_CONTENT
        );
    }

    #[test]
    fn entity_phrase_in_query_matches() {
        let out = oracle_answer("red car", &[frame(15.0, vec![red_car()])]).unwrap();
        assert!(out.contains("a red car enters") && out.contains("[time: 15.0s]"));
    }

    #[test]
    fn event_deduplicated_across_frames() {
        let out = oracle_answer(
            "cars entering",
            &[
                frame(12.0, vec![red_car()]),
                frame(18.0, vec![red_car()]),
                frame(25.0, vec![]),
            ],
        );
        // "cars" != "car" and "entering" != "enters": no keyword shared.
        assert_eq!(out.unwrap(), NO_RELEVANT_CONTENT);
        let out = oracle_answer("enters", &[frame(12.0, vec![red_car()]), frame(18.0, vec![red_car()])]).unwrap();
        assert_eq!(out, "[time: 12.0s] [time: 18.0s] a red car enters (entities: red car)");
    }

    #[test]
    fn image_frames_are_rejected() {
        let f = AnchoredFrame::new(
            FrameRef {
                timestamp_sec: 1.0,
                payload: FramePayload::Image(Default::default()),
            },
            true,
        );
        assert!(matches!(
            oracle_answer("enters", &[f]),
            Err(BackendError::Unsupported(_))
        ));
    }
}
