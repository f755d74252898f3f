//! Session event log (JSON Lines) and its replay.

use std::io::BufRead;

use lecodu::collab::CollaborationMode;
use serde::{Deserialize, Serialize};

use crate::session::{SessionOptions, Stats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        session: u64,
        bundle: String,
        options: SessionOptions,
        queue: Vec<u64>,
    },
    Served {
        sample_id: u64,
        mode: CollaborationMode,
        labels_needed: usize,
        recorded_labels: Vec<usize>,
    },
    Resolved {
        sample_id: u64,
        mode: CollaborationMode,
        human_labels: Vec<usize>,
        recorded_labels: Vec<usize>,
        prediction: usize,
        true_label: usize,
        labels_consumed: usize,
    },
}

/// Rebuilds running stats from a log.
pub fn replay(events: &[Event]) -> Stats {
    let mut stats = Stats::default();
    for e in events {
        if let Event::Resolved {
            human_labels,
            recorded_labels,
            prediction,
            true_label,
            labels_consumed,
            ..
        } = e
        {
            stats.n += 1;
            stats.correct += usize::from(prediction == true_label);
            stats.cost += labels_consumed;
            stats.human_labels += human_labels.len();
            stats.recorded_labels += recorded_labels.len();
        }
    }
    stats
}

pub fn read_events<R: BufRead>(input: R) -> Result<Vec<Event>, serde_json::Error> {
    input
        .lines()
        .map(|l| l.map_err(serde_json::Error::io))
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|l| serde_json::from_str(&l?))
        .collect()
}
