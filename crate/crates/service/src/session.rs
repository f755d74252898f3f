//! One live deferral session: a seeded queue over the recorded test pool, a
//! single pending label request at a time, and an append-only event log.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::sync::Arc;

use lecodu::collab::{CollaborationMode, LecoduModel, RecordedProvider};
use lecodu::numerics::Rng;
use lecodu::taskgen::MultiRaterDataset;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::events::{replay, Event};
use crate::ServiceError;

/// Per-session overrides accepted at creation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionOptions {
    /// Seeds the sample order.
    pub seed: u64,
    /// How many of a request's labels the person supplies; the recorded
    /// pool fills the rest.
    pub human_slots: usize,
    /// Seeds the per-sample shuffle of recorded annotations.
    pub provider_seed: u64,
    /// Serve at most this many samples.
    pub limit: Option<usize>,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            human_slots: 1,
            provider_seed: 0,
            limit: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub n: usize,
    pub correct: usize,
    /// Labels consumed: human plus recorded.
    pub cost: usize,
    pub human_labels: usize,
    pub recorded_labels: usize,
}

impl Stats {
    pub fn accuracy(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.correct as f64 / self.n as f64
        }
    }

    pub fn cost_per_sample(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.cost as f64 / self.n as f64
        }
    }
}

/// Stats as reported over the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsView {
    #[serde(flatten)]
    pub stats: Stats,
    pub accuracy: f64,
    pub cost_per_sample: f64,
    pub remaining: usize,
    pub pending: Option<u64>,
    pub finished: bool,
}

/// A 2-D position for plotting the query among training points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderHint {
    pub kind: String,
    pub point: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub sample_id: u64,
    pub mode: CollaborationMode,
    pub prediction: usize,
    pub correct: bool,
    /// Revealed only once the sample is resolved.
    pub true_label: usize,
    pub stats: StatsView,
}

/// What `next` hands to the client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub sample_id: u64,
    pub features: Vec<f64>,
    pub render_hint: RenderHint,
    pub decision: CollaborationMode,
    pub selection_probs: Vec<f64>,
    /// Present only when the decision uses the AI prediction.
    pub ai_argmax: Option<usize>,
    /// Labels the person must submit.
    pub labels_needed: usize,
    /// Labels the decision consumes in total.
    pub labels_total: usize,
    /// Set when no person input is needed and the sample was resolved.
    pub result: Option<Resolution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NextResponse {
    Query(Box<Query>),
    Done { done: bool, stats: StatsView },
}

#[derive(Debug, Clone)]
struct Pending {
    index: usize,
    sample_id: u64,
    mode: CollaborationMode,
    human_slots: usize,
    recorded: Vec<usize>,
}

pub struct Session {
    pub id: u64,
    pub bundle: String,
    model: Arc<LecoduModel>,
    pool: Arc<MultiRaterDataset>,
    provider: RecordedProvider,
    options: SessionOptions,
    order: Vec<usize>,
    cursor: usize,
    stats: Stats,
    pending: Option<Pending>,
    events: Vec<Event>,
    log: Option<BufWriter<File>>,
}

impl Session {
    pub fn new(
        id: u64,
        bundle: String,
        model: Arc<LecoduModel>,
        pool: Arc<MultiRaterDataset>,
        options: SessionOptions,
        log: Option<File>,
    ) -> Result<Self, ServiceError> {
        if pool.m != model.m {
            return Err(ServiceError::Validation(format!(
                "bundle {bundle} expects M = {}, the pool has {}",
                model.m, pool.m
            )));
        }
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut Rng::seeded(options.seed));
        if let Some(limit) = options.limit {
            order.truncate(limit);
        }
        let provider = RecordedProvider::from_dataset(&pool, options.provider_seed);
        let mut session = Self {
            id,
            bundle: bundle.clone(),
            model,
            pool,
            provider,
            options: options.clone(),
            order,
            cursor: 0,
            stats: Stats::default(),
            pending: None,
            events: Vec::new(),
            log: log.map(BufWriter::new),
        };
        session.record(Event::Created {
            session: id,
            bundle,
            options,
            queue: session.order.iter().map(|i| session.pool.samples[*i].id).collect(),
        })?;
        Ok(session)
    }

    /// Sample ids in serving order.
    pub fn queue(&self) -> Vec<u64> {
        self.order.iter().map(|i| self.pool.samples[*i].id).collect()
    }

    pub fn stats(&self) -> StatsView {
        StatsView {
            stats: self.stats,
            accuracy: self.stats.accuracy(),
            cost_per_sample: self.stats.cost_per_sample(),
            remaining: self.order.len() - self.cursor,
            pending: self.pending.as_ref().map(|p| p.sample_id),
            finished: self.cursor == self.order.len() && self.pending.is_none(),
        }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    fn record(&mut self, event: Event) -> Result<(), ServiceError> {
        if let Some(log) = self.log.as_mut() {
            serde_json::to_writer(&mut *log, &event).map_err(|e| ServiceError::Internal(e.to_string()))?;
            log.write_all(b"\n")
                .and_then(|_| log.flush())
                .map_err(|e| ServiceError::Internal(e.to_string()))?;
        }
        self.events.push(event);
        Ok(())
    }

    pub fn next(&mut self) -> Result<NextResponse, ServiceError> {
        if let Some(p) = &self.pending {
            return Err(ServiceError::Conflict(format!(
                "sample {} is still waiting for labels",
                p.sample_id
            )));
        }
        if self.cursor == self.order.len() {
            return Ok(NextResponse::Done {
                done: true,
                stats: self.stats(),
            });
        }
        let index = self.order[self.cursor];
        self.cursor += 1;
        let sample = &self.pool.samples[index];
        let sample_id = sample.id;
        let features = sample.features.clone();
        let (mode, selection_probs) = self.model.select(&features).map_err(internal)?;
        let k = mode.users();
        let shuffled = self.provider.shuffled(sample_id).unwrap_or_default();
        let human_slots = self.options.human_slots.min(k);
        let recorded = shuffled[human_slots..k].to_vec();
        let ai_argmax = if mode.uses_ai() {
            Some(self.model.base.predict(&features).map_err(internal)?)
        } else {
            None
        };
        self.pending = Some(Pending {
            index,
            sample_id,
            mode,
            human_slots,
            recorded: recorded.clone(),
        });
        self.record(Event::Served {
            sample_id,
            mode,
            labels_needed: human_slots,
            recorded_labels: recorded,
        })?;
        let render_hint = RenderHint {
            kind: "scatter2d".into(),
            point: [features.first().copied().unwrap_or(0.0), features.get(1).copied().unwrap_or(0.0)],
        };
        let result = if human_slots == 0 {
            Some(self.resolve(Vec::new())?)
        } else {
            None
        };
        Ok(NextResponse::Query(Box::new(Query {
            sample_id,
            features,
            render_hint,
            decision: mode,
            selection_probs,
            ai_argmax,
            labels_needed: human_slots,
            labels_total: k,
            result,
        })))
    }

    pub fn submit(&mut self, sample_id: u64, labels: &[usize]) -> Result<Resolution, ServiceError> {
        let pending = self
            .pending
            .as_ref()
            .ok_or_else(|| ServiceError::Conflict("no label request is pending".into()))?;
        if pending.sample_id != sample_id {
            return Err(ServiceError::Conflict(format!(
                "pending request is for sample {}, not {sample_id}",
                pending.sample_id
            )));
        }
        if labels.len() != pending.human_slots {
            return Err(ServiceError::Validation(format!(
                "expected {} labels, got {}",
                pending.human_slots,
                labels.len()
            )));
        }
        let k = self.model.num_classes();
        if let Some(bad) = labels.iter().find(|l| **l >= k) {
            return Err(ServiceError::Validation(format!("label {bad} outside 0..{k}")));
        }
        self.resolve(labels.to_vec())
    }

    fn resolve(&mut self, human: Vec<usize>) -> Result<Resolution, ServiceError> {
        let pending = self.pending.take().expect("resolve with a pending request");
        let sample = &self.pool.samples[pending.index];
        let mut labels = human.clone();
        labels.extend_from_slice(&pending.recorded);
        let prediction = self
            .model
            .fuse(&sample.features, pending.mode, &labels)
            .map_err(internal)?;
        let true_label = sample
            .true_label
            .ok_or_else(|| ServiceError::Internal(format!("sample {} has no true label", sample.id)))?;
        let correct = prediction == true_label;
        self.stats.n += 1;
        self.stats.correct += usize::from(correct);
        self.stats.cost += pending.mode.cost();
        self.stats.human_labels += human.len();
        self.stats.recorded_labels += pending.recorded.len();
        self.record(Event::Resolved {
            sample_id: pending.sample_id,
            mode: pending.mode,
            human_labels: human,
            recorded_labels: pending.recorded,
            prediction,
            true_label,
            labels_consumed: pending.mode.cost(),
        })?;
        debug_assert_eq!(replay(&self.events).cost, self.stats.cost);
        Ok(Resolution {
            sample_id: pending.sample_id,
            mode: pending.mode,
            prediction,
            correct,
            true_label,
            stats: self.stats(),
        })
    }
}

fn internal(e: lecodu::Error) -> ServiceError {
    ServiceError::Internal(e.to_string())
}
