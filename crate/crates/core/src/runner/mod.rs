//! Multi-run assessment protocol: every (image, model config, run) triple is
//! asked once, parsed, and persisted, and the store is the resume point.

mod parse;
mod ratings;
mod store;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::Utc;
use serde::Serialize;

use crate::domain::{builtin_psci_rubric, AssessorId, RatingMatrix};
use crate::ingestion::{encode_image, DatasetManifest, EncodedImage};
use crate::llm::{AssessmentRequest, FollowUp, VisionProvider};
use crate::prompting::{render_prompt, ModelConfig, PromptBundle, PROMPT_VERSION};

pub use parse::{parse_rating, NoRatingFound};
pub use ratings::{
    append_rating_rows, load_ratings_csv, merge_human_ratings, write_ratings_csv, MergeError,
    RatingRow,
};
pub use store::{AssessmentRecord, FailureKind, Outcome, RecordKey, RunStore, StoreError};

/// Corrective follow-up sent when a reply contains no usable rating.
pub const CORRECTION_MESSAGE: &str = "Reply with one integer from 1 to 10 only.";

pub const DEFAULT_RUNS: u32 = 10;
pub const DEFAULT_PARSE_RETRY_LIMIT: u32 = 2;

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub dataset: DatasetManifest,
    pub configs: Vec<ModelConfig>,
    pub n_runs: u32,
    pub parallelism: usize,
    pub parse_retry_limit: u32,
}

impl RunSpec {
    pub fn new(dataset: DatasetManifest, configs: Vec<ModelConfig>) -> Self {
        Self {
            dataset,
            configs,
            n_runs: DEFAULT_RUNS,
            parallelism: 1,
            parse_retry_limit: DEFAULT_PARSE_RETRY_LIMIT,
        }
    }

    /// Number of records a completed run holds.
    pub fn expected_records(&self) -> usize {
        self.dataset.images.len() * self.configs.len() * self.n_runs as usize
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ModelSummary {
    pub successes: usize,
    pub parse_failures: usize,
    pub provider_failures: usize,
    pub image_failures: usize,
    /// Triples already in the store before this run.
    pub skipped: usize,
}

impl ModelSummary {
    pub fn failures(&self) -> usize {
        self.parse_failures + self.provider_failures + self.image_failures
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub per_model: BTreeMap<String, ModelSummary>,
    pub new_records: usize,
    /// True when the run stopped before every pending triple was attempted.
    pub interrupted: bool,
}

impl RunSummary {
    pub fn provider_failures(&self) -> usize {
        self.per_model.values().map(|m| m.provider_failures).sum()
    }
}

struct Triple<'a> {
    image_idx: usize,
    config: &'a ModelConfig,
    bundle: &'a PromptBundle,
    run_index: u32,
}

/// Executes every pending triple of `spec`.
pub fn execute_run(
    spec: &RunSpec,
    provider: &dyn VisionProvider,
    store: &RunStore,
) -> Result<RunSummary, StoreError> {
    execute_run_until(spec, provider, store, &AtomicBool::new(false))
}

/// As [`execute_run`], but stops dispatching new triples once `stop` is set.
/// Triples already in flight still complete and are persisted.
pub fn execute_run_until(
    spec: &RunSpec,
    provider: &dyn VisionProvider,
    store: &RunStore,
    stop: &AtomicBool,
) -> Result<RunSummary, StoreError> {
    let rubric = builtin_psci_rubric();
    let bundles: Vec<PromptBundle> = spec.configs.iter().map(|c| render_prompt(c, &rubric)).collect();
    let descriptor = provider.descriptor();

    let mut summary = RunSummary::default();
    let mut pending = Vec::new();
    for (image_idx, image) in spec.dataset.images.iter().enumerate() {
        for (config, bundle) in spec.configs.iter().zip(&bundles) {
            let entry = summary.per_model.entry(config.model_id.clone()).or_default();
            for run_index in 0..spec.n_runs {
                if store.contains(&image.image_id, &config.model_id, run_index) {
                    entry.skipped += 1;
                } else {
                    pending.push(Triple {
                        image_idx,
                        config,
                        bundle,
                        run_index,
                    });
                }
            }
        }
    }

    let encoded: Vec<Mutex<Option<Result<Arc<EncodedImage>, String>>>> =
        spec.dataset.images.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let summary_cell = Mutex::new(summary);
    let fatal: Mutex<Option<StoreError>> = Mutex::new(None);
    let halted = AtomicBool::new(false);

    let worker = || loop {
        if stop.load(Ordering::SeqCst) || halted.load(Ordering::SeqCst) {
            break;
        }
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(triple) = pending.get(i) else { break };
        let image_rec = &spec.dataset.images[triple.image_idx];
        let image = {
            let mut slot = encoded[triple.image_idx].lock().unwrap();
            slot.get_or_insert_with(|| {
                encode_image(&spec.dataset, image_rec)
                    .map(Arc::new)
                    .map_err(|e| e.to_string())
            })
            .clone()
        };
        let record = assess_triple(triple, image, image_rec.image_id.as_str(), provider, &descriptor, spec.parse_retry_limit);
        let model_id = record.model_id.clone();
        let outcome = record.parsed.clone();
        if let Err(e) = store.append(record) {
            halted.store(true, Ordering::SeqCst);
            fatal.lock().unwrap().get_or_insert(e);
            break;
        }
        let mut s = summary_cell.lock().unwrap();
        s.new_records += 1;
        let m = s.per_model.entry(model_id).or_default();
        match outcome {
            Outcome::Rating(_) => m.successes += 1,
            Outcome::Failure { kind: FailureKind::NoRatingFound, .. } => m.parse_failures += 1,
            Outcome::Failure { kind: FailureKind::Provider, .. } => m.provider_failures += 1,
            Outcome::Failure { kind: FailureKind::Image, .. } => m.image_failures += 1,
        }
    };

    let workers = spec.parallelism.max(1).min(pending.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(&worker);
        }
    });

    if let Some(e) = fatal.into_inner().unwrap() {
        return Err(e);
    }
    let mut summary = summary_cell.into_inner().unwrap();
    summary.interrupted = next.load(Ordering::SeqCst) < pending.len();
    Ok(summary)
}

fn assess_triple(
    triple: &Triple<'_>,
    image: Result<Arc<EncodedImage>, String>,
    image_id: &str,
    provider: &dyn VisionProvider,
    descriptor: &str,
    parse_retry_limit: u32,
) -> AssessmentRecord {
    let mut record = AssessmentRecord {
        image_id: image_id.to_string(),
        model_id: triple.config.model_id.clone(),
        run_index: triple.run_index,
        prompt_version: PROMPT_VERSION.to_string(),
        provider: descriptor.to_string(),
        raw_text: String::new(),
        parsed: Outcome::Failure {
            kind: FailureKind::Image,
            detail: String::new(),
        },
        attempts_used: 0,
        latency: 0.0,
        timestamp: Utc::now(),
    };
    let image = match image {
        Ok(image) => image,
        Err(detail) => {
            record.parsed = Outcome::Failure {
                kind: FailureKind::Image,
                detail,
            };
            return record;
        }
    };

    let mut followups: Vec<FollowUp> = Vec::new();
    let mut latency = Duration::ZERO;
    loop {
        let request = AssessmentRequest {
            bundle: triple.bundle.clone(),
            image: (*image).clone(),
            run_index: triple.run_index,
            followups: followups.clone(),
        };
        match provider.assess_image(&request) {
            Err(e) => {
                record.attempts_used += e.attempts_used;
                record.parsed = Outcome::Failure {
                    kind: FailureKind::Provider,
                    detail: e.to_string(),
                };
                break;
            }
            Ok(resp) => {
                record.attempts_used += resp.attempts_used;
                latency += resp.latency;
                match parse_rating(&resp.raw_text) {
                    Ok(r) => {
                        record.raw_text = resp.raw_text;
                        record.parsed = Outcome::Rating(r);
                        break;
                    }
                    Err(_) if (followups.len() as u32) < parse_retry_limit => {
                        followups.push(FollowUp {
                            assistant_reply: resp.raw_text,
                            user_correction: CORRECTION_MESSAGE.to_string(),
                        });
                    }
                    Err(e) => {
                        record.parsed = Outcome::Failure {
                            kind: FailureKind::NoRatingFound,
                            detail: e.to_string(),
                        };
                        record.raw_text = resp.raw_text;
                        break;
                    }
                }
            }
        }
    }
    record.latency = latency.as_secs_f64();
    record.timestamp = Utc::now();
    record
}

/// One `model_run` column per (model_id, run_index), ordered by model id then
/// run; rows follow the manifest. Failed triples leave cells empty.
pub fn records_to_matrix(records: &[AssessmentRecord], dataset: &DatasetManifest) -> RatingMatrix {
    let mut matrix = RatingMatrix::new(dataset.image_ids());
    let row_of: HashMap<&str, usize> = dataset
        .images
        .iter()
        .enumerate()
        .map(|(i, r)| (r.image_id.as_str(), i))
        .collect();
    let mut columns: BTreeMap<(String, u32), Vec<&AssessmentRecord>> = BTreeMap::new();
    for rec in records {
        if row_of.contains_key(rec.image_id.as_str()) {
            columns
                .entry((rec.model_id.clone(), rec.run_index))
                .or_default()
                .push(rec);
        }
    }
    for ((model_id, run_index), recs) in columns {
        let col = matrix
            .add_assessor(AssessorId::model_run(&model_id, run_index))
            .expect("column ids are unique");
        for rec in recs {
            matrix.set(row_of[rec.image_id.as_str()], col, rec.parsed.rating());
        }
    }
    matrix
}
