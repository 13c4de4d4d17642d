use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use psci_core::domain::{Acquisition, ImageRecord, ImageSource, Rating};
use psci_core::ingestion::DatasetManifest;
use psci_core::llm::{
    make_mock_provider, AssessmentRequest, AssessmentResponse, MockMode, MockProvider,
    MockProviderSpec, ProviderError, VisionProvider,
};
use psci_core::prompting::{builtin_model_config, builtin_model_configs};
use psci_core::runner::{
    execute_run, execute_run_until, records_to_matrix, AssessmentRecord, Outcome, RunSpec,
    RunStore,
};

const JPEG: &[u8] = &[0xFF, 0xD8, 0xFF, 0xE0, 0, 16, b'J', b'F', b'I', b'F', 0, 1, 0xFF, 0xD9];

fn dataset(dir: &Path, truths: &[u8]) -> DatasetManifest {
    let images = truths
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let name = format!("img{i:02}.jpg");
            std::fs::write(dir.join(&name), JPEG).unwrap();
            ImageRecord {
                image_id: format!("img{i:02}"),
                source: ImageSource::PsciDoc,
                acquisition: Acquisition::Local { path: name.into() },
                byte_size: None,
                gps: None,
                ground_truth: Some(Rating::new(*t as i64).unwrap()),
            }
        })
        .collect();
    DatasetManifest::new("synthetic", images, dir).unwrap()
}

fn mock(ds: &DatasetManifest, mode: MockMode) -> MockProvider {
    let truth: HashMap<String, Rating> = ds
        .images
        .iter()
        .map(|r| (r.image_id.clone(), r.ground_truth.unwrap()))
        .collect();
    make_mock_provider(MockProviderSpec { mode, truth })
}

fn strip_volatile(mut records: Vec<AssessmentRecord>) -> Vec<AssessmentRecord> {
    records.sort_by_key(|r| r.key());
    for r in &mut records {
        r.latency = 0.0;
        r.timestamp = chrono::DateTime::UNIX_EPOCH;
    }
    records
}

#[test]
fn echo_truth_fills_every_cell_with_truth() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), &[1, 3, 5, 7, 9, 10]);
    let provider = mock(&ds, MockMode::EchoTruth);
    let store = RunStore::open(dir.path().join("runs.jsonl")).unwrap();
    let mut spec = RunSpec::new(ds.clone(), vec![builtin_model_config("model5").unwrap()]);
    spec.n_runs = 2;
    let summary = execute_run(&spec, &provider, &store).unwrap();
    assert_eq!(summary.new_records, 12);
    assert_eq!(summary.per_model["model5"].successes, 12);
    assert!(!summary.interrupted);

    let m = records_to_matrix(&store.records(), &ds);
    assert_eq!(m.n_assessors(), 2);
    for (s, rec) in ds.images.iter().enumerate() {
        for a in 0..2 {
            assert_eq!(m.cell(s, a), rec.ground_truth);
        }
    }
}

#[test]
fn all_models_produce_full_grid_in_parallel() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), &[2, 4, 6]);
    let provider = mock(&ds, MockMode::Offset { delta: 1 });
    let store = RunStore::open(dir.path().join("runs.jsonl")).unwrap();
    let mut spec = RunSpec::new(ds, builtin_model_configs());
    spec.n_runs = 3;
    spec.parallelism = 4;
    let summary = execute_run(&spec, &provider, &store).unwrap();
    assert_eq!(summary.new_records, 45);
    assert_eq!(store.len(), spec.expected_records());
    assert_eq!(summary.per_model.len(), 5);
}

#[test]
fn malformed_reply_is_corrected_in_conversation() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), &[4, 8]);
    let provider = mock(&ds, MockMode::MalformedThenValid { n_bad: 1 });
    let store = RunStore::open(dir.path().join("runs.jsonl")).unwrap();
    let mut spec = RunSpec::new(ds, vec![builtin_model_config("model1").unwrap()]);
    spec.n_runs = 2;
    spec.parse_retry_limit = 1;
    execute_run(&spec, &provider, &store).unwrap();
    for r in store.records() {
        assert!(matches!(r.parsed, Outcome::Rating(_)));
        assert_eq!(r.attempts_used, 2);
    }
}

#[test]
fn parse_retry_limit_zero_records_failure() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), &[4]);
    let provider = mock(&ds, MockMode::MalformedThenValid { n_bad: 1 });
    let store = RunStore::open(dir.path().join("runs.jsonl")).unwrap();
    let mut spec = RunSpec::new(ds, vec![builtin_model_config("model1").unwrap()]);
    spec.n_runs = 1;
    spec.parse_retry_limit = 0;
    let summary = execute_run(&spec, &provider, &store).unwrap();
    assert_eq!(summary.per_model["model1"].parse_failures, 1);
    assert_eq!(store.records()[0].parsed.rating(), None);
}

/// Stops the run after a fixed number of calls.
struct StopAfter<'a> {
    inner: MockProvider,
    calls: AtomicUsize,
    limit: usize,
    stop: &'a AtomicBool,
}

impl VisionProvider for StopAfter<'_> {
    fn descriptor(&self) -> String {
        self.inner.descriptor()
    }

    fn assess_image(&self, request: &AssessmentRequest) -> Result<AssessmentResponse, ProviderError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) + 1 >= self.limit {
            self.stop.store(true, Ordering::SeqCst);
        }
        self.inner.assess_image(request)
    }
}

#[test]
fn interrupted_then_resumed_equals_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), &[1, 2, 3, 4, 5]);
    let mut spec = RunSpec::new(ds.clone(), builtin_model_configs()[..2].to_vec());
    spec.n_runs = 3;
    let mode = MockMode::Noisy { seed: 7, sigma: 1.5 };

    let full_store = RunStore::open(dir.path().join("full.jsonl")).unwrap();
    execute_run(&spec, &mock(&ds, mode.clone()), &full_store).unwrap();

    let path = dir.path().join("resumed.jsonl");
    let stop = AtomicBool::new(false);
    let partial = {
        let store = RunStore::open(&path).unwrap();
        let provider = StopAfter {
            inner: mock(&ds, mode.clone()),
            calls: AtomicUsize::new(0),
            limit: 7,
            stop: &stop,
        };
        let s = execute_run_until(&spec, &provider, &store, &stop).unwrap();
        assert!(s.interrupted);
        store.len()
    };
    assert_eq!(partial, 7);

    let store = RunStore::open(&path).unwrap();
    let provider = mock(&ds, mode);
    let summary = execute_run(&spec, &provider, &store).unwrap();
    assert_eq!(summary.new_records, 30 - 7);
    assert_eq!(provider.calls(), 30 - 7);
    assert_eq!(
        strip_volatile(store.records()),
        strip_volatile(full_store.records())
    );

    // A third pass has nothing left to do.
    let summary = execute_run(&spec, &provider, &store).unwrap();
    assert_eq!(summary.new_records, 0);
    assert_eq!(summary.per_model.values().map(|m| m.skipped).sum::<usize>(), 30);
}

#[test]
fn missing_image_is_recorded_as_failure() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), &[5, 6]);
    std::fs::remove_file(dir.path().join("img01.jpg")).unwrap();
    let provider = mock(&ds, MockMode::EchoTruth);
    let store = RunStore::open(dir.path().join("runs.jsonl")).unwrap();
    let mut spec = RunSpec::new(ds.clone(), vec![builtin_model_config("model2").unwrap()]);
    spec.n_runs = 1;
    let summary = execute_run(&spec, &provider, &store).unwrap();
    assert_eq!(summary.per_model["model2"].image_failures, 1);
    assert_eq!(provider.calls(), 1);
    let m = records_to_matrix(&store.records(), &ds);
    assert_eq!(m.cell(1, 0), None);
}
