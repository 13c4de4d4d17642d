use std::path::{Path, PathBuf};

use psci_core::domain::{Acquisition, AssessorKind, ImageRecord, ImageSource, Rating};
use psci_core::http::{HttpResponse, ScriptedTransport};
use psci_core::ingestion::gsv::GsvQuery;
use psci_core::ingestion::{load_manifest, DatasetManifest};
use psci_core::report::EvaluationReport;
use psci_core::runner::{load_ratings_csv, write_ratings_csv, RatingRow, RunStore};
use psci_core::secret::ApiKey;
use psci_rater::commands::fetch_gsv;
use psci_rater::{run_with, FetchGsvArgs, Io, EXIT_DATA, EXIT_OK, EXIT_PROVIDER, EXIT_USAGE};

const JPEG: &[u8] = &[0xFF, 0xD8, 0xFF, 0xE0, 0, 16, b'J', b'F', b'I', b'F', 0, 1, 0xFF, 0xD9];

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn cli_with_input(args: &[&str], input: &str) -> Run {
    let mut input = input.as_bytes();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_with(
        std::iter::once("psci-rater").chain(args.iter().copied()),
        &mut Io {
            input: &mut input,
            out: &mut out,
            err: &mut err,
        },
    );
    Run {
        code,
        out: String::from_utf8(out).unwrap(),
        err: String::from_utf8(err).unwrap(),
    }
}

fn cli(args: &[&str]) -> Run {
    cli_with_input(args, "")
}

fn local_manifest(dir: &Path, truths: &[i64], reference: Option<&str>) -> PathBuf {
    let images = truths
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let name = format!("im{i}.jpg");
            std::fs::write(dir.join(&name), JPEG).unwrap();
            ImageRecord {
                image_id: format!("im{i}"),
                source: ImageSource::PsciDoc,
                acquisition: Acquisition::Local { path: name.into() },
                byte_size: None,
                gps: None,
                ground_truth: Some(Rating::new(*t).unwrap()),
            }
        })
        .collect();
    let mut m = DatasetManifest::new("tiny", images, dir).unwrap();
    m.reference_ratings = reference.map(PathBuf::from);
    let path = dir.join("manifest.json");
    m.save(&path).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn rubric_prints_all_levels_or_one() {
    let r = cli(&["rubric"]);
    assert_eq!(r.code, EXIT_OK);
    assert!(r.out.contains("No visible defects"));
    assert_eq!(r.out.lines().filter(|l| l.starts_with("Level ")).count(), 10);

    let r = cli(&["rubric", "--level", "5"]);
    assert_eq!(r.code, EXIT_OK);
    let headings: Vec<_> = r.out.lines().filter(|l| l.starts_with("Level ")).collect();
    assert_eq!(headings, ["Level 5"]);

    assert_eq!(cli(&["rubric", "--level", "11"]).code, EXIT_USAGE);
}

#[test]
fn unknown_subcommand_and_help() {
    assert_eq!(cli(&["frobnicate"]).code, EXIT_USAGE);
    let r = cli(&["--help"]);
    assert_eq!(r.code, EXIT_OK);
    assert!(r.out.contains("assess"));
}

fn gsv_manifest(dir: &Path) -> PathBuf {
    let images = (0..3)
        .map(|i| ImageRecord {
            image_id: format!("g{i}"),
            source: ImageSource::Gsv,
            acquisition: Acquisition::Gsv {
                query: GsvQuery::at(40.0 + i as f64 * 0.001, -83.0),
                cached_path: None,
            },
            byte_size: None,
            gps: None,
            ground_truth: None,
        })
        .collect();
    let path = dir.join("streets.json");
    DatasetManifest::new("streets", images, dir).unwrap().save(&path).unwrap();
    path
}

fn fetch(args: &FetchGsvArgs, transport: &ScriptedTransport) -> Run {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut input: &[u8] = b"";
    let code = match fetch_gsv(
        args,
        &ApiKey::new("secret-key-123"),
        transport,
        &mut Io {
            input: &mut input,
            out: &mut out,
            err: &mut err,
        },
    ) {
        Ok(c) => c,
        Err(e) => {
            err.extend_from_slice(e.to_string().as_bytes());
            e.exit_code()
        }
    };
    Run {
        code,
        out: String::from_utf8(out).unwrap(),
        err: String::from_utf8(err).unwrap(),
    }
}

fn cached_files(dir: &Path) -> usize {
    std::fs::read_dir(dir.join("gsv")).map(|d| d.count()).unwrap_or(0)
}

#[test]
fn fetch_gsv_caches_and_reuses() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gsv_manifest(dir.path());
    let args = FetchGsvArgs {
        manifest: manifest.clone(),
        cache_dir: dir.path().join("cache"),
        out: None,
    };
    let ok = || Ok(HttpResponse::new(200, Some("image/jpeg"), JPEG));

    let t = ScriptedTransport::new(vec![ok()]);
    let r = fetch(&args, &t);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert_eq!(t.calls(), 3);
    assert_eq!(cached_files(&args.cache_dir), 3);
    let fetched = load_manifest(&dir.path().join("streets.fetched.json")).unwrap();
    for rec in &fetched.images {
        let p = fetched.resolve(rec.local_path().expect("cached path recorded"));
        assert_eq!(std::fs::read(p).unwrap(), JPEG);
    }
    // input manifest untouched
    assert!(load_manifest(&manifest).unwrap().images.iter().all(|r| r.local_path().is_none()));

    let t = ScriptedTransport::new(vec![ok()]);
    let r = fetch(&args, &t);
    assert_eq!(r.code, EXIT_OK);
    assert_eq!(t.calls(), 0);
    assert!(r.out.contains("cache hits 3"));
}

#[test]
fn fetch_gsv_quota_error_keeps_partial_cache() {
    let dir = tempfile::tempdir().unwrap();
    let args = FetchGsvArgs {
        manifest: gsv_manifest(dir.path()),
        cache_dir: dir.path().join("cache"),
        out: None,
    };
    let ok = || Ok(HttpResponse::new(200, Some("image/jpeg"), JPEG));
    let t = ScriptedTransport::new(vec![ok(), ok(), Ok(HttpResponse::new(403, None, "denied"))]);
    let r = fetch(&args, &t);
    assert_eq!(r.code, EXIT_PROVIDER);
    assert_eq!(cached_files(&args.cache_dir), 2);
    assert!(r.out.contains("failed 1"));
    assert!(!r.out.contains("secret-key-123") && !r.err.contains("secret-key-123"));
}

#[test]
fn fetch_gsv_refuses_in_place_write() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gsv_manifest(dir.path());
    let args = FetchGsvArgs {
        manifest: manifest.clone(),
        cache_dir: dir.path().join("cache"),
        out: Some(manifest),
    };
    let t = ScriptedTransport::new(vec![Ok(HttpResponse::new(200, Some("image/jpeg"), JPEG))]);
    assert_eq!(fetch(&args, &t).code, EXIT_USAGE);
    assert_eq!(t.calls(), 0);
}

#[test]
fn assess_with_mock_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let m = local_manifest(dir.path(), &[2, 4, 6, 8], None);
    let store = dir.path().join("runs.jsonl");
    let base = ["assess", "--manifest", s(&m), "--store", s(&store), "--mock", "fixed", "--mock-value", "5"];

    let mut args = base.to_vec();
    args.extend(["--models", "model1,model3", "--runs", "1"]);
    let r = cli(&args);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert!(r.out.contains("8 new record(s)"));
    assert_eq!(RunStore::open(&store).unwrap().len(), 8);

    let r = cli(&args);
    assert!(r.out.contains("0 new record(s)"));

    let mut args = base.to_vec();
    args.extend(["--models", "all", "--runs", "2", "--parallelism", "3"]);
    let r = cli(&args);
    assert_eq!(r.code, EXIT_OK);
    assert_eq!(RunStore::open(&store).unwrap().len(), 5 * 2 * 4);
}

#[test]
fn assess_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let m = local_manifest(dir.path(), &[2, 4], None);
    let store = dir.path().join("runs.jsonl");
    let r = cli(&["assess", "--manifest", s(&m), "--store", s(&store), "--mock", "echo-truth", "--models", "model9"]);
    assert_eq!(r.code, EXIT_USAGE);
    let r = cli(&["assess", "--manifest", s(&dir.path().join("nope.json")), "--mock", "echo-truth"]);
    assert_eq!(r.code, EXIT_DATA);
}

#[test]
fn assess_fresh_asks_first() {
    let dir = tempfile::tempdir().unwrap();
    let m = local_manifest(dir.path(), &[3, 5], None);
    let store = dir.path().join("runs.jsonl");
    let args = ["assess", "--manifest", s(&m), "--store", s(&store), "--mock", "echo-truth", "--models", "model2", "--runs", "1"];
    assert_eq!(cli(&args).code, EXIT_OK);

    let mut fresh = args.to_vec();
    fresh.push("--fresh");
    let r = cli_with_input(&fresh, "n\n");
    assert!(r.out.contains("aborted"));
    assert_eq!(r.code, EXIT_USAGE);
    assert_eq!(RunStore::open(&store).unwrap().len(), 2);

    let r = cli_with_input(&fresh, "y\n");
    assert_eq!(r.code, EXIT_OK);
    assert!(r.out.contains("2 new record(s)"));
}

#[test]
fn collect_ratings_session() {
    let dir = tempfile::tempdir().unwrap();
    let m = local_manifest(dir.path(), &[3, 5, 7], Some("ratings.csv"));
    let r = cli_with_input(
        &["collect-ratings", "--manifest", s(&m), "--assessor", "ann", "--kind", "expert"],
        "7\n7\n7\n",
    );
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert!(r.out.contains("3 rating(s) saved"));
    let rows = load_ratings_csv(&dir.path().join("ratings.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.rating.value() == 7 && r.kind == AssessorKind::HumanExpert));
}

#[test]
fn collect_ratings_reprompts_and_quits() {
    let dir = tempfile::tempdir().unwrap();
    let m = local_manifest(dir.path(), &[3, 5, 7], None);
    let out = dir.path().join("bob.csv");
    let r = cli_with_input(
        &["collect-ratings", "--manifest", s(&m), "--assessor", "bob", "--kind", "novice", "--out", s(&out)],
        "0\nseven\n4\nq\n",
    );
    assert_eq!(r.code, EXIT_OK);
    assert_eq!(r.out.matches("rating 1-10").count(), 4);
    let rows = load_ratings_csv(&out).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].image_id.as_str(), rows[0].rating.value()), ("im0", 4));

    // second pass: overwrite the first, skip the rest
    let r = cli_with_input(
        &["collect-ratings", "--manifest", s(&m), "--assessor", "bob", "--kind", "novice", "--out", s(&out)],
        "6\ny\n\n\n",
    );
    assert_eq!(r.code, EXIT_OK);
    assert!(r.out.contains("overwrite?"));
    let rows = load_ratings_csv(&out).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].rating.value(), 6);

    let r = cli(&["collect-ratings", "--manifest", s(&m), "--assessor", "x", "--kind", "robot", "--out", s(&out)]);
    assert_eq!(r.code, EXIT_USAGE);
}

fn rows(assessor: &str, kind: AssessorKind, values: &[i64]) -> Vec<RatingRow> {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| RatingRow {
            image_id: format!("im{i}"),
            assessor_id: assessor.into(),
            kind: kind.clone(),
            rating: Rating::new(*v).unwrap(),
        })
        .collect()
}

#[test]
fn evaluate_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let truth = [2, 4, 6, 8, 3, 9];
    let m = local_manifest(dir.path(), &truth, Some("ratings.csv"));
    let mut table = rows("e1", AssessorKind::HumanExpert, &[2, 4, 6, 8, 3, 9]);
    table.extend(rows("n1", AssessorKind::HumanNovice, &[4, 3, 8, 6, 5, 7]));
    write_ratings_csv(&dir.path().join("ratings.csv"), &table).unwrap();

    let store = dir.path().join("runs.jsonl");
    let r = cli(&["assess", "--manifest", s(&m), "--store", s(&store), "--mock", "echo-truth", "--runs", "2"]);
    assert_eq!(r.code, EXIT_OK);

    let report = dir.path().join("out/report.json");
    std::fs::create_dir_all(report.parent().unwrap()).unwrap();
    let r = cli(&["evaluate", "--manifest", s(&m), "--store", s(&store), "--reference", "ground-truth", "--out", s(&report)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert!(r.out.contains("reference: ground_truth"));
    let rep = EvaluationReport::load(&report).unwrap();
    for g in rep.groups.iter().filter(|g| g.is_model) {
        assert_eq!(g.mae, Some(0.0));
    }
    let novice = rep.assessor("n1").unwrap();
    assert!((novice.mae.unwrap() - 11.0 / 6.0).abs() < 1e-12);

    // table is sorted by MAE, best first
    let t = cli(&["report", "--report", s(&report)]);
    assert_eq!(t.code, EXIT_OK);
    let pos = |needle: &str| t.out.find(needle).unwrap();
    assert!(pos("model1") < pos("novice") || pos("model5") < pos("novice"));

    // json output parses back to the same report
    let j = cli(&["report", "--report", s(&report), "--format", "json"]);
    assert_eq!(EvaluationReport::from_json(j.out.trim()).unwrap(), rep);

    // csv lands next to the report by default
    let c = cli(&["report", "--report", s(&report), "--format", "csv"]);
    assert_eq!(c.code, EXIT_OK);
    let pca = std::fs::read_to_string(dir.path().join("out/pca_coords.csv")).unwrap();
    let p = rep.pca.value.as_ref().unwrap();
    assert_eq!(pca.lines().count(), 1 + p.points.len() + p.centroids.len());

    assert_eq!(cli(&["report", "--report", s(&report), "--format", "xml"]).code, EXIT_USAGE);
    assert_eq!(cli(&["report", "--report", s(&dir.path().join("none.json"))]).code, EXIT_DATA);
}

#[test]
fn evaluate_consensus_picks_agreeing_experts() {
    let dir = tempfile::tempdir().unwrap();
    let m = local_manifest(dir.path(), &[5, 5, 5, 5, 5, 5, 5, 5], None);
    let mut table = rows("A", AssessorKind::HumanExpert, &[7, 2, 9, 3, 4, 8, 1, 6]);
    table.extend(rows("B", AssessorKind::HumanExpert, &[2, 4, 5, 7, 8, 3, 6, 9]));
    table.extend(rows("C", AssessorKind::HumanExpert, &[3, 4, 6, 7, 9, 3, 5, 9]));
    let ratings = dir.path().join("experts.csv");
    write_ratings_csv(&ratings, &table).unwrap();
    let store = dir.path().join("runs.jsonl");
    cli(&["assess", "--manifest", s(&m), "--store", s(&store), "--mock", "fixed", "--models", "model1", "--runs", "1"]);

    let report = dir.path().join("report.json");
    let r = cli(&[
        "evaluate", "--manifest", s(&m), "--store", s(&store), "--ratings", s(&ratings),
        "--reference", "consensus", "--out", s(&report),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert!(r.out.contains("reference: consensus of B, C"));
    let rep = EvaluationReport::load(&report).unwrap();
    assert_eq!(rep.icc.best.as_deref(), Some(&["B".to_string(), "C".to_string()][..]));
    assert_eq!(rep.reference.get("im0"), Some(2.5));

    let r = cli(&[
        "evaluate", "--manifest", s(&m), "--store", s(&store), "--ratings", s(&ratings),
        "--reference", "consensus", "--experts", "A", "--out", s(&report),
    ]);
    assert_eq!(r.code, EXIT_DATA);
}

#[test]
fn evaluate_needs_a_store() {
    let dir = tempfile::tempdir().unwrap();
    let m = local_manifest(dir.path(), &[5, 6], None);
    let r = cli(&["evaluate", "--manifest", s(&m), "--store", s(&dir.path().join("x.jsonl")), "--reference", "ground-truth"]);
    assert_eq!(r.code, EXIT_DATA);
}

#[test]
fn prompts_export_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p");
    let r = cli(&["prompts", "--out-dir", s(&out), "--models", "model1,model5"]);
    assert_eq!(r.code, EXIT_OK);
    assert_eq!(r.out.lines().count(), 2);
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 2);
}

#[test]
fn config_file_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[provider]\napi_key = \"nope\"\n").unwrap();
    assert_eq!(cli(&["--config", s(&cfg), "rubric"]).code, EXIT_DATA);
    std::fs::write(&cfg, "[run]\nruns = 2\n").unwrap();
    assert_eq!(cli(&["--config", s(&cfg), "rubric", "--level", "1"]).code, EXIT_OK);
}
