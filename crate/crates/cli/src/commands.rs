use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use psci_core::domain::{Acquisition, Rating};
use psci_core::evaluation::{PcaOptions, DEFAULT_OUTLIER_THRESHOLD};
use psci_core::http::{HttpTransport, UreqTransport};
use psci_core::ingestion::gsv::{GsvCache, GsvError, GSV_KEY_ENV};
use psci_core::ingestion::{check_size, load_manifest, DatasetManifest};
use psci_core::llm::{
    make_mock_provider, MockMode, MockProviderSpec, OpenAiProvider, ProviderConfig, VisionProvider,
    API_KEY_ENV, BASE_URL_ENV, DEFAULT_BASE_URL, MODEL_ENV,
};
use psci_core::prompting::{
    audit_file_name, builtin_model_config, builtin_model_configs, render_prompt, ModelConfig,
    PROMPT_VERSION,
};
use psci_core::report::{
    add_ground_truth_column, build_report, render_summary_table, write_csv_tables,
    EvaluationReport, ReferenceMode, ReportContext, ReportError, ReportOptions,
    GROUND_TRUTH_COLUMN,
};
use psci_core::runner::{
    execute_run, load_ratings_csv, merge_human_ratings, records_to_matrix, RunSpec, RunStore,
    DEFAULT_PARSE_RETRY_LIMIT, DEFAULT_RUNS,
};
use psci_core::secret::ApiKey;
use psci_core::builtin_psci_rubric;

use crate::{
    AssessArgs, CliError, Config, EvaluateArgs, FetchGsvArgs, Io, MockKind, PromptsArgs,
    ReferenceArg, ReportArgs, EXIT_OK, EXIT_PROVIDER, EXIT_USAGE,
};

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn write_err(e: std::io::Error) -> CliError {
    CliError::Data(format!("write failed: {e}"))
}

pub fn rubric(level: Option<u8>, io: &mut Io<'_>) -> Result<i32, CliError> {
    let rubric = builtin_psci_rubric();
    let out = &mut io.out;
    if level.is_none() {
        writeln!(out, "PSCI rating standard (rubric v{})", rubric.version()).map_err(write_err)?;
    }
    for l in rubric.levels() {
        if level.is_some_and(|n| n != l.level) {
            continue;
        }
        let or_dash = |s: &str| if s.is_empty() { "-".to_string() } else { s.to_string() };
        writeln!(out, "\nLevel {}", l.level).map_err(write_err)?;
        writeln!(out, "  Surface:    {}", or_dash(l.surface_text)).map_err(write_err)?;
        writeln!(out, "  Structure:  {}", or_dash(l.structure_text)).map_err(write_err)?;
        writeln!(out, "  Primary:    {}", or_dash(l.primary_indicators)).map_err(write_err)?;
        writeln!(out, "  Secondary:  {}", or_dash(l.secondary_indicators)).map_err(write_err)?;
        writeln!(out, "  Treatment:  {}", or_dash(l.treatment)).map_err(write_err)?;
    }
    Ok(EXIT_OK)
}

/// Default output path for an updated manifest: `<stem>.fetched.json` beside it.
pub fn fetched_manifest_path(manifest: &Path) -> PathBuf {
    let stem = manifest
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "manifest".into());
    manifest.with_file_name(format!("{stem}.fetched.json"))
}

pub fn fetch_gsv_live(args: &FetchGsvArgs, io: &mut Io<'_>) -> Result<i32, CliError> {
    let key = ApiKey::from_env(GSV_KEY_ENV)
        .ok_or_else(|| CliError::Usage(format!("{GSV_KEY_ENV} is not set")))?;
    fetch_gsv(args, &key, &UreqTransport::new(), io)
}

fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

/// Fetches every Street View record, writing an updated sibling manifest.
/// The input manifest is never modified.
pub fn fetch_gsv(
    args: &FetchGsvArgs,
    key: &ApiKey,
    transport: &dyn HttpTransport,
    io: &mut Io<'_>,
) -> Result<i32, CliError> {
    let mut manifest = load_manifest(&args.manifest).map_err(data)?;
    let out = args.out.clone().unwrap_or_else(|| fetched_manifest_path(&args.manifest));
    if absolute(&out) == absolute(&args.manifest) {
        return Err(CliError::Usage("refusing to overwrite the input manifest".into()));
    }
    let cache = GsvCache::new(&args.cache_dir);
    let base = absolute(&manifest.base_dir);

    let (mut fetched, mut hits) = (0usize, 0usize);
    let mut failures: Vec<(String, GsvError)> = Vec::new();
    for rec in manifest.images.iter_mut() {
        let Acquisition::Gsv { query, cached_path } = &mut rec.acquisition else {
            continue;
        };
        match cache.fetch(query, key, transport) {
            Ok(img) => {
                let abs = absolute(&img.path);
                *cached_path = Some(abs.strip_prefix(&base).map(Path::to_path_buf).unwrap_or(abs));
                rec.byte_size = Some(img.byte_size);
                if img.cache_hit {
                    hits += 1;
                } else {
                    fetched += 1;
                }
                for w in check_size(rec) {
                    writeln!(io.err, "warning: {w}").map_err(write_err)?;
                }
            }
            Err(e) => {
                log::warn!("{}: {e}", rec.image_id);
                failures.push((rec.image_id.clone(), e));
            }
        }
    }
    manifest.save(&out).map_err(data)?;
    writeln!(
        io.out,
        "fetched {fetched}, cache hits {hits}, failed {}; manifest written to {}",
        failures.len(),
        out.display()
    )
    .map_err(write_err)?;
    if failures.is_empty() {
        return Ok(EXIT_OK);
    }
    for (id, e) in &failures {
        writeln!(io.err, "  {id}: {e}").map_err(write_err)?;
    }
    Err(CliError::Provider(format!("{} image(s) remain unfetched", failures.len())))
}

/// `all` or a comma-separated list of built-in profile ids.
pub fn select_models(spec: &str) -> Result<Vec<ModelConfig>, CliError> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(builtin_model_configs());
    }
    let mut seen = BTreeSet::new();
    let mut configs = Vec::new();
    for id in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if seen.insert(id.to_string()) {
            configs.push(builtin_model_config(id).map_err(|e| CliError::Usage(e.to_string()))?);
        }
    }
    if configs.is_empty() {
        return Err(CliError::Usage("no models selected".into()));
    }
    Ok(configs)
}

fn mock_mode(args: &AssessArgs, kind: MockKind) -> Result<MockMode, CliError> {
    Ok(match kind {
        MockKind::EchoTruth => MockMode::EchoTruth,
        MockKind::Fixed => MockMode::Fixed {
            value: Rating::new(args.mock_value).map_err(|e| CliError::Usage(e.to_string()))?,
        },
        MockKind::Offset => MockMode::Offset {
            delta: args.mock_delta,
        },
        MockKind::Noisy => {
            if !(args.mock_sigma >= 0.0 && args.mock_sigma.is_finite()) {
                return Err(CliError::Usage("--mock-sigma must be a non-negative number".into()));
            }
            MockMode::Noisy {
                seed: args.mock_seed,
                sigma: args.mock_sigma,
            }
        }
        MockKind::MalformedThenValid => MockMode::MalformedThenValid { n_bad: args.mock_bad },
    })
}

fn secs(v: f64, what: &str) -> Result<Duration, CliError> {
    Duration::try_from_secs_f64(v).map_err(|_| CliError::Usage(format!("{what} must be a non-negative number of seconds")))
}

fn build_provider(
    args: &AssessArgs,
    config: &Config,
    manifest: &DatasetManifest,
) -> Result<Box<dyn VisionProvider>, CliError> {
    if let Some(kind) = args.mock {
        let truth: HashMap<String, Rating> = manifest
            .images
            .iter()
            .filter_map(|r| r.ground_truth.map(|t| (r.image_id.clone(), t)))
            .collect();
        let provider = make_mock_provider(MockProviderSpec {
            mode: mock_mode(args, kind)?,
            truth,
        });
        provider
            .check_coverage(manifest.images.iter().map(|r| r.image_id.as_str()))
            .map_err(|e| CliError::Data(format!("mock provider: {e}")))?;
        return Ok(Box::new(provider));
    }

    let key = ApiKey::from_env(API_KEY_ENV).ok_or_else(|| {
        CliError::Usage(format!("{API_KEY_ENV} is not set (or pass --mock for an offline run)"))
    })?;
    let p = &config.provider;
    let base_url = args
        .base_url
        .clone()
        .or_else(|| p.base_url.clone())
        .or_else(|| std::env::var(BASE_URL_ENV).ok())
        .unwrap_or_else(|| DEFAULT_BASE_URL.to_string());
    let model = args
        .model_name
        .clone()
        .or_else(|| p.model.clone())
        .or_else(|| std::env::var(MODEL_ENV).ok())
        .ok_or_else(|| CliError::Usage(format!("no provider model: pass --model-name or set {MODEL_ENV}")))?;
    let mut pc = ProviderConfig::new(base_url, model, key);
    pc.temperature = args.temperature.or(p.temperature);
    if let Some(t) = p.timeout_secs {
        pc.request_timeout = secs(t, "timeout_secs")?;
    }
    if let Some(n) = p.max_attempts {
        pc.max_attempts = n;
    }
    if let Some(b) = p.backoff_secs {
        pc.backoff_base = secs(b, "backoff_secs")?;
    }
    let provider = OpenAiProvider::new(pc, Arc::new(UreqTransport::new()))
        .map_err(|e| CliError::Usage(format!("provider configuration: {e}")))?;
    Ok(Box::new(provider))
}

fn confirm(io: &mut Io<'_>, question: &str) -> Result<bool, CliError> {
    write!(io.out, "{question} [y/N] ").map_err(write_err)?;
    io.out.flush().map_err(write_err)?;
    let mut line = String::new();
    io.input.read_line(&mut line).map_err(data)?;
    Ok(matches!(line.trim().to_ascii_lowercase().as_str(), "y" | "yes"))
}

pub fn assess(args: &AssessArgs, config: &Config, io: &mut Io<'_>) -> Result<i32, CliError> {
    let manifest = load_manifest(&args.manifest).map_err(data)?;
    let configs = select_models(&args.models)?;
    let mut spec = RunSpec::new(manifest, configs);
    spec.n_runs = args.runs.or(config.run.runs).unwrap_or(DEFAULT_RUNS);
    spec.parallelism = args.parallelism.or(config.run.parallelism).unwrap_or(1).max(1);
    spec.parse_retry_limit = args
        .parse_retries
        .or(config.run.parse_retry_limit)
        .unwrap_or(DEFAULT_PARSE_RETRY_LIMIT);
    if spec.n_runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    let provider = build_provider(args, config, &spec.dataset)?;

    if args.fresh && args.store.exists() {
        let existing = RunStore::open(&args.store).map_err(data)?.len();
        if !args.yes
            && !confirm(io, &format!("discard {existing} record(s) in {}?", args.store.display()))?
        {
            writeln!(io.out, "aborted").map_err(write_err)?;
            return Ok(EXIT_USAGE);
        }
        std::fs::remove_file(&args.store).map_err(data)?;
    }
    let store = RunStore::open(&args.store).map_err(data)?;
    log::info!(
        "{} images x {} profiles x {} runs with {}",
        spec.dataset.images.len(),
        spec.configs.len(),
        spec.n_runs,
        provider.descriptor()
    );
    let summary = execute_run(&spec, provider.as_ref(), &store).map_err(data)?;

    writeln!(
        io.out,
        "{:<10} {:>9} {:>13} {:>17} {:>14} {:>8}",
        "model", "successes", "parse_failed", "provider_failed", "image_failed", "skipped"
    )
    .map_err(write_err)?;
    for (model, m) in &summary.per_model {
        writeln!(
            io.out,
            "{:<10} {:>9} {:>13} {:>17} {:>14} {:>8}",
            model, m.successes, m.parse_failures, m.provider_failures, m.image_failures, m.skipped
        )
        .map_err(write_err)?;
    }
    writeln!(io.out, "{} new record(s) in {}", summary.new_records, args.store.display())
        .map_err(write_err)?;
    let provider_failures = summary.provider_failures();
    if provider_failures > 0 {
        writeln!(
            io.err,
            "{provider_failures} triple(s) exhausted provider retries and were stored as failures"
        )
        .map_err(write_err)?;
        return Ok(EXIT_PROVIDER);
    }
    Ok(EXIT_OK)
}

/// `SOURCE_DATE_EPOCH` when set, so reports can be reproduced byte for byte.
fn report_timestamp() -> DateTime<Utc> {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|t| DateTime::from_timestamp(t, 0))
        .unwrap_or_else(Utc::now)
}

fn joined(values: BTreeSet<String>) -> Option<String> {
    (!values.is_empty()).then(|| values.into_iter().collect::<Vec<_>>().join(", "))
}

pub fn evaluate(args: &EvaluateArgs, config: &Config, io: &mut Io<'_>) -> Result<i32, CliError> {
    let manifest = load_manifest(&args.manifest).map_err(data)?;
    if !args.store.exists() {
        return Err(CliError::Data(format!("run store {} does not exist", args.store.display())));
    }
    let records = RunStore::open(&args.store).map_err(data)?.records();
    let mut matrix = records_to_matrix(&records, &manifest);

    let ratings_path = args.ratings.clone().or_else(|| manifest.reference_ratings_path());
    if let Some(path) = ratings_path {
        if path.exists() {
            let rows = load_ratings_csv(&path).map_err(data)?;
            matrix = merge_human_ratings(&matrix, &rows).map_err(data)?;
        } else if args.ratings.is_some() {
            return Err(CliError::Data(format!("ratings table {} does not exist", path.display())));
        }
    }
    let has_truth = manifest.images.iter().any(|r| r.ground_truth.is_some());
    if has_truth && matrix.assessor_index(GROUND_TRUTH_COLUMN).is_none() {
        add_ground_truth_column(&mut matrix, &manifest).map_err(data)?;
    }

    let mode = match args.reference {
        ReferenceArg::GroundTruth => ReferenceMode::GroundTruth {
            column: GROUND_TRUTH_COLUMN.into(),
        },
        ReferenceArg::Consensus => ReferenceMode::Consensus {
            experts: args.experts.clone(),
        },
    };
    let e = &config.evaluate;
    let options = ReportOptions {
        outlier_threshold: args
            .outlier_threshold
            .or(e.outlier_threshold)
            .unwrap_or(DEFAULT_OUTLIER_THRESHOLD),
        exclude_outliers: args.exclude_outliers || e.exclude_outliers.unwrap_or(false),
        pca: PcaOptions {
            standardize: args.zscore || e.standardize.unwrap_or(false),
        },
    };
    let context = ReportContext {
        dataset_id: manifest.dataset_id.clone(),
        prompt_version: joined(records.iter().map(|r| r.prompt_version.clone()).collect())
            .unwrap_or_else(|| PROMPT_VERSION.to_string()),
        provider: joined(records.iter().map(|r| r.provider.clone()).collect()),
    };
    let report = build_report(&matrix, &mode, &context, &options, report_timestamp()).map_err(data)?;
    report.save(&args.out).map_err(data)?;
    if let Some(dir) = &args.csv_dir {
        write_csv_tables(&report, dir).map_err(data)?;
    }

    match &report.icc.best {
        Some(best) if matches!(mode, ReferenceMode::Consensus { .. }) => {
            writeln!(io.out, "reference: consensus of {}", best.join(", ")).map_err(write_err)?
        }
        _ => writeln!(io.out, "reference: {GROUND_TRUTH_COLUMN}").map_err(write_err)?,
    }
    write!(io.out, "{}", render_summary_table(&report)).map_err(write_err)?;
    for f in &report.outliers.flagged {
        writeln!(
            io.out,
            "outlier: {} (MAE {:.3} > {}){}",
            f.assessor,
            f.mae,
            report.outliers.threshold,
            if report.outliers.excluded { ", excluded" } else { "" }
        )
        .map_err(write_err)?;
    }
    if let Some(err) = &report.pca.error {
        writeln!(io.err, "warning: PCA not computed: {err}").map_err(write_err)?;
    }
    if let Some(err) = &report.icc.singles.error {
        log::info!("ICC not computed: {err}");
    }
    writeln!(io.out, "report written to {}", args.out.display()).map_err(write_err)?;
    Ok(EXIT_OK)
}

pub fn report(args: &ReportArgs, io: &mut Io<'_>) -> Result<i32, CliError> {
    let format = args.format.to_ascii_lowercase();
    if !matches!(format.as_str(), "table" | "json" | "csv") {
        return Err(CliError::Usage(ReportError::UnknownFormat(args.format.clone()).to_string()));
    }
    let report = EvaluationReport::load(&args.report).map_err(data)?;
    match format.as_str() {
        "table" => write!(io.out, "{}", render_summary_table(&report)).map_err(write_err)?,
        "json" => writeln!(io.out, "{}", report.to_json()).map_err(write_err)?,
        _ => {
            let dir = args.out_dir.clone().unwrap_or_else(|| {
                args.report
                    .parent()
                    .filter(|p| !p.as_os_str().is_empty())
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|| PathBuf::from("."))
            });
            write_csv_tables(&report, &dir).map_err(data)?;
            writeln!(io.out, "csv tables written to {}", dir.display()).map_err(write_err)?;
        }
    }
    Ok(EXIT_OK)
}

pub fn prompts(args: &PromptsArgs, io: &mut Io<'_>) -> Result<i32, CliError> {
    let rubric = builtin_psci_rubric();
    std::fs::create_dir_all(&args.out_dir).map_err(data)?;
    for config in select_models(&args.models)? {
        let path = args.out_dir.join(audit_file_name(&config.model_id));
        std::fs::write(&path, render_prompt(&config, &rubric).to_audit_text()).map_err(data)?;
        writeln!(io.out, "{}", path.display()).map_err(write_err)?;
    }
    Ok(EXIT_OK)
}
