//! Evaluation report: every agreement statistic for one dataset in a single
//! serializable document, plus flat CSV renderings for plotting.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AssessorId, AssessorKind, Rating, RatingMatrix};
use crate::evaluation::{
    assessor_metrics, best_expert_combination, consensus, flag_outliers, ground_truth_reference,
    group_label, icc, level_differences, pca_observations, pooled_group_metrics,
    rating_distribution, AssessorMetrics, CombinationIcc, EvalError, GroupMetrics, IccResult,
    IccVariant, LevelDifferenceStats, PcaOptions, ReferenceSeries, DEFAULT_OUTLIER_THRESHOLD,
};
use crate::ingestion::DatasetManifest;

pub const GROUND_TRUTH_COLUMN: &str = "ground_truth";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("missing reference: {0}")]
    MissingReference(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("report is not valid JSON: {0}")]
    Json(String),
    #[error("unknown report format '{0}'")]
    UnknownFormat(String),
}

impl ReportError {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        ReportError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

/// How the reference standard is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceMode {
    /// Use the named column (normally [`GROUND_TRUTH_COLUMN`]).
    GroundTruth { column: String },
    /// Mean of the most reliable expert subset. `None` uses every
    /// `human_expert` column.
    Consensus { experts: Option<Vec<String>> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub outlier_threshold: f64,
    /// Drop flagged assessors from PCA and group summaries.
    pub exclude_outliers: bool,
    pub pca: PcaOptions,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            outlier_threshold: DEFAULT_OUTLIER_THRESHOLD,
            exclude_outliers: false,
            pca: PcaOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportContext {
    pub dataset_id: String,
    pub prompt_version: String,
    pub provider: Option<String>,
}

/// Either a computed value or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section<T> {
    #[serde(default = "none", skip_serializing_if = "Option::is_none")]
    pub value: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn none<T>() -> Option<T> {
    None
}

impl<T> Section<T> {
    fn from_result(r: Result<T, impl std::fmt::Display>) -> Self {
        match r {
            Ok(v) => Section {
                value: Some(v),
                error: None,
            },
            Err(e) => Section {
                value: None,
                error: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedAssessor {
    pub assessor: String,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub threshold: f64,
    pub flagged: Vec<FlaggedAssessor>,
    /// Whether flagged assessors were left out of PCA and group metrics.
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IccReport {
    /// Expert columns the ICC tables are computed over.
    pub experts: Vec<String>,
    /// ICC1/ICC2/ICC3 over all experts on their complete cases.
    pub singles: Section<Vec<IccResult>>,
    /// ICC3 of every expert subset.
    pub combinations: Vec<CombinationIcc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped_combinations: Vec<(Vec<String>, String)>,
    /// The subset with the highest ICC3k.
    pub best: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaPoint {
    pub assessor: String,
    pub group: String,
    pub pc1: f64,
    pub pc2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaCentroid {
    pub group: String,
    pub n: usize,
    pub pc1: f64,
    pub pc2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaReport {
    pub standardized: bool,
    pub n_subjects: usize,
    pub explained_variance: (f64, f64),
    pub eigenvalues: (f64, f64),
    pub points: Vec<PcaPoint>,
    pub centroids: Vec<PcaCentroid>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionEntry {
    pub label: String,
    pub is_model: bool,
    pub n: usize,
    /// Percent of ratings at levels 1..=10.
    pub percent: [f64; 10],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDiffEntry {
    pub group: String,
    pub is_model: bool,
    pub stats: LevelDifferenceStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset_id: String,
    pub prompt_version: String,
    pub provider: Option<String>,
    pub generated_at: DateTime<Utc>,
    pub reference: ReferenceSeries,
    pub assessors: Vec<AssessorMetrics>,
    pub groups: Vec<GroupMetrics>,
    pub outliers: OutlierReport,
    pub icc: IccReport,
    pub pca: Section<PcaReport>,
    pub distributions: Vec<DistributionEntry>,
    pub level_differences: Vec<LevelDiffEntry>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        serde_json::from_str(text).map_err(|e| ReportError::Json(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), ReportError> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| ReportError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let text = std::fs::read_to_string(path).map_err(|e| ReportError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn assessor(&self, id: &str) -> Option<&AssessorMetrics> {
        self.assessors.iter().find(|a| a.assessor.id == id)
    }

    pub fn group(&self, label: &str) -> Option<&GroupMetrics> {
        self.groups.iter().find(|g| g.group == label)
    }
}

/// Appends the manifest's ground-truth ratings as a reference column.
pub fn add_ground_truth_column(matrix: &mut RatingMatrix, dataset: &DatasetManifest) -> Result<(), EvalError> {
    let col = matrix.add_assessor(AssessorId::ground_truth())?;
    for rec in &dataset.images {
        if let (Some(s), Some(r)) = (matrix.subject_index(&rec.image_id), rec.ground_truth) {
            matrix.set(s, col, Some(r));
        }
    }
    Ok(())
}

fn is_reference(kind: &AssessorKind) -> bool {
    matches!(kind, AssessorKind::GroundTruth | AssessorKind::Consensus)
}

fn point_group(kind: &AssessorKind) -> String {
    group_label(kind).unwrap_or_else(|| "reference".into())
}

fn expert_ids(matrix: &RatingMatrix) -> Vec<String> {
    matrix
        .assessors()
        .iter()
        .filter(|a| a.kind == AssessorKind::HumanExpert)
        .map(|a| a.id.clone())
        .collect()
}

/// Computes every report section. Only a missing reference is fatal; other
/// statistics that cannot be computed are recorded in their section.
pub fn build_report(
    matrix: &RatingMatrix,
    mode: &ReferenceMode,
    context: &ReportContext,
    options: &ReportOptions,
    generated_at: DateTime<Utc>,
) -> Result<EvaluationReport, ReportError> {
    let experts = match mode {
        ReferenceMode::Consensus { experts: Some(list) } => list.clone(),
        _ => expert_ids(matrix),
    };
    let expert_refs: Vec<&str> = experts.iter().map(String::as_str).collect();
    let best = (expert_refs.len() >= 2).then(|| best_expert_combination(matrix, &expert_refs, 2));

    let reference = match mode {
        ReferenceMode::GroundTruth { column } => ground_truth_reference(matrix, column)
            .map_err(|e| ReportError::MissingReference(e.to_string()))?,
        ReferenceMode::Consensus { .. } => {
            let best = match &best {
                None => {
                    return Err(ReportError::MissingReference(format!(
                        "consensus needs at least 2 expert columns, found {}",
                        experts.len()
                    )))
                }
                Some(Err(e)) => return Err(ReportError::MissingReference(e.to_string())),
                Some(Ok(b)) => b,
            };
            let ids: Vec<&str> = best.combination.iter().map(|a| a.id.as_str()).collect();
            consensus(matrix, &ids).map_err(|e| ReportError::MissingReference(e.to_string()))?
        }
    };

    let assessors = assessor_metrics(matrix, &reference);

    let maes: Vec<(AssessorId, f64)> = assessors
        .iter()
        .filter(|m| !is_reference(&m.assessor.kind))
        .filter_map(|m| m.mae.map(|v| (m.assessor.clone(), v)))
        .collect();
    let flagged_ids = flag_outliers(&maes, options.outlier_threshold);
    let flagged: Vec<FlaggedAssessor> = maes
        .iter()
        .filter(|(a, _)| flagged_ids.contains(a))
        .map(|(a, m)| FlaggedAssessor {
            assessor: a.id.clone(),
            mae: *m,
        })
        .collect();
    let excluded: HashSet<String> = if options.exclude_outliers {
        flagged.iter().map(|f| f.assessor.clone()).collect()
    } else {
        HashSet::new()
    };

    let groups = pooled_group_metrics(matrix, &reference, &excluded);

    let icc_report = {
        let singles = if expert_refs.len() >= 2 {
            Section::from_result(
                matrix
                    .complete_cases(&expert_refs)
                    .map_err(EvalError::from)
                    .and_then(|cc| IccVariant::ALL.iter().map(|v| icc(&cc, *v)).collect()),
            )
        } else {
            Section::from_result(Err(format!(
                "ICC needs at least 2 expert columns, found {}",
                experts.len()
            )))
        };
        let (combinations, skipped, best_ids) = match &best {
            Some(Ok(b)) => (
                b.evaluated.clone(),
                b.skipped.clone(),
                Some(b.combination.iter().map(|a| a.id.clone()).collect()),
            ),
            Some(Err(e)) => (Vec::new(), vec![(experts.clone(), e.to_string())], None),
            None => (Vec::new(), Vec::new(), None),
        };
        IccReport {
            experts: experts.clone(),
            singles,
            combinations,
            skipped_combinations: skipped,
            best: best_ids,
        }
    };

    let pca = Section::from_result(build_pca(matrix, &reference, &excluded, options.pca));

    Ok(EvaluationReport {
        dataset_id: context.dataset_id.clone(),
        prompt_version: context.prompt_version.clone(),
        provider: context.provider.clone(),
        generated_at,
        distributions: build_distributions(matrix),
        level_differences: build_level_differences(matrix, &reference, &excluded),
        reference,
        assessors,
        groups,
        outliers: OutlierReport {
            threshold: options.outlier_threshold,
            flagged,
            excluded: options.exclude_outliers,
        },
        icc: icc_report,
        pca,
    })
}

/// One point per assessor on the subjects every included assessor (and the
/// reference) rated. A consensus reference enters as its own observation.
fn build_pca(
    matrix: &RatingMatrix,
    reference: &ReferenceSeries,
    excluded: &HashSet<String>,
    options: PcaOptions,
) -> Result<PcaReport, EvalError> {
    let included: Vec<(usize, &AssessorId)> = matrix
        .assessors()
        .iter()
        .enumerate()
        .filter(|(_, a)| !excluded.contains(&a.id))
        .collect();
    let add_consensus = !matrix.assessors().iter().any(|a| is_reference(&a.kind));
    let subjects: Vec<usize> = (0..matrix.n_subjects())
        .filter(|&s| included.iter().all(|(c, _)| matrix.cell(s, *c).is_some()))
        .filter(|&s| !add_consensus || reference.get(&matrix.subjects()[s]).is_some())
        .collect();

    let mut ids: Vec<AssessorId> = included.iter().map(|(_, a)| (*a).clone()).collect();
    let mut rows: Vec<Vec<f64>> = included
        .iter()
        .map(|(c, _)| {
            subjects
                .iter()
                .map(|&s| matrix.cell(s, *c).map(Rating::as_f64).expect("complete"))
                .collect()
        })
        .collect();
    if add_consensus {
        ids.push(AssessorId::new("consensus", AssessorKind::Consensus));
        rows.push(
            subjects
                .iter()
                .map(|&s| reference.get(&matrix.subjects()[s]).expect("filtered"))
                .collect(),
        );
    }
    let names = subjects.iter().map(|&s| matrix.subjects()[s].clone()).collect();
    let projection = pca_observations(ids, names, &rows, options)?;

    let points: Vec<PcaPoint> = projection
        .assessors
        .iter()
        .zip(&projection.coordinates)
        .map(|(a, (pc1, pc2))| PcaPoint {
            assessor: a.id.clone(),
            group: point_group(&a.kind),
            pc1: *pc1,
            pc2: *pc2,
        })
        .collect();
    let mut sums: BTreeMap<String, (usize, f64, f64)> = BTreeMap::new();
    for p in &points {
        let e = sums.entry(p.group.clone()).or_default();
        e.0 += 1;
        e.1 += p.pc1;
        e.2 += p.pc2;
    }
    let centroids = sums
        .into_iter()
        .map(|(group, (n, x, y))| PcaCentroid {
            group,
            n,
            pc1: x / n as f64,
            pc2: y / n as f64,
        })
        .collect();
    let mut excluded: Vec<String> = excluded.iter().cloned().collect();
    excluded.sort();

    Ok(PcaReport {
        standardized: options.standardize,
        n_subjects: projection.subjects.len(),
        explained_variance: projection.explained_variance,
        eigenvalues: projection.eigenvalues,
        points,
        centroids,
        excluded,
    })
}

/// Per model (runs pooled), then every other column individually.
fn build_distributions(matrix: &RatingMatrix) -> Vec<DistributionEntry> {
    let mut models: BTreeMap<String, Vec<Rating>> = BTreeMap::new();
    let mut others = Vec::new();
    for (c, a) in matrix.assessors().iter().enumerate() {
        let ratings: Vec<Rating> = matrix.column(c).into_iter().flatten().collect();
        match &a.kind {
            AssessorKind::ModelRun { model_id, .. } => {
                models.entry(model_id.clone()).or_default().extend(ratings)
            }
            _ => others.push((a.id.clone(), ratings)),
        }
    }
    let entry = |label: String, is_model: bool, ratings: Vec<Rating>| {
        rating_distribution(&ratings).ok().map(|percent| DistributionEntry {
            label,
            is_model,
            n: ratings.len(),
            percent,
        })
    };
    models
        .into_iter()
        .filter_map(|(m, r)| entry(m, true, r))
        .chain(others.into_iter().filter_map(|(id, r)| entry(id, false, r)))
        .collect()
}

/// Pooled per model, then per human experience group.
fn build_level_differences(
    matrix: &RatingMatrix,
    reference: &ReferenceSeries,
    excluded: &HashSet<String>,
) -> Vec<LevelDiffEntry> {
    let mut groups: BTreeMap<(bool, String), Vec<&str>> = BTreeMap::new();
    for a in matrix.assessors() {
        if excluded.contains(&a.id) || is_reference(&a.kind) {
            continue;
        }
        groups
            .entry((a.kind.is_human(), a.kind.group()))
            .or_default()
            .push(a.id.as_str());
    }
    groups
        .into_iter()
        .map(|((is_human, group), ids)| LevelDiffEntry {
            group,
            is_model: !is_human,
            stats: level_differences(matrix, &ids, reference).expect("ids come from the matrix"),
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_csv(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

/// One row per assessor: the per-assessor MAE values behind a box plot by group.
pub fn render_mae_box_csv(report: &EvaluationReport) -> String {
    let rows = report
        .assessors
        .iter()
        .map(|m| {
            vec![
                m.assessor.id.clone(),
                m.assessor.kind.table_name().to_string(),
                point_group(&m.assessor.kind),
                m.n.to_string(),
                opt(m.mae),
                opt(m.mse),
                opt(m.pearson),
            ]
        })
        .collect();
    write_csv(&["assessor", "kind", "group", "n", "mae", "mse", "pearson"], rows)
}

pub fn render_pca_csv(report: &EvaluationReport) -> String {
    let mut rows = Vec::new();
    if let Some(pca) = &report.pca.value {
        for p in &pca.points {
            rows.push(vec![
                "point".into(),
                p.assessor.clone(),
                p.group.clone(),
                p.pc1.to_string(),
                p.pc2.to_string(),
            ]);
        }
        for c in &pca.centroids {
            rows.push(vec![
                "centroid".into(),
                String::new(),
                c.group.clone(),
                c.pc1.to_string(),
                c.pc2.to_string(),
            ]);
        }
    }
    write_csv(&["type", "assessor", "group", "pc1", "pc2"], rows)
}

pub fn render_distribution_csv(report: &EvaluationReport) -> String {
    let rows = report
        .distributions
        .iter()
        .flat_map(|d| {
            d.percent.iter().enumerate().map(move |(i, p)| {
                vec![
                    d.label.clone(),
                    d.is_model.to_string(),
                    d.n.to_string(),
                    (i + 1).to_string(),
                    p.to_string(),
                ]
            })
        })
        .collect();
    write_csv(&["label", "is_model", "n", "level", "percent"], rows)
}

pub fn render_level_diff_csv(report: &EvaluationReport) -> String {
    let rows = report
        .level_differences
        .iter()
        .flat_map(|e| {
            e.stats.levels.iter().map(move |l| {
                vec![
                    e.group.clone(),
                    l.level.to_string(),
                    l.count.to_string(),
                    opt(l.min),
                    opt(l.q1),
                    opt(l.median),
                    opt(l.q3),
                    opt(l.max),
                ]
            })
        })
        .collect();
    write_csv(
        &["group", "level", "count", "min", "q1", "median", "q3", "max"],
        rows,
    )
}

/// Group metrics table sorted by MAE, lowest first; groups without an MAE go last.
pub fn render_summary_table(report: &EvaluationReport) -> String {
    let mut groups: Vec<&GroupMetrics> = report.groups.iter().collect();
    groups.sort_by(|a, b| match (a.mae, b.mae) {
        (Some(x), Some(y)) => x.total_cmp(&y).then_with(|| a.group.cmp(&b.group)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.group.cmp(&b.group),
    });
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    let width = groups.iter().map(|g| g.group.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}  {:>11}  {:>6}", "Group", "MAE", "MSE", "Correlation", "n");
    for g in groups {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>8}  {:>11}  {:>6}",
            g.group,
            fmt(g.mae),
            fmt(g.mse),
            fmt(g.pearson),
            g.n_pairs
        );
    }
    out
}

pub const CSV_FILES: [&str; 4] = ["mae_box.csv", "pca_coords.csv", "distribution.csv", "level_diff.csv"];

/// Writes the four plot tables into `dir`.
pub fn write_csv_tables(report: &EvaluationReport, dir: &Path) -> Result<(), ReportError> {
    std::fs::create_dir_all(dir).map_err(|e| ReportError::io(dir, e))?;
    let tables = [
        render_mae_box_csv(report),
        render_pca_csv(report),
        render_distribution_csv(report),
        render_level_diff_csv(report),
    ];
    for (name, body) in CSV_FILES.iter().zip(tables) {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| ReportError::io(&path, e))?;
    }
    Ok(())
}
