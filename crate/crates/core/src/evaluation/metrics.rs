use std::collections::{BTreeMap, HashSet};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::domain::{AssessorId, AssessorKind, RatingMatrix};

/// MAE above which an assessor is flagged (strict inequality).
pub const DEFAULT_OUTLIER_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Predicted,
    Reference,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Predicted => "predicted",
            Side::Reference => "reference",
        })
    }
}

/// Predicted values `y_i` aligned with reference values `ŷ_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSeries {
    predicted: Vec<f64>,
    reference: Vec<f64>,
}

impl PairedSeries {
    pub fn new(predicted: Vec<f64>, reference: Vec<f64>) -> Result<Self, EvalError> {
        if predicted.is_empty() || predicted.len() != reference.len() {
            return Err(EvalError::LengthMismatch {
                predicted: predicted.len(),
                reference: reference.len(),
            });
        }
        Ok(Self {
            predicted,
            reference,
        })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self, EvalError> {
        Self::new(
            pairs.iter().map(|p| p.0).collect(),
            pairs.iter().map(|p| p.1).collect(),
        )
    }

    pub fn n(&self) -> usize {
        self.predicted.len()
    }

    pub fn predicted(&self) -> &[f64] {
        &self.predicted
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    fn diffs(&self) -> impl Iterator<Item = f64> + '_ {
        self.predicted.iter().zip(&self.reference).map(|(y, r)| y - r)
    }
}

/// Mean absolute error.
pub fn mae(series: &PairedSeries) -> f64 {
    series.diffs().map(f64::abs).sum::<f64>() / series.n() as f64
}

/// Mean squared error.
pub fn mse(series: &PairedSeries) -> f64 {
    series.diffs().map(|d| d * d).sum::<f64>() / series.n() as f64
}

/// Sample Pearson correlation.
pub fn pearson(series: &PairedSeries) -> Result<f64, EvalError> {
    let n = series.n();
    if n < 2 {
        return Err(EvalError::TooFewSamples { needed: 2, got: n });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(&series.predicted), mean(&series.reference));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in series.predicted.iter().zip(&series.reference) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(EvalError::ZeroVariance(Side::Predicted));
    }
    if syy == 0.0 {
        return Err(EvalError::ZeroVariance(Side::Reference));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ReferenceStandard {
    GroundTruth,
    Consensus { combination: Vec<String> },
}

/// Reference value per subject; values may be fractional (expert means).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSeries {
    pub standard: ReferenceStandard,
    pub values: IndexMap<String, f64>,
}

impl ReferenceSeries {
    pub fn get(&self, subject: &str) -> Option<f64> {
        self.values.get(subject).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Mean of the combination's ratings for each subject all of them rated.
pub fn consensus(matrix: &RatingMatrix, combination: &[&str]) -> Result<ReferenceSeries, EvalError> {
    let cc = matrix.complete_cases(combination)?;
    let k = cc.n_assessors() as f64;
    let values = cc
        .subjects()
        .iter()
        .zip(cc.rows())
        .map(|(s, row)| {
            let sum: f64 = row.iter().map(|c| c.expect("complete").as_f64()).sum();
            (s.clone(), sum / k)
        })
        .collect();
    Ok(ReferenceSeries {
        standard: ReferenceStandard::Consensus {
            combination: combination.iter().map(|s| s.to_string()).collect(),
        },
        values,
    })
}

/// Reference series taken from one column (typically the ground-truth column).
pub fn ground_truth_reference(matrix: &RatingMatrix, column: &str) -> Result<ReferenceSeries, EvalError> {
    let idx = matrix
        .assessor_index(column)
        .ok_or_else(|| crate::domain::DomainError::UnknownAssessor(column.to_string()))?;
    let values: IndexMap<String, f64> = matrix
        .subjects()
        .iter()
        .zip(matrix.column(idx))
        .filter_map(|(s, c)| c.map(|r| (s.clone(), r.as_f64())))
        .collect();
    if values.is_empty() {
        return Err(EvalError::InsufficientData(format!("column '{column}' has no ratings")));
    }
    Ok(ReferenceSeries {
        standard: ReferenceStandard::GroundTruth,
        values,
    })
}

fn column_pairs(matrix: &RatingMatrix, col: usize, reference: &ReferenceSeries) -> Vec<(f64, f64)> {
    matrix
        .subjects()
        .iter()
        .enumerate()
        .filter_map(|(s, subject)| {
            let y = matrix.cell(s, col)?;
            let r = reference.get(subject)?;
            Some((y.as_f64(), r))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessorMetrics {
    pub assessor: AssessorId,
    pub n: usize,
    pub mae: Option<f64>,
    pub mse: Option<f64>,
    pub pearson: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Metrics of every column against the reference over pairwise-complete subjects.
pub fn assessor_metrics(matrix: &RatingMatrix, reference: &ReferenceSeries) -> Vec<AssessorMetrics> {
    matrix
        .assessors()
        .iter()
        .enumerate()
        .map(|(col, assessor)| {
            let pairs = column_pairs(matrix, col, reference);
            metrics_for(assessor.clone(), &pairs)
        })
        .collect()
}

fn metrics_for(assessor: AssessorId, pairs: &[(f64, f64)]) -> AssessorMetrics {
    match PairedSeries::from_pairs(pairs) {
        Ok(series) => {
            let (pearson, note) = match pearson(&series) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(format!("pearson undefined: {e}"))),
            };
            AssessorMetrics {
                assessor,
                n: series.n(),
                mae: Some(mae(&series)),
                mse: Some(mse(&series)),
                pearson,
                note,
            }
        }
        Err(_) => AssessorMetrics {
            assessor,
            n: 0,
            mae: None,
            mse: None,
            pearson: None,
            note: Some("no rated subject overlaps the reference".into()),
        },
    }
}

/// Group for pooled summaries: the model id for runs, the experience level for
/// humans, `None` for reference columns.
pub fn group_label(kind: &AssessorKind) -> Option<String> {
    match kind {
        AssessorKind::GroundTruth | AssessorKind::Consensus => None,
        other => Some(other.group()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: String,
    pub is_model: bool,
    pub n_assessors: usize,
    pub n_pairs: usize,
    pub mae: Option<f64>,
    pub mse: Option<f64>,
    pub pearson: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Pools every (subject, assessor) pair of a group into one series. Models
/// sort before human groups; each part is ordered by group label.
pub fn pooled_group_metrics(
    matrix: &RatingMatrix,
    reference: &ReferenceSeries,
    exclude: &HashSet<String>,
) -> Vec<GroupMetrics> {
    let mut groups: BTreeMap<(bool, String), (usize, Vec<(f64, f64)>)> = BTreeMap::new();
    for (col, assessor) in matrix.assessors().iter().enumerate() {
        if exclude.contains(&assessor.id) {
            continue;
        }
        let Some(label) = group_label(&assessor.kind) else {
            continue;
        };
        let is_human = assessor.kind.is_human();
        let entry = groups.entry((is_human, label)).or_default();
        entry.0 += 1;
        entry.1.extend(column_pairs(matrix, col, reference));
    }
    groups
        .into_iter()
        .map(|((is_human, group), (n_assessors, pairs))| {
            let m = metrics_for(AssessorId::new(group.clone(), AssessorKind::Consensus), &pairs);
            GroupMetrics {
                group,
                is_model: !is_human,
                n_assessors,
                n_pairs: m.n,
                mae: m.mae,
                mse: m.mse,
                pearson: m.pearson,
                note: m.note,
            }
        })
        .collect()
}

/// Assessors whose MAE is strictly above `threshold`, in input order.
pub fn flag_outliers(maes: &[(AssessorId, f64)], threshold: f64) -> Vec<AssessorId> {
    maes.iter()
        .filter(|(_, m)| *m > threshold)
        .map(|(a, _)| a.clone())
        .collect()
}
