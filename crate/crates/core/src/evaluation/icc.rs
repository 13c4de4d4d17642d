//! Intraclass correlation (Shrout–Fleiss ICC(1,1), ICC(2,1), ICC(3,1) and
//! their mean-of-k forms) from a two-way ANOVA decomposition.

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::domain::{AssessorId, DomainError, RatingMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IccVariant {
    /// One-way random, absolute agreement.
    Icc1,
    /// Two-way random raters, absolute agreement.
    Icc2,
    /// Two-way fixed raters, consistency.
    Icc3,
}

impl IccVariant {
    pub const ALL: [IccVariant; 3] = [IccVariant::Icc1, IccVariant::Icc2, IccVariant::Icc3];

    pub fn description(self) -> &'static str {
        match self {
            IccVariant::Icc1 => "Single raters absolute",
            IccVariant::Icc2 => "Single random raters",
            IccVariant::Icc3 => "Single fixed raters",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IccResult {
    pub variant: IccVariant,
    pub single: f64,
    /// Reliability of the mean of `k_raters` ratings.
    pub mean_raters: f64,
    pub n_subjects: usize,
    pub k_raters: usize,
}

/// Two-way ANOVA mean squares over an n × k grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSquares {
    /// Between subjects (rows).
    pub msb: f64,
    /// Within subjects.
    pub msw: f64,
    /// Between raters (columns).
    pub msc: f64,
    /// Residual.
    pub mse: f64,
    pub n: usize,
    pub k: usize,
}

pub fn mean_squares(grid: &[Vec<f64>]) -> Result<MeanSquares, EvalError> {
    let n = grid.len();
    if n < 2 {
        return Err(EvalError::TooFewSamples { needed: 2, got: n });
    }
    let k = grid[0].len();
    if k < 2 {
        return Err(EvalError::InsufficientData(format!("ICC needs at least 2 raters, got {k}")));
    }
    if grid.iter().any(|r| r.len() != k || r.iter().any(|x| !x.is_finite())) {
        return Err(EvalError::IncompleteMatrix);
    }
    let (nf, kf) = (n as f64, k as f64);
    let grand = grid.iter().flatten().sum::<f64>() / (nf * kf);
    let row_means: Vec<f64> = grid.iter().map(|r| r.iter().sum::<f64>() / kf).collect();
    let col_means: Vec<f64> = (0..k)
        .map(|j| grid.iter().map(|r| r[j]).sum::<f64>() / nf)
        .collect();

    let ss_rows = kf * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_cols = nf * col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_within: f64 = grid
        .iter()
        .zip(&row_means)
        .map(|(r, m)| r.iter().map(|x| (x - m).powi(2)).sum::<f64>())
        .sum();
    let ss_resid: f64 = grid
        .iter()
        .zip(&row_means)
        .map(|(r, rm)| {
            r.iter()
                .zip(&col_means)
                .map(|(x, cm)| (x - rm - cm + grand).powi(2))
                .sum::<f64>()
        })
        .sum();

    Ok(MeanSquares {
        msb: ss_rows / (nf - 1.0),
        msw: ss_within / (nf * (kf - 1.0)),
        msc: ss_cols / (kf - 1.0),
        mse: ss_resid / ((nf - 1.0) * (kf - 1.0)),
        n,
        k,
    })
}

/// ICC of a complete row-major grid (subjects × raters).
pub fn icc_from_grid(grid: &[Vec<f64>], variant: IccVariant) -> Result<IccResult, EvalError> {
    let ms = mean_squares(grid)?;
    let scale = ms.msb.max(ms.msw).max(ms.msc).max(ms.mse);
    if scale == 0.0 {
        return Err(EvalError::DegenerateMatrix("all ratings are identical".into()));
    }
    if ms.msb <= 1e-12 * scale {
        return Err(EvalError::DegenerateMatrix("no variance between subjects".into()));
    }
    let (n, k) = (ms.n as f64, ms.k as f64);
    // Mean-of-k forms are written directly; each equals Spearman–Brown of the single form.
    let (single, mean_raters) = match variant {
        IccVariant::Icc1 => (
            (ms.msb - ms.msw) / (ms.msb + (k - 1.0) * ms.msw),
            (ms.msb - ms.msw) / ms.msb,
        ),
        IccVariant::Icc2 => (
            (ms.msb - ms.mse) / (ms.msb + (k - 1.0) * ms.mse + k * (ms.msc - ms.mse) / n),
            (ms.msb - ms.mse) / (ms.msb + (ms.msc - ms.mse) / n),
        ),
        IccVariant::Icc3 => (
            (ms.msb - ms.mse) / (ms.msb + (k - 1.0) * ms.mse),
            (ms.msb - ms.mse) / ms.msb,
        ),
    };
    Ok(IccResult {
        variant,
        single,
        mean_raters,
        n_subjects: ms.n,
        k_raters: ms.k,
    })
}

/// ICC of a complete rating matrix.
pub fn icc(matrix: &RatingMatrix, variant: IccVariant) -> Result<IccResult, EvalError> {
    if !matrix.is_complete() {
        return Err(EvalError::IncompleteMatrix);
    }
    icc_from_grid(&matrix.to_f64_rows(), variant)
}

/// Reliability of the mean of `k` raters given single-rater reliability.
pub fn spearman_brown(single: f64, k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::InsufficientData("k must be at least 1".into()));
    }
    let kf = k as f64;
    let denom = 1.0 + (kf - 1.0) * single;
    if denom <= 0.0 {
        return Err(EvalError::Pole);
    }
    Ok(kf * single / denom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationIcc {
    pub combination: Vec<String>,
    pub result: IccResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestCombination {
    pub combination: Vec<AssessorId>,
    pub result: IccResult,
    /// Every subset that produced an ICC, in enumeration order.
    pub evaluated: Vec<CombinationIcc>,
    /// Subsets that could not be evaluated, with the reason.
    pub skipped: Vec<(Vec<String>, String)>,
}

const TIE_EPS: f64 = 1e-12;

/// Chooses the expert subset (size ≥ `min_size`) with the highest ICC3k.
/// Ties go to the larger subset, then to the lexicographically smaller id list.
pub fn best_expert_combination(
    matrix: &RatingMatrix,
    experts: &[&str],
    min_size: usize,
) -> Result<BestCombination, EvalError> {
    let min_size = min_size.max(2);
    if experts.len() < min_size {
        return Err(EvalError::InsufficientData(format!(
            "need at least {min_size} experts, got {}",
            experts.len()
        )));
    }
    if experts.len() > 20 {
        return Err(EvalError::InsufficientData("too many experts to enumerate (max 20)".into()));
    }
    for id in experts {
        if matrix.assessor_index(id).is_none() {
            return Err(DomainError::UnknownAssessor(id.to_string()).into());
        }
    }

    let mut evaluated = Vec::new();
    let mut skipped = Vec::new();
    let mut best: Option<(Vec<&str>, IccResult)> = None;

    let mut subsets: Vec<Vec<&str>> = (1u32..(1 << experts.len()))
        .map(|mask| {
            experts
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, id)| *id)
                .collect::<Vec<_>>()
        })
        .filter(|s| s.len() >= min_size)
        .collect();
    subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));

    for subset in subsets {
        let names: Vec<String> = subset.iter().map(|s| s.to_string()).collect();
        let result = matrix
            .complete_cases(&subset)
            .map_err(EvalError::from)
            .and_then(|cc| icc(&cc, IccVariant::Icc3));
        let result = match result {
            Ok(r) => r,
            Err(e) => {
                log::warn!("skipping expert combination {names:?}: {e}");
                skipped.push((names, e.to_string()));
                continue;
            }
        };
        evaluated.push(CombinationIcc {
            combination: names,
            result,
        });
        let better = match &best {
            None => true,
            Some((b_ids, b)) => {
                let diff = result.mean_raters - b.mean_raters;
                if diff > TIE_EPS {
                    true
                } else if diff < -TIE_EPS {
                    false
                } else if subset.len() != b_ids.len() {
                    subset.len() > b_ids.len()
                } else {
                    subset < *b_ids
                }
            }
        };
        if better {
            best = Some((subset, result));
        }
    }

    let (ids, result) = best.ok_or(EvalError::NoValidCombination)?;
    let combination = ids
        .iter()
        .map(|id| matrix.assessors()[matrix.assessor_index(id).expect("checked")].clone())
        .collect();
    Ok(BestCombination {
        combination,
        result,
        evaluated,
        skipped,
    })
}
