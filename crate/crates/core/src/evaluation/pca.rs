//! Assessor-space PCA: each assessor's rating vector over subjects is one
//! observation, subjects are the variables.

use serde::{Deserialize, Serialize};

use super::eigen::symmetric_eigen;
use super::EvalError;
use crate::domain::{AssessorId, RatingMatrix};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcaOptions {
    /// Scale each subject dimension to unit variance after centering.
    pub standardize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub assessors: Vec<AssessorId>,
    /// `(pc1, pc2)` per assessor, aligned with `assessors`.
    pub coordinates: Vec<(f64, f64)>,
    pub subjects: Vec<String>,
    /// Two unit loading vectors over `subjects`.
    pub loadings: [Vec<f64>; 2],
    pub eigenvalues: (f64, f64),
    pub explained_variance: (f64, f64),
    /// Sum of all covariance eigenvalues.
    pub total_variance: f64,
}

impl PcaProjection {
    pub fn coordinate(&self, id: &str) -> Option<(f64, f64)> {
        self.assessors
            .iter()
            .position(|a| a.id == id)
            .map(|i| self.coordinates[i])
    }
}

/// PCA over the assessors of a complete matrix.
pub fn pca_assessors(matrix: &RatingMatrix, options: PcaOptions) -> Result<PcaProjection, EvalError> {
    if !matrix.is_complete() {
        return Err(EvalError::IncompleteMatrix);
    }
    let grid = matrix.to_f64_rows();
    let observations: Vec<Vec<f64>> = (0..matrix.n_assessors())
        .map(|a| grid.iter().map(|row| row[a]).collect())
        .collect();
    pca_observations(
        matrix.assessors().to_vec(),
        matrix.subjects().to_vec(),
        &observations,
        options,
    )
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Unit vector orthogonal to `v` (unit), built from the standard basis.
fn orthogonal_complement(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut best = vec![0.0; n];
    let mut best_norm = -1.0;
    for j in 0..n {
        let mut w: Vec<f64> = v.iter().map(|x| -x * v[j]).collect();
        w[j] += 1.0;
        let norm = dot(&w, &w);
        if norm > best_norm {
            best_norm = norm;
            best = w;
        }
    }
    normalize(&mut best);
    best
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
fn orient(v: &mut [f64]) {
    let mut idx = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[idx].abs() {
            idx = i;
        }
    }
    if v.get(idx).is_some_and(|x| *x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// PCA over arbitrary observations (rows) and variables (columns).
pub fn pca_observations(
    assessors: Vec<AssessorId>,
    subjects: Vec<String>,
    observations: &[Vec<f64>],
    options: PcaOptions,
) -> Result<PcaProjection, EvalError> {
    let m = observations.len();
    let n = subjects.len();
    if m < 3 {
        return Err(EvalError::InsufficientData(format!("PCA needs at least 3 assessors, got {m}")));
    }
    if n < 2 {
        return Err(EvalError::InsufficientData(format!("PCA needs at least 2 subjects, got {n}")));
    }
    if assessors.len() != m || observations.iter().any(|o| o.len() != n || o.iter().any(|x| !x.is_finite())) {
        return Err(EvalError::IncompleteMatrix);
    }

    let mut x: Vec<Vec<f64>> = observations.to_vec();
    for j in 0..n {
        let mean = x.iter().map(|r| r[j]).sum::<f64>() / m as f64;
        x.iter_mut().for_each(|r| r[j] -= mean);
        if options.standardize {
            let sd = (x.iter().map(|r| r[j] * r[j]).sum::<f64>() / (m - 1) as f64).sqrt();
            if sd > 0.0 {
                x.iter_mut().for_each(|r| r[j] /= sd);
            }
        }
    }
    let denom = (m - 1) as f64;

    // Decompose whichever of the n×n covariance or the m×m Gram matrix is smaller;
    // both share their nonzero eigenvalues.
    let (mut eigenvalues, mut loadings): (Vec<f64>, Vec<Vec<f64>>) = if n <= m {
        let cov: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| x.iter().map(|r| r[i] * r[j]).sum::<f64>() / denom)
                    .collect()
            })
            .collect();
        let e = symmetric_eigen(&cov);
        (e.values, e.vectors)
    } else {
        let gram: Vec<Vec<f64>> = (0..m)
            .map(|a| (0..m).map(|b| dot(&x[a], &x[b]) / denom).collect())
            .collect();
        let e = symmetric_eigen(&gram);
        let loadings = e
            .vectors
            .iter()
            .map(|u| {
                (0..n)
                    .map(|j| u.iter().zip(&x).map(|(ua, row)| ua * row[j]).sum::<f64>())
                    .collect::<Vec<f64>>()
            })
            .collect();
        (e.values, loadings)
    };

    let total: f64 = eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let floor = 1e-12 * eigenvalues.first().copied().unwrap_or(0.0).abs().max(f64::MIN_POSITIVE);
    for v in eigenvalues.iter_mut() {
        if *v <= floor {
            *v = 0.0;
        }
    }

    let mut first = std::mem::take(&mut loadings[0]);
    let mut second = std::mem::take(&mut loadings[1]);
    if eigenvalues[0] > 0.0 {
        normalize(&mut first);
    } else {
        first = vec![0.0; n];
        first[0] = 1.0;
    }
    if eigenvalues[1] > 0.0 {
        normalize(&mut second);
        // Re-orthogonalize against rounding in the Gram path.
        let proj = dot(&first, &second);
        second.iter_mut().zip(&first).for_each(|(s, f)| *s -= proj * f);
        normalize(&mut second);
    } else {
        second = orthogonal_complement(&first);
    }
    orient(&mut first);
    orient(&mut second);

    let coordinates = x
        .iter()
        .map(|row| (dot(row, &first), dot(row, &second)))
        .collect();
    let fraction = |v: f64| if total > 0.0 { v / total } else { 0.0 };

    Ok(PcaProjection {
        assessors,
        coordinates,
        subjects,
        explained_variance: (fraction(eigenvalues[0]), fraction(eigenvalues[1])),
        eigenvalues: (eigenvalues[0], eigenvalues[1]),
        loadings: [first, second],
        total_variance: total,
    })
}
