//! Rating histograms and per-level difference summaries.

use serde::{Deserialize, Serialize};

use super::metrics::ReferenceSeries;
use super::EvalError;
use crate::domain::{DomainError, Rating, RatingMatrix};

/// Percentage of ratings at each level; index 0 is level 1.
pub fn rating_distribution(ratings: &[Rating]) -> Result<[f64; 10], EvalError> {
    if ratings.is_empty() {
        return Err(EvalError::TooFewSamples { needed: 1, got: 0 });
    }
    let mut counts = [0usize; 10];
    for r in ratings {
        counts[r.value() as usize - 1] += 1;
    }
    let n = ratings.len() as f64;
    Ok(counts.map(|c| 100.0 * c as f64 / n))
}

/// Nearest integer level with halves rounded up, clamped to 1..=10.
pub fn round_half_up_level(value: f64) -> u8 {
    (value + 0.5).floor().clamp(1.0, 10.0) as u8
}

/// Quantile of sorted data by linear interpolation between order statistics
/// (position `(n - 1) * q`). Returns NaN for empty input.
pub fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: u8,
    pub count: usize,
    /// `None` for levels with no pairs.
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl LevelStats {
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    fn from_diffs(level: u8, mut diffs: Vec<f64>) -> Self {
        diffs.sort_by(f64::total_cmp);
        let q = |p: f64| (!diffs.is_empty()).then(|| quantile_linear(&diffs, p));
        LevelStats {
            level,
            count: diffs.len(),
            median: q(0.5),
            q1: q(0.25),
            q3: q(0.75),
            min: diffs.first().copied(),
            max: diffs.last().copied(),
        }
    }
}

/// Rating minus reference, grouped by the rounded reference level. Always
/// holds ten entries, levels 1 through 10.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDifferenceStats {
    pub levels: Vec<LevelStats>,
}

impl LevelDifferenceStats {
    pub fn level(&self, level: u8) -> Option<&LevelStats> {
        self.levels.iter().find(|l| l.level == level)
    }
}

/// Groups `(rating, reference)` pairs by reference level.
pub fn level_differences_from_pairs(pairs: &[(f64, f64)]) -> LevelDifferenceStats {
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); 10];
    for &(rating, reference) in pairs {
        buckets[round_half_up_level(reference) as usize - 1].push(rating - reference);
    }
    LevelDifferenceStats {
        levels: buckets
            .into_iter()
            .enumerate()
            .map(|(i, d)| LevelStats::from_diffs(i as u8 + 1, d))
            .collect(),
    }
}

/// Pools every rated (subject, assessor) cell of the given columns against the
/// reference. Subjects without a reference value are skipped.
pub fn level_differences(
    matrix: &RatingMatrix,
    assessors: &[&str],
    reference: &ReferenceSeries,
) -> Result<LevelDifferenceStats, EvalError> {
    let mut pairs = Vec::new();
    for id in assessors {
        let col = matrix
            .assessor_index(id)
            .ok_or_else(|| DomainError::UnknownAssessor(id.to_string()))?;
        for (s, subject) in matrix.subjects().iter().enumerate() {
            if let (Some(r), Some(reference)) = (matrix.cell(s, col), reference.get(subject)) {
                pairs.push((r.as_f64(), reference));
            }
        }
    }
    Ok(level_differences_from_pairs(&pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ratings(v: &[i64]) -> Vec<Rating> {
        v.iter().map(|&x| Rating::new(x).unwrap()).collect()
    }

    #[test]
    fn distribution_examples() {
        let d = rating_distribution(&ratings(&[6, 6, 7])).unwrap();
        assert_abs_diff_eq!(d[5], 200.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d[6], 100.0 / 3.0, epsilon = 1e-12);
        assert_eq!(d.iter().filter(|x| **x == 0.0).count(), 8);

        let d = rating_distribution(&ratings(&[6; 5])).unwrap();
        assert_eq!(d[5], 100.0);
        assert!(rating_distribution(&[]).is_err());
    }

    #[test]
    fn rounding_and_quantiles() {
        assert_eq!(round_half_up_level(6.5), 7);
        assert_eq!(round_half_up_level(6.49), 6);
        assert_eq!(round_half_up_level(0.2), 1);
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_linear(&v, 0.5), 2.5);
        assert_eq!(quantile_linear(&v, 0.25), 1.75);
        assert_eq!(quantile_linear(&v, 1.0), 4.0);
        assert!(quantile_linear(&[], 0.5).is_nan());
    }

    #[test]
    fn constant_shift_and_empty_levels() {
        let pairs: Vec<(f64, f64)> = (1..=9).map(|r| (r as f64 + 1.0, r as f64)).collect();
        let stats = level_differences_from_pairs(&pairs);
        assert_eq!(stats.levels.len(), 10);
        for l in &stats.levels[..9] {
            assert_eq!(l.median, Some(1.0));
        }
        assert!(stats.level(10).unwrap().is_empty());
        assert_eq!(stats.level(10).unwrap().median, None);
    }

    #[test]
    fn half_integral_reference_rounds_up() {
        let stats = level_differences_from_pairs(&[(7.0, 6.5), (5.0, 6.5)]);
        let l7 = stats.level(7).unwrap();
        assert_eq!(l7.count, 2);
        assert_eq!(l7.median, Some(-0.5));
        assert_eq!((l7.min, l7.max), (Some(-1.5), Some(0.5)));
    }

    proptest! {
        #[test]
        fn distribution_sums_to_100(v in prop::collection::vec(1i64..=10, 1..200)) {
            let d = rating_distribution(&ratings(&v)).unwrap();
            prop_assert!((d.iter().sum::<f64>() - 100.0).abs() < 1e-9);
        }

        #[test]
        fn counts_partition_pairs(pairs in prop::collection::vec((1i64..=10, 2i64..=20), 0..100)) {
            let pairs: Vec<(f64, f64)> = pairs.iter().map(|(r, h)| (*r as f64, *h as f64 / 2.0)).collect();
            let stats = level_differences_from_pairs(&pairs);
            prop_assert_eq!(stats.levels.iter().map(|l| l.count).sum::<usize>(), pairs.len());
            for l in stats.levels.iter().filter(|l| !l.is_empty()) {
                prop_assert!(l.min.unwrap() <= l.q1.unwrap());
                prop_assert!(l.q1.unwrap() <= l.median.unwrap());
                prop_assert!(l.median.unwrap() <= l.q3.unwrap());
                prop_assert!(l.q3.unwrap() <= l.max.unwrap());
            }
        }
    }
}
