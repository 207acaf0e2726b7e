//! Aggregation statistics for trial records.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("median of an empty sample")]
    EmptyInput,
    #[error("trimmed mean needs at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("input lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
}

/// Middle order statistic; the mean of the two middles for even counts.
pub fn median(samples: &[f64]) -> Result<f64, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len();
    Ok(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    })
}

/// Mean after discarding exactly one best and one worst sample: one
/// occurrence of the minimum and one of the maximum are dropped by
/// index, duplicates stay. The kept values are summed in ascending
/// order so the result does not depend on input order.
pub fn trimmed_mean(samples: &[f64]) -> Result<f64, StatsError> {
    if samples.len() < 3 {
        return Err(StatsError::TooFewSamples(samples.len()));
    }
    let min_idx = samples
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty");
    let max_idx = samples
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != min_idx)
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("len >= 3");
    let mut kept: Vec<f64> = samples
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != min_idx && *i != max_idx)
        .map(|(_, v)| *v)
        .collect();
    kept.sort_unstable_by(f64::total_cmp);
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Product-moment correlation coefficient via centered sums.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooFewSamples(x.len()));
    }
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 {
        return Err(StatsError::ZeroVariance("x"));
    }
    if var_y == 0.0 {
        return Err(StatsError::ZeroVariance("y"));
    }
    Ok(cov / (var_x.sqrt() * var_y.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Reference 10 kb samples at 1 m from the shipped dataset.
    const TEN_KB_SAMPLES: [f64; 5] = [4.0498, 4.4163, 5.2194, 6.8424, 7.3336];
    const FORTY_KB_SAMPLES: [f64; 5] = [4.3513, 7.2030, 7.4392, 8.6729, 10.3577];
    const TWOHUNDRED_KB_SAMPLES: [f64; 5] = [15.8346, 23.4155, 28.1433, 33.7344, 87.9002];

    #[test]
    fn median_examples() {
        assert_eq!(median(&FORTY_KB_SAMPLES).unwrap(), 7.4392);
        assert_eq!(median(&[2.0]).unwrap(), 2.0);
        assert_eq!(median(&TWOHUNDRED_KB_SAMPLES).unwrap(), 28.1433);
        assert_eq!(median(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 2.5);
        assert_eq!(median(&[]), Err(StatsError::EmptyInput));
    }

    #[test]
    fn trimmed_mean_examples() {
        // (4.4163 + 5.2194 + 6.8424) / 3, computed by hand
        assert!((trimmed_mean(&TEN_KB_SAMPLES).unwrap() - 5.4927).abs() < 1e-12);
        assert_eq!(trimmed_mean(&[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(trimmed_mean(&[5.0, 3.0]), Err(StatsError::TooFewSamples(2)));
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&x, &[1.0]), Err(StatsError::LengthMismatch(3, 1)));
        assert_eq!(
            pearson(&[1.0, 1.0], &[1.0, 2.0]),
            Err(StatsError::ZeroVariance("x"))
        );
        assert_eq!(
            pearson(&[1.0, 2.0], &[5.0, 5.0]),
            Err(StatsError::ZeroVariance("y"))
        );
    }

    /// Sorts, slices off the extremes, averages ascending. Selects by a
    /// different route than the index-scan implementation.
    fn sort_and_slice_oracle(samples: &[f64]) -> f64 {
        let mut sorted = samples.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        let kept = &sorted[1..sorted.len() - 1];
        kept.iter().sum::<f64>() / kept.len() as f64
    }

    proptest! {
        #[test]
        fn trimmed_mean_matches_sort_and_slice_oracle(
            samples in proptest::collection::vec(0.0f64..1e6, 3..50)
        ) {
            let ours = trimmed_mean(&samples).unwrap();
            let oracle = sort_and_slice_oracle(&samples);
            prop_assert_eq!(ours, oracle);
            let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(ours >= lo && ours <= hi);
        }

        #[test]
        fn median_is_permutation_invariant(
            samples in proptest::collection::vec(-1e6f64..1e6, 1..40),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = samples.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(median(&samples).unwrap(), median(&shuffled).unwrap());
        }

        #[test]
        fn pearson_affine_invariance(
            pairs in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..30),
            a in 0.1f64..10.0,
            b in -50.0f64..50.0,
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(pearson(&x, &y).is_ok());
            let r = pearson(&x, &y).unwrap();
            let scaled: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            prop_assert!((pearson(&scaled, &y).unwrap() - r).abs() < 1e-9);
            let flipped: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            prop_assert!((pearson(&flipped, &y).unwrap() + r).abs() < 1e-9);
        }
    }
}
