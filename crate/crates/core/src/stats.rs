//! Summary statistics, percentile bootstrap and seed derivation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Mixes a master seed and a stream index into an independent seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(mix(master) ^ stream.rotate_left(17))
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 values.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    libm::sqrt(ss / (values.len() - 1) as f64)
}

/// Standard error of the mean.
pub fn std_error(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    std_dev(values) / libm::sqrt(values.len() as f64)
}

/// Cluster-robust standard error of the mean of `values`, where
/// `clusters[i]` labels the cluster of `values[i]`. Observations in one
/// cluster may be correlated; clusters are independent.
pub fn clustered_std_error<K: Ord + Copy>(values: &[f64], clusters: &[K]) -> Result<f64> {
    if values.len() != clusters.len() {
        return Err(Error::Validation(format!(
            "{} values but {} cluster labels",
            values.len(),
            clusters.len()
        )));
    }
    if values.is_empty() {
        return Ok(f64::NAN);
    }
    let m = mean(values);
    let mut sums: BTreeMap<K, f64> = BTreeMap::new();
    for (v, c) in values.iter().zip(clusters) {
        *sums.entry(*c).or_insert(0.0) += v - m;
    }
    let g = sums.len();
    if g < 2 {
        return Ok(0.0);
    }
    let ss: f64 = sums.values().map(|s| s * s).sum();
    let n = values.len() as f64;
    Ok(libm::sqrt(ss * g as f64 / (g - 1) as f64) / n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BootstrapCi {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub resamples: usize,
}

impl BootstrapCi {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn overlaps(&self, other: &BootstrapCi) -> bool {
        self.lower <= other.upper && other.lower <= self.upper
    }
}

pub const DEFAULT_LEVEL: f64 = 0.95;
pub const DEFAULT_RESAMPLES: usize = 1000;

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap of the mean. The interval is widened if needed so
/// that it contains the point estimate.
pub fn bootstrap_ci(values: &[f64], level: f64, resamples: usize, seed: u64) -> Result<BootstrapCi> {
    if values.len() < 2 {
        return Err(Error::Domain(format!(
            "bootstrap needs at least 2 values, got {}",
            values.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) || resamples == 0 {
        return Err(Error::Config(format!(
            "bootstrap level {level} must lie in (0, 1) with at least one resample"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("bootstrap over non-finite values".into()));
    }
    let point = mean(values);
    let n = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            let s: f64 = (0..n).map(|_| values[rng.random_range(0..n)]).sum();
            s / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(BootstrapCi {
        point,
        lower: quantile(&means, tail).min(point),
        upper: quantile(&means, 1.0 - tail).max(point),
        level,
        resamples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
}

/// Ordinary least squares `y = intercept + slope * x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Domain(format!(
            "linear fit needs matching inputs of length >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("linear fit with constant x".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn clustered_se_matches_plain_for_singletons() {
        let v = [0.1, 0.5, 0.2, 0.9, 0.4];
        let c = [0, 1, 2, 3, 4];
        let plain = std_error(&v);
        assert!((clustered_std_error(&v, &c).unwrap() - plain).abs() < 1e-12);
        // Duplicated observations inside a cluster carry no extra information.
        let v2 = [0.1, 0.1, 0.5, 0.5, 0.2, 0.2, 0.9, 0.9, 0.4, 0.4];
        let c2 = [0, 0, 1, 1, 2, 2, 3, 3, 4, 4];
        assert!((clustered_std_error(&v2, &c2).unwrap() - plain).abs() < 1e-12);
        assert_eq!(clustered_std_error(&v, &[7; 5]).unwrap(), 0.0);
        assert!(clustered_std_error(&v, &c[..3]).is_err());
    }

    #[test]
    fn constant_values_collapse_the_interval() {
        let ci = bootstrap_ci(&[0.3; 10], 0.95, 1000, 1).unwrap();
        assert_eq!((ci.lower, ci.upper), (ci.point, ci.point));
        assert!((ci.point - 0.3).abs() < 1e-15);
        assert_eq!((ci.level, ci.resamples), (0.95, 1000));
    }

    #[test]
    fn symmetric_sample_gives_symmetric_interval() {
        let v: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let ci = bootstrap_ci(&v, 0.95, 4000, 7).unwrap();
        let (lo, hi) = (ci.point - ci.lower, ci.upper - ci.point);
        assert!((lo - hi).abs() / (lo + hi) < 0.15, "{ci:?}");
    }

    #[test]
    fn bootstrap_is_deterministic_and_validates() {
        let v = [0.1, 0.5, 0.2, 0.9];
        assert_eq!(bootstrap_ci(&v, 0.95, 100, 3), bootstrap_ci(&v, 0.95, 100, 3));
        assert!(bootstrap_ci(&[1.0], 0.95, 100, 3).is_err());
        assert!(bootstrap_ci(&v, 1.0, 100, 3).is_err());
    }

    #[test]
    fn fit_recovers_a_line() {
        let x = vec![0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12 && (f.intercept - 2.0).abs() < 1e-12);
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn seeds_differ_across_streams() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
    }

    #[test]
    fn moments() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&v), 2.5);
        assert!((std_dev(&v) - libm::sqrt(5.0 / 3.0)).abs() < 1e-12);
        assert_eq!(std_dev(&[1.0]), 0.0);
    }
}
