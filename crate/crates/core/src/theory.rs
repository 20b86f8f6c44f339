//! Upper bounds on honest users' test risk under an adversarial collective,
//! and their empirical verification.

use alloc::format;

use crate::stats::{linear_fit, LinearFit};
use crate::{Error, Result};

fn check(k: usize, q: usize, r_adv: f64) -> Result<()> {
    if k >= q {
        return Err(Error::Domain(format!("bound needs K < Q, got K={k}, Q={q}")));
    }
    if !(0.0..=1.0).contains(&r_adv) {
        return Err(Error::Domain(format!("adversarial risk {r_adv} outside [0, 1]")));
    }
    Ok(())
}

/// `alpha - K/(Q+1) * r_adv`, unclamped.
pub fn effective_alpha(alpha: f64, k: usize, q: usize, r_adv: f64) -> f64 {
    alpha - k as f64 / (q as f64 + 1.0) * r_adv
}

/// `max(0, alpha - K/(Q+1) * r_adv)`. With `K = 0` the bound is `alpha`.
pub fn theorem1_bound(alpha: f64, k: usize, q: usize, r_adv: f64) -> Result<f64> {
    check(k, q, r_adv)?;
    Ok(effective_alpha(alpha, k, q, r_adv).max(0.0))
}

/// The bound when every adversary's slates are fully flagged.
pub fn corollary_bound(alpha: f64, k: usize, q: usize) -> Result<f64> {
    theorem1_bound(alpha, k, q, 1.0)
}

/// What one simulated run measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInput {
    pub alpha: f64,
    pub k: usize,
    pub q: usize,
    /// Adversaries' calibration risk at the selected threshold.
    pub r_adv: Option<f64>,
    /// Mean honest test risk.
    pub observed: f64,
    /// Monte-Carlo standard error of `observed`.
    pub se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundReport {
    pub alpha: f64,
    pub k: usize,
    pub q: usize,
    pub r_adv: f64,
    pub bound: f64,
    pub observed: f64,
    pub tolerance: f64,
    pub satisfied: bool,
    /// `bound - observed`.
    pub slack: f64,
}

/// Checks `observed <= bound + 2 * se`.
pub fn verify_bound(input: &BoundInput) -> Result<BoundReport> {
    let r_adv = match (input.k, input.r_adv) {
        (0, r) => r.unwrap_or(0.0),
        (_, Some(r)) => r,
        (_, None) => {
            return Err(Error::Validation(
                "adversarial risk was not measured for a nonempty collective".into(),
            ))
        }
    };
    if !(input.observed.is_finite() && input.se.is_finite() && input.se >= 0.0) {
        return Err(Error::Validation(format!(
            "observed risk {} with standard error {} is not usable",
            input.observed, input.se
        )));
    }
    let bound = theorem1_bound(input.alpha, input.k, input.q, r_adv)?;
    let tolerance = 2.0 * input.se;
    Ok(BoundReport {
        alpha: input.alpha,
        k: input.k,
        q: input.q,
        r_adv,
        bound,
        observed: input.observed,
        tolerance,
        satisfied: input.observed <= bound + tolerance,
        slack: bound - input.observed,
    })
}

/// Least-squares line of effective alpha against collective size.
pub fn effective_alpha_slope(points: &[(usize, f64)]) -> Result<LinearFit> {
    let x: alloc::vec::Vec<f64> = points.iter().map(|p| p.0 as f64).collect();
    let y: alloc::vec::Vec<f64> = points.iter().map(|p| p.1).collect();
    linear_fit(&x, &y)
}
