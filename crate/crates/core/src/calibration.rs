//! Empirical risk curves over a threshold grid and conformal threshold
//! selection, for the whole calibration population or a single user.

use alloc::format;
use alloc::vec::Vec;

use crate::dataset::{Dataset, FlagOracle, SlateLog};
use crate::ids::UserId;
use crate::recsys::{Recommender, SafePool, SafePools, Slate};
use crate::{Error, Result};

/// Slack on the calibration inequality so that exact boundary cases such as
/// `R = 4/9, Q = 9, alpha = 0.5` are not lost to rounding.
pub const FEASIBILITY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ThresholdGrid {
    values: Vec<f64>,
}

impl Default for ThresholdGrid {
    /// 1001 uniform points on `[0, 1.001]`.
    fn default() -> Self {
        Self::uniform(1001, 1.001).expect("valid default grid")
    }
}

impl ThresholdGrid {
    /// `points` evenly spaced values from 0 to `max` inclusive.
    pub fn uniform(points: usize, max: f64) -> Result<Self> {
        if points < 2 || !(max.is_finite() && max > 0.0) {
            return Err(Error::Config(format!(
                "grid needs at least 2 points and a positive max, got {points} points up to {max}"
            )));
        }
        let step = max / (points - 1) as f64;
        let mut values: Vec<f64> = (0..points).map(|i| i as f64 * step).collect();
        values[points - 1] = max;
        Self::new(values)
    }

    /// Explicit grid. Must start at 0 and be strictly increasing.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.first() != Some(&0.0) {
            return Err(Error::Config("threshold grid must start at 0".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("threshold grid has a non-finite value".into()));
        }
        if let Some(w) = values.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "threshold grid not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Whether the last point filters every item (`1 - r <= 1 < max`).
    pub fn filters_everything_at_max(&self) -> bool {
        self.max() > 1.0
    }
}

/// Eq.-3 style set risk: share of flagged items in the slate, 0 when empty.
pub fn set_risk(slate: &Slate, oracle: &impl FlagOracle) -> f64 {
    if slate.is_empty() {
        return 0.0;
    }
    let flagged = slate
        .items()
        .filter(|&i| oracle.is_flagged(slate.user, i))
        .count();
    flagged as f64 / slate.len() as f64
}

/// Everything needed to evaluate one calibration slate at any threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct SlateProfile {
    /// `(1 - risk, flagged)` of the shown positions, ascending by `1 - risk`.
    shown: Vec<(f64, bool)>,
    /// `flags_dropped[p]`: flagged count among the first `p` of `shown`.
    flags_dropped: Vec<u32>,
    /// `safe_flags[m]`: flagged count among the first `m` replacements.
    safe_flags: Vec<u32>,
}

impl SlateProfile {
    /// `shown` holds `(risk, flagged)` of the positions that can be served,
    /// `safe` the flags of the replacement items in the order they are used.
    pub fn new(shown: impl IntoIterator<Item = (f64, bool)>, safe: impl IntoIterator<Item = bool>) -> Self {
        let mut shown: Vec<(f64, bool)> = shown.into_iter().map(|(r, h)| (1.0 - r, h)).collect();
        shown.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut flags_dropped = Vec::with_capacity(shown.len() + 1);
        let mut acc = 0u32;
        flags_dropped.push(0);
        for &(_, h) in &shown {
            acc += h as u32;
            flags_dropped.push(acc);
        }
        let mut safe_flags = Vec::with_capacity(shown.len() + 1);
        safe_flags.push(0);
        let mut acc = 0u32;
        for h in safe.into_iter().take(shown.len()) {
            acc += h as u32;
            safe_flags.push(acc);
        }
        Self {
            shown,
            flags_dropped,
            safe_flags,
        }
    }

    /// Profile of one logged event served by `rec` under `oracle`.
    pub fn from_log(
        rec: &Recommender<'_>,
        slate: &SlateLog,
        oracle: &impl FlagOracle,
        safe: &SafePool,
    ) -> Self {
        let ranked = rec.slate_pool(slate);
        let slots = rec.k().min(ranked.len());
        let user = slate.user;
        Self::new(
            ranked[..slots]
                .iter()
                .map(|c| (c.risk, oracle.is_flagged(user, c.item))),
            safe.available_for(&ranked)
                .take(slots)
                .map(|i| oracle.is_flagged(user, i)),
        )
    }

    fn risk_with_dropped(&self, dropped: usize) -> f64 {
        let n = self.shown.len();
        let flagged_fresh = self.flags_dropped[n] - self.flags_dropped[dropped];
        let refill = dropped.min(self.safe_flags.len() - 1);
        let size = n - dropped + refill;
        if size == 0 {
            return 0.0;
        }
        (flagged_fresh + self.safe_flags[refill]) as f64 / size as f64
    }

    /// Set risk of the served slate at `lambda`.
    pub fn risk_at(&self, lambda: f64) -> f64 {
        let dropped = self.shown.iter().filter(|(keep, _)| *keep < lambda).count();
        self.risk_with_dropped(dropped)
    }

    /// Adds this slate's risk at every grid point to `sums`.
    pub fn accumulate(&self, grid: &ThresholdGrid, sums: &mut [f64]) {
        let mut dropped = 0;
        for (sum, &lambda) in sums.iter_mut().zip(grid.values()) {
            while dropped < self.shown.len() && self.shown[dropped].0 < lambda {
                dropped += 1;
            }
            *sum += self.risk_with_dropped(dropped);
        }
    }
}

/// Empirical risk at each grid point, averaged over `samples` slates.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskCurve {
    grid: ThresholdGrid,
    values: Vec<f64>,
    samples: usize,
}

impl RiskCurve {
    /// Curve from precomputed values. Values must lie in `[0, 1]`.
    pub fn from_values(grid: ThresholdGrid, values: Vec<f64>, samples: usize) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Calibration(format!(
                "{} curve values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Calibration(format!("risk value {v} outside [0, 1]")));
        }
        Ok(Self {
            grid,
            values,
            samples,
        })
    }

    /// Mean of the profiles' risks, summed in profile order. Does not check
    /// monotonicity.
    pub fn from_profiles<'p>(
        grid: &ThresholdGrid,
        profiles: impl IntoIterator<Item = &'p SlateProfile>,
    ) -> Result<Self> {
        let mut sums = alloc::vec![0.0; grid.len()];
        let mut samples = 0usize;
        for p in profiles {
            p.accumulate(grid, &mut sums);
            samples += 1;
        }
        if samples == 0 {
            return Err(Error::Calibration("no calibration slates".into()));
        }
        let q = samples as f64;
        let values = sums.into_iter().map(|s| (s / q).min(1.0)).collect();
        Self::from_values(grid.clone(), values, samples)
    }

    /// Errors on the first grid step where the curve increases.
    pub fn check_monotone(&self) -> Result<()> {
        for j in 1..self.values.len() {
            if self.values[j] > self.values[j - 1] {
                return Err(Error::NonMonotone {
                    lambda_before: self.grid.values()[j - 1],
                    lambda_after: self.grid.values()[j],
                    before: self.values[j - 1],
                    after: self.values[j],
                });
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> &ThresholdGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of calibration slates `Q`.
    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Risk at the grid point closest to `lambda` from below.
    pub fn at(&self, lambda: f64) -> f64 {
        let ix = self.grid.values().partition_point(|&g| g <= lambda);
        self.values[ix.saturating_sub(1)]
    }
}

/// Profiles of `slates` under `oracle`, using each user's safe pool.
pub fn slate_profiles(
    rec: &Recommender<'_>,
    slates: &[SlateLog],
    oracle: &impl FlagOracle,
    pools: &SafePools,
) -> Result<Vec<SlateProfile>> {
    slates
        .iter()
        .map(|s| Ok(SlateProfile::from_log(rec, s, oracle, pools.get(s.user)?)))
        .collect()
}

/// Risk curve over `slates`, with replacement from `pools`. Fails if the
/// curve is not non-increasing.
pub fn empirical_risk_curve(
    dataset: &Dataset,
    slates: &[SlateLog],
    grid: &ThresholdGrid,
    k: usize,
    oracle: &impl FlagOracle,
    pools: &SafePools,
) -> Result<RiskCurve> {
    let rec = Recommender::new(dataset, k)?;
    let profiles = slate_profiles(&rec, slates, oracle, pools)?;
    let curve = RiskCurve::from_profiles(grid, &profiles)?;
    curve.check_monotone()?;
    Ok(curve)
}

/// Whether `Q/(Q+1) R + 1/(Q+1) <= alpha`.
#[inline]
pub fn is_feasible(risk: f64, samples: usize, alpha: f64) -> bool {
    let q = samples as f64;
    q / (q + 1.0) * risk + 1.0 / (q + 1.0) <= alpha + FEASIBILITY_EPS
}

/// A selected threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Threshold {
    pub lambda: f64,
    /// Grid index of `lambda`.
    pub index: usize,
    pub samples: usize,
    /// Set when the threshold is the grid-max fallback.
    pub conservative: bool,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha {alpha} must lie in (0, 1]")))
    }
}

/// Smallest grid threshold satisfying the conformal rule.
pub fn calibrate_global(curve: &RiskCurve, alpha: f64) -> Result<Threshold> {
    check_alpha(alpha)?;
    let q = curve.samples;
    match curve
        .values
        .iter()
        .position(|&r| is_feasible(r, q, alpha))
    {
        Some(index) => Ok(Threshold {
            lambda: curve.grid.values()[index],
            index,
            samples: q,
            conservative: false,
        }),
        None => {
            let min_risk = curve.values.iter().copied().fold(f64::INFINITY, f64::min);
            let qf = q as f64;
            Err(Error::Infeasible {
                alpha,
                samples: q,
                min_alpha: (qf * min_risk + 1.0) / (qf + 1.0),
            })
        }
    }
}

/// Per-user threshold; falls back to the grid maximum (conservative) when
/// the user has no calibration slates or `alpha` is out of reach.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserThreshold {
    pub user: UserId,
    pub threshold: Threshold,
}

impl UserThreshold {
    pub fn lambda(&self) -> f64 {
        self.threshold.lambda
    }

    pub fn conservative(&self) -> bool {
        self.threshold.conservative
    }
}

fn fallback(grid: &ThresholdGrid, samples: usize) -> Threshold {
    Threshold {
        lambda: grid.max(),
        index: grid.len() - 1,
        samples,
        conservative: true,
    }
}

/// Applies the global rule to a single user's profiles. Fails like
/// [`empirical_risk_curve`] if the user's curve increases.
pub fn calibrate_user_profiles(
    user: UserId,
    profiles: &[SlateProfile],
    grid: &ThresholdGrid,
    alpha: f64,
) -> Result<UserThreshold> {
    check_alpha(alpha)?;
    if profiles.is_empty() {
        return Ok(UserThreshold {
            user,
            threshold: fallback(grid, 0),
        });
    }
    let curve = RiskCurve::from_profiles(grid, profiles)?;
    curve.check_monotone()?;
    let threshold = match calibrate_global(&curve, alpha) {
        Ok(t) => t,
        Err(Error::Infeasible { .. }) => fallback(grid, profiles.len()),
        Err(e) => return Err(e),
    };
    Ok(UserThreshold { user, threshold })
}

/// Threshold for `user` from their own calibration slates.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_user(
    dataset: &Dataset,
    user: UserId,
    slates: &[SlateLog],
    grid: &ThresholdGrid,
    alpha: f64,
    k: usize,
    oracle: &impl FlagOracle,
    safe: &SafePool,
) -> Result<UserThreshold> {
    if let Some(s) = slates.iter().find(|s| s.user != user) {
        return Err(Error::Validation(format!(
            "slate {} of user {} passed to calibrate_user for {user}",
            s.slate, s.user
        )));
    }
    let rec = Recommender::new(dataset, k)?;
    let profiles: Vec<SlateProfile> = slates
        .iter()
        .map(|s| SlateProfile::from_log(&rec, s, oracle, safe))
        .collect();
    calibrate_user_profiles(user, &profiles, grid, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recsys::Provenance;
    use crate::ItemId;
    use alloc::vec;

    struct Flags(Vec<u32>);
    impl FlagOracle for Flags {
        fn is_flagged(&self, _: UserId, item: ItemId) -> bool {
            self.0.contains(&item.0)
        }
    }

    fn fresh(items: &[u32]) -> Slate {
        Slate::new(
            UserId(0),
            0.0,
            items.iter().map(|&i| (ItemId(i), Provenance::Fresh)).collect(),
        )
    }

    #[test]
    fn set_risk_cases() {
        assert_eq!(set_risk(&fresh(&[1, 2, 3, 4]), &Flags(vec![3])), 0.25);
        assert_eq!(set_risk(&fresh(&[]), &Flags(vec![3])), 0.0);
        assert_eq!(set_risk(&fresh(&[1, 2]), &Flags(vec![1, 2])), 1.0);
    }

    fn grid5() -> ThresholdGrid {
        ThresholdGrid::new(vec![0.0, 0.25, 0.5, 0.75, 1.0]).unwrap()
    }

    #[test]
    fn default_grid_shape() {
        let g = ThresholdGrid::default();
        assert_eq!(g.len(), 1001);
        assert_eq!(g.values()[0], 0.0);
        assert_eq!(g.max(), 1.001);
        assert!(g.filters_everything_at_max());
        assert!(ThresholdGrid::new(vec![0.0, 0.5, 0.5]).is_err());
        assert!(ThresholdGrid::new(vec![0.1, 0.5]).is_err());
    }

    #[test]
    fn zero_risk_curve_with_nine_samples() {
        let g = ThresholdGrid::default();
        let c = RiskCurve::from_values(g.clone(), vec![0.0; g.len()], 9).unwrap();
        let t = calibrate_global(&c, 0.1).unwrap();
        assert_eq!((t.lambda, t.index), (0.0, 0));
    }

    #[test]
    fn scan_picks_first_feasible_point() {
        let c = RiskCurve::from_values(grid5(), vec![0.5, 0.5, 0.25, 0.0, 0.0], 4).unwrap();
        assert_eq!(calibrate_global(&c, 0.3).unwrap().lambda, 0.75);
        assert_eq!(calibrate_global(&c, 1.0).unwrap().lambda, 0.0);
    }

    #[test]
    fn infeasible_names_min_alpha() {
        let c = RiskCurve::from_values(grid5(), vec![0.0; 5], 9).unwrap();
        match calibrate_global(&c, 0.05) {
            Err(Error::Infeasible { min_alpha, samples, .. }) => {
                assert_eq!(samples, 9);
                assert!((min_alpha - 0.1).abs() < 1e-15);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(calibrate_global(&c, 0.0), Err(Error::Config(_))));
        assert!(matches!(calibrate_global(&c, 1.5), Err(Error::Config(_))));
    }

    #[test]
    fn two_item_slate_curve() {
        // risks {0.9 flagged, 0.1}, no safe items.
        let p = SlateProfile::new([(0.9, true), (0.1, false)], []);
        assert_eq!(p.risk_at(0.0), 0.5);
        assert_eq!(p.risk_at(0.2), 0.0);
        let c = RiskCurve::from_profiles(&grid5(), [&p]).unwrap();
        assert_eq!(c.values(), &[0.5, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(c.samples(), 1);
    }

    #[test]
    fn replacement_dilutes_risk() {
        let p = SlateProfile::new([(0.9, true), (0.8, true), (0.1, false), (0.1, false)], [false; 10]);
        assert_eq!(p.risk_at(0.0), 0.5);
        assert_eq!(p.risk_at(0.15), 0.25);
        assert_eq!(p.risk_at(0.5), 0.0);
        assert_eq!(p.risk_at(1.001), 0.0);
    }

    #[test]
    fn accumulate_matches_pointwise() {
        let p = SlateProfile::new(
            [(0.3, true), (0.7, false), (0.05, true), (0.5, false), (0.99, true)],
            [false, false, true],
        );
        let g = ThresholdGrid::uniform(41, 1.001).unwrap();
        let mut sums = vec![0.0; g.len()];
        p.accumulate(&g, &mut sums);
        for (s, &l) in sums.iter().zip(g.values()) {
            assert_eq!(*s, p.risk_at(l));
        }
    }

    #[test]
    fn non_monotone_curve_is_reported() {
        let c = RiskCurve::from_values(grid5(), vec![0.5, 0.2, 0.3, 0.0, 0.0], 3).unwrap();
        assert!(matches!(
            c.check_monotone(),
            Err(Error::NonMonotone { lambda_before, .. }) if lambda_before == 0.25
        ));
    }

    #[test]
    fn empty_profiles_are_an_error() {
        let none: [&SlateProfile; 0] = [];
        assert!(matches!(
            RiskCurve::from_profiles(&grid5(), none),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn user_fallbacks() {
        let g = ThresholdGrid::default();
        let t = calibrate_user_profiles(UserId(1), &[], &g, 0.1).unwrap();
        assert!(t.conservative());
        assert_eq!(t.lambda(), 1.001);
        assert_eq!(t.threshold.samples, 0);

        let clean: Vec<SlateProfile> = (0..9).map(|_| SlateProfile::new([(0.2, false)], [])).collect();
        let t = calibrate_user_profiles(UserId(1), &clean, &g, 0.1).unwrap();
        assert!(!t.conservative());
        assert_eq!(t.lambda(), 0.0);

        let t = calibrate_user_profiles(UserId(1), &clean, &g, 0.09).unwrap();
        assert!(t.conservative());
    }

    #[test]
    fn adversarial_user_reaches_four_ninths() {
        // Nine slates, all shown items flagged, one unflagged safe item each.
        // Slate risk drops from 1 once items are filtered and replaced.
        let g = ThresholdGrid::uniform(11, 1.0).unwrap();
        let profiles: Vec<SlateProfile> = (0..9)
            .map(|j| {
                let r = 0.05 + 0.1 * j as f64;
                SlateProfile::new([(r, true)], [false])
            })
            .collect();
        let t = calibrate_user_profiles(UserId(3), &profiles, &g, 0.5).unwrap();
        let curve = RiskCurve::from_profiles(&g, &profiles).unwrap();
        let first = curve.values().iter().position(|&r| r <= 4.0 / 9.0 + 1e-12).unwrap();
        assert_eq!(t.threshold.index, first);
        assert!(!t.conservative());
    }
}
