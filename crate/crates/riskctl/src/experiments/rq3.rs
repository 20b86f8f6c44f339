//! Exposure of the tagged group under a Tag collective and under a Random
//! collective reporting the same number of items.

use riskctl_core::adversary::{member_reports, Strategy, StrategySpec};
use riskctl_core::calibration::calibrate_global;
use riskctl_core::dataset::Dataset;
use riskctl_core::math::ceil_count;
use riskctl_core::metrics::PopulationEval;
use riskctl_core::{GroupId, UserId};

use super::{tag_group, Run};
use crate::error::{CliError, Result};
use crate::results::{Arm, Population, ResultRow};

/// The gamma whose per-member `ceil(gamma * n)` reports total closest to
/// `target` (ties toward the larger gamma).
pub fn matched_gamma(sizes: &[usize], target: usize) -> f64 {
    let total = |g: f64| -> usize { sizes.iter().map(|&n| ceil_count(g, n)).sum() };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if total(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (t_lo, t_hi) = (total(lo), total(hi));
    if lo > 0.0 && target - t_lo < t_hi - target {
        lo
    } else {
        hi
    }
}

fn exposure(e: &PopulationEval, dataset: &Dataset, group: GroupId, run: &Run<'_>) -> Result<f64> {
    e.exposure
        .group_exposure(dataset, group, run.config.exposure_mode)
        .ok_or_else(|| CliError::Runtime(format!("group {group} had no exposure opportunity")))
}

pub(super) fn run(run: &Run<'_>) -> Result<Vec<ResultRow>> {
    let cfg = run.config;
    let world = run.world()?;
    let organic = world.organic_curve()?;
    let r0 = organic.values()[0];
    let group = tag_group(cfg, &world.dataset);
    let mut rows = Vec::new();
    for target in &cfg.targets {
        let alpha = target.resolve(r0);
        let ctx = run.context(Some(alpha), target.label());
        let t0 = calibrate_global(&organic, alpha)?;
        let base = exposure(&world.evaluate(t0.lambda), &world.dataset, group, run)?;
        rows.push(ctx.row("lambda_hat", Population::Calibration, t0.lambda));
        rows.push(ctx.row("exposure", Population::Group(group.0), base));

        for bix in 0..cfg.betas.len() {
            let beta = cfg.betas[bix];
            let tag = run.collective(&world, bix, StrategySpec::Tag { group })?;
            let tag_attack = world.attack(&tag)?;
            let member_items = sizes(&world.dataset, &tag.members)?;
            let pairs: usize = member_items.iter().sum();
            let tag_reports = tag_attack.reports.len();
            if tag_reports == 0 {
                return Err(CliError::Runtime(format!(
                    "run {}: tag collective at beta {beta} saw no item of group {group}",
                    run.index
                )));
            }
            let gamma = matched_gamma(&member_items, tag_reports);
            let random = run.collective(&world, bix, StrategySpec::Random { gamma })?;
            let random_attack = world.attack(&random)?;
            let random_reports: usize = random
                .members
                .iter()
                .map(|&u| member_reports(&world.dataset, u, &random.spec, random.seed).map(|r| r.len()))
                .sum::<riskctl_core::Result<usize>>()?;
            let mismatch = (random_reports as f64 - tag_reports as f64).abs() / tag_reports as f64;

            // The matched gamma differs between runs, so it is a metric
            // rather than a grouping column.
            for (arm, attack) in [
                (Arm::Attack(Strategy::Tag), &tag_attack),
                (Arm::Attack(Strategy::Random), &random_attack),
            ] {
                let ctx = ctx.with_arm(arm, Some(beta), None);
                let t = attack.calibrate(alpha)?;
                let e = exposure(&world.evaluate(t.lambda), &world.dataset, group, run)?;
                rows.push(ctx.row("lambda_hat", Population::Calibration, t.lambda));
                rows.push(ctx.row("exposure", Population::Group(group.0), e));
                rows.push(ctx.row("exposure_diff", Population::Group(group.0), e - base));
                rows.push(ctx.row(
                    "member_reported_fraction",
                    Population::Adversarial,
                    attack.reports.len() as f64 / pairs as f64,
                ));
            }
            let ctx = ctx.with_arm(Arm::Attack(Strategy::Random), Some(beta), None);
            rows.push(ctx.row("matched_gamma", Population::Adversarial, gamma));
            rows.push(ctx.row("rate_mismatch", Population::Adversarial, mismatch));
        }
    }
    Ok(rows)
}

fn sizes(dataset: &Dataset, members: &[UserId]) -> Result<Vec<usize>> {
    members
        .iter()
        .map(|&u| Ok(dataset.exposure_log(u)?.len()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matching_hits_reachable_totals() {
        let sizes = [100, 100, 100];
        let g = matched_gamma(&sizes, 42);
        assert_eq!(sizes.iter().map(|&n| ceil_count(g, n)).sum::<usize>(), 42);
        let g = matched_gamma(&[100], 13);
        assert_eq!(ceil_count(g, 100), 13);
        let g = matched_gamma(&[10, 20], 4);
        let t: usize = [10, 20].iter().map(|&n| ceil_count(g, n)).sum();
        assert!(t.abs_diff(4) <= 1);
    }
}
