//! Recommendation quality, repeated items and the honest-risk bound under
//! attack, against the no-attack baseline.

use riskctl_core::adversary::{reported_fraction, sample_collective, StrategySpec};
use riskctl_core::calibration::calibrate_global;
use riskctl_core::metrics::reduction;
use riskctl_core::stats::derive_seed;
use riskctl_core::theory::corollary_bound;

use super::world::Attack;
use super::{attack_specs, bound_rows, eval_rows, tag_group, Run};
use crate::error::Result;
use crate::results::{Arm, Population, ResultRow};

/// Seed stream of the flag-everything collectives, plus the beta index.
const COROLLARY: u64 = 200;

pub(super) fn run(run: &Run<'_>) -> Result<Vec<ResultRow>> {
    let cfg = run.config;
    let world = run.world()?;
    let organic = world.organic_curve()?;
    let r0 = organic.values()[0];
    let q = world.samples();
    let specs = attack_specs(cfg, tag_group(cfg, &world.dataset))?;
    let mut rows = Vec::new();

    let mut baselines = Vec::new();
    for target in &cfg.targets {
        let alpha = target.resolve(r0);
        let t = calibrate_global(&organic, alpha)?;
        let e = world.evaluate(t.lambda);
        let ctx = run.context(Some(alpha), target.label());
        rows.extend(eval_rows(&ctx, &e, t.lambda));
        baselines.push(e);
    }

    for (bix, &beta) in cfg.betas.iter().enumerate() {
        for spec in &specs {
            let collective = run.collective(&world, bix, *spec)?;
            let attack = world.attack(&collective)?;
            let arm = Arm::Attack(spec.strategy());
            for (target, base) in cfg.targets.iter().zip(&baselines) {
                let alpha = target.resolve(r0);
                let ctx = run
                    .context(Some(alpha), target.label())
                    .with_arm(arm, Some(beta), spec.gamma());
                let t = attack.calibrate(alpha)?;
                let e = world.evaluate(t.lambda);
                rows.extend(eval_rows(&ctx, &e, t.lambda));
                rows.push(ctx.row(
                    "reduction_ndcg",
                    Population::NonAdversarial,
                    reduction(base.ndcg(), e.ndcg(), beta)?,
                ));
                rows.push(ctx.row(
                    "reduction_recall",
                    Population::NonAdversarial,
                    reduction(base.recall(), e.recall(), beta)?,
                ));
                rows.push(ctx.row(
                    "reported_fraction",
                    Population::Calibration,
                    reported_fraction(&attack.reports, world.cal_pairs),
                ));
                rows.extend(check_bound(&world, &attack, &collective.members, &ctx, alpha, t.lambda, &e)?);
            }
        }
    }

    for (bix, &beta) in cfg.corollary_betas.iter().enumerate() {
        let spec = StrategySpec::LowRisk { gamma: 1.0 };
        let collective = sample_collective(
            &world.cal_users,
            beta,
            spec,
            derive_seed(run.seed, COROLLARY + bix as u64),
        )?;
        let attack = world.attack(&collective)?;
        for target in &cfg.targets {
            let alpha = target.resolve(r0);
            let ctx = run
                .context(Some(alpha), target.label())
                .with_arm(Arm::Attack(spec.strategy()), Some(beta), spec.gamma());
            let t = attack.calibrate(alpha)?;
            let e = world.evaluate(t.lambda);
            rows.extend(eval_rows(&ctx, &e, t.lambda));
            rows.push(ctx.row(
                "corollary_bound",
                Population::NonAdversarial,
                corollary_bound(alpha, attack.member_samples(), q)?,
            ));
            rows.extend(check_bound(&world, &attack, &collective.members, &ctx, alpha, t.lambda, &e)?);
        }
    }
    Ok(rows)
}

fn check_bound(
    world: &super::world::World,
    attack: &Attack,
    members: &[riskctl_core::UserId],
    ctx: &crate::results::RowContext,
    alpha: f64,
    lambda: f64,
    e: &riskctl_core::metrics::PopulationEval,
) -> Result<Vec<ResultRow>> {
    bound_rows(
        ctx,
        alpha,
        attack.member_samples(),
        world.samples(),
        attack.r_adv(lambda),
        e.risk(),
        e.risk_se(),
        world.honest_calibration_se(members, lambda),
    )
}
