//! Adversarial calibration risk across the threshold grid for each
//! strategy, plus the reported fraction and the resulting honest risk.

use riskctl_core::adversary::reported_fraction;

use super::{attack_specs, organic_member_curve, tag_group, Run};
use crate::error::Result;
use crate::results::{curve_metric, Arm, Population, ResultRow};

pub(super) fn run(run: &Run<'_>) -> Result<Vec<ResultRow>> {
    let cfg = run.config;
    let world = run.world()?;
    let organic = world.organic_curve()?;
    let r0 = organic.values()[0];
    let specs = attack_specs(cfg, tag_group(cfg, &world.dataset))?;
    let grid = world.grid.values().to_vec();
    let mut rows = Vec::new();
    for (bix, &beta) in cfg.betas.iter().enumerate() {
        let members = run.members(&world, bix)?;
        let base = run
            .context(None, String::new())
            .with_arm(Arm::Baseline, Some(beta), None);
        for (lambda, v) in grid.iter().zip(organic_member_curve(&world, &members)?) {
            rows.push(base.row(curve_metric("adv_risk", *lambda), Population::Adversarial, v));
        }
        for target in &cfg.targets {
            let alpha = target.resolve(r0);
            let t = riskctl_core::calibration::calibrate_global(&organic, alpha)?;
            let ctx = run.context(Some(alpha), target.label()).with_arm(Arm::Baseline, Some(beta), None);
            rows.push(ctx.row("lambda_hat", Population::Calibration, t.lambda));
            rows.push(ctx.row("test_risk", Population::NonAdversarial, world.evaluate(t.lambda).risk()));
        }
        for spec in &specs {
            let collective = run.collective(&world, bix, *spec)?;
            let attack = world.attack(&collective)?;
            let arm = Arm::Attack(spec.strategy());
            let ctx = run
                .context(None, String::new())
                .with_arm(arm, Some(beta), spec.gamma());
            let curve = attack.member_curve(&world.grid)?;
            for (lambda, v) in grid.iter().zip(curve.values()) {
                rows.push(ctx.row(curve_metric("adv_risk", *lambda), Population::Adversarial, *v));
            }
            rows.push(ctx.row(
                "reported_fraction",
                Population::Calibration,
                reported_fraction(&attack.reports, world.cal_pairs),
            ));
            for target in &cfg.targets {
                let alpha = target.resolve(r0);
                let t = attack.calibrate(alpha)?;
                let ctx = run
                    .context(Some(alpha), target.label())
                    .with_arm(arm, Some(beta), spec.gamma());
                rows.push(ctx.row("lambda_hat", Population::Calibration, t.lambda));
                rows.push(ctx.row("test_risk", Population::NonAdversarial, world.evaluate(t.lambda).risk()));
            }
        }
    }
    Ok(rows)
}
