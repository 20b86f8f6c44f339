//! Honest test risk at the calibrated threshold without adversaries.

use riskctl_core::calibration::calibrate_global;

use super::Run;
use crate::error::Result;
use crate::results::{Population, ResultRow};

pub(super) fn run(run: &Run<'_>) -> Result<Vec<ResultRow>> {
    let world = run.world()?;
    let organic = world.organic_curve()?;
    let r0 = organic.values()[0];
    let mut rows = Vec::new();
    for target in &run.config.targets {
        let alpha = target.resolve(r0);
        let t = calibrate_global(&organic, alpha)?;
        let e = world.evaluate(t.lambda);
        let ctx = run.context(Some(alpha), target.label());
        rows.push(ctx.row("lambda_hat", Population::Calibration, t.lambda));
        rows.push(ctx.row("Q", Population::Calibration, world.samples() as f64));
        rows.push(ctx.row("test_risk", Population::NonAdversarial, e.risk()));
        rows.push(ctx.row("test_risk_se", Population::NonAdversarial, e.risk_se()));
    }
    Ok(rows)
}
