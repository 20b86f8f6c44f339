//! Exposure lost by each of two groups when filtering without adversaries,
//! under a group-biased risk predictor and an unbiased control.

use riskctl_core::calibration::calibrate_global;
use riskctl_core::dataset::Dataset;
use riskctl_core::GroupId;

use super::world::World;
use super::Run;
use crate::error::{CliError, Result};
use crate::results::{Population, ResultRow};

pub(super) fn run(run: &Run<'_>) -> Result<Vec<ResultRow>> {
    let mut rows = arm(run, run.source.dataset(run.seed)?, "")?;
    if let Some(control) = run.source.control(run.seed)? {
        rows.extend(arm(run, control, "control_")?);
    }
    Ok(rows)
}

fn arm(run: &Run<'_>, dataset: Dataset, prefix: &str) -> Result<Vec<ResultRow>> {
    let cfg = run.config;
    let world = World::new(run.split(&dataset)?, cfg.grid()?, cfg.k)?;
    let organic = world.organic_curve()?;
    let r0 = organic.values()[0];
    let (a, b) = (GroupId(cfg.compared_groups.0), GroupId(cfg.compared_groups.1));
    let unfiltered = world.evaluate(0.0);
    let exposure = |e: &riskctl_core::metrics::PopulationEval, g: GroupId| {
        e.exposure
            .group_exposure(&world.dataset, g, cfg.exposure_mode)
            .ok_or_else(|| CliError::Runtime(format!("group {g} had no exposure opportunity")))
    };
    let (ea0, eb0) = (exposure(&unfiltered, a)?, exposure(&unfiltered, b)?);
    let mut rows = Vec::new();
    let ctx = run.context(None, String::new());
    for g in [a, b] {
        let scores: Vec<f64> = world
            .dataset
            .interactions()
            .iter()
            .filter(|i| world.dataset.item(i.item).is_some_and(|it| it.group == g))
            .map(|i| i.risk)
            .collect();
        rows.push(ctx.row(
            format!("{prefix}mean_risk_score"),
            Population::Group(g.0),
            riskctl_core::stats::mean(&scores),
        ));
    }
    for target in &cfg.targets {
        let alpha = target.resolve(r0);
        let t = calibrate_global(&organic, alpha)?;
        let e = world.evaluate(t.lambda);
        let ra = 1.0 - exposure(&e, a)? / ea0;
        let rb = 1.0 - exposure(&e, b)? / eb0;
        let ctx = run.context(Some(alpha), target.label());
        rows.push(ctx.row(format!("{prefix}lambda_hat"), Population::Calibration, t.lambda));
        rows.push(ctx.row(format!("{prefix}test_risk"), Population::NonAdversarial, e.risk()));
        rows.push(ctx.row(format!("{prefix}exposure_reduction"), Population::Group(a.0), ra));
        rows.push(ctx.row(format!("{prefix}exposure_reduction"), Population::Group(b.0), rb));
        rows.push(ctx.row(format!("{prefix}exposure_gap"), Population::All, ra - rb));
    }
    Ok(rows)
}
