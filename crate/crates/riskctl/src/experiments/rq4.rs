//! Per-user thresholds against the global threshold. Each test user's
//! first events calibrate their own threshold and the remaining events are
//! evaluated under both.

use std::collections::BTreeMap;

use riskctl_core::adversary::StrategySpec;
use riskctl_core::calibration::{calibrate_global, calibrate_user_profiles, SlateProfile};
use riskctl_core::metrics::PopulationEval;
use riskctl_core::recsys::Recommender;
use riskctl_core::stats::{mean, std_error};
use riskctl_core::UserId;

use super::world::World;
use super::Run;
use crate::error::{CliError, Result};
use crate::results::{Arm, Population, ResultRow, RowContext};

pub(super) fn run(run: &Run<'_>) -> Result<Vec<ResultRow>> {
    let cfg = run.config;
    let n = cfg.user_calibration_slates;
    if n == 0 {
        return Err(CliError::Usage("rq4 needs user_calibration_slates > 0".into()));
    }
    let dataset = run.split(&run.source.dataset(run.seed)?)?;
    let (cal_users, test_users) = (dataset.calibration_users(), dataset.test_users());
    let mut user_cal = BTreeMap::new();
    let mut test_slates = Vec::new();
    for &u in &test_users {
        let slates = dataset.slates_of(u)?;
        if slates.len() <= n {
            return Err(CliError::Runtime(format!(
                "user {u} has {} events; {n} calibrate the user threshold and at least one must remain for testing",
                slates.len()
            )));
        }
        user_cal.insert(u, slates[..n].to_vec());
        test_slates.extend_from_slice(&slates[n..]);
    }
    let world = World::with_test_slates(dataset, cfg.grid()?, cfg.k, cal_users, test_users, Some(test_slates))?;
    let rec = Recommender::new(&world.dataset, cfg.k)?;
    let user_profiles: BTreeMap<UserId, Vec<SlateProfile>> = user_cal
        .iter()
        .map(|(&u, slates)| {
            let pool = world.organic_pools.get(u)?;
            Ok((u, slates.iter().map(|s| SlateProfile::from_log(&rec, s, &world.dataset, pool)).collect()))
        })
        .collect::<riskctl_core::Result<_>>()?;

    let organic = world.organic_curve()?;
    let r0 = organic.values()[0];
    let mut rows = Vec::new();
    for target in &cfg.targets {
        let alpha = target.resolve(r0);
        let mut lambdas = BTreeMap::new();
        let mut conservative = 0usize;
        for (&u, profiles) in &user_profiles {
            let t = calibrate_user_profiles(u, profiles, &world.grid, alpha)?;
            conservative += t.conservative() as usize;
            lambdas.insert(u, t);
        }
        let user_eval = world.test.evaluate(|u| lambdas.get(&u).map_or(f64::INFINITY, |t| t.lambda()));
        let mut arms = vec![(Arm::Baseline, None, calibrate_global(&organic, alpha)?.lambda)];
        for bix in 0..cfg.betas.len() {
            for &gamma in &cfg.gammas {
                let spec = StrategySpec::LowRisk { gamma };
                spec.validate(cfg.allow_large_gamma)?;
                let attack = world.attack(&run.collective(&world, bix, spec)?)?;
                arms.push((Arm::Attack(spec.strategy()), Some((bix, gamma)), attack.calibrate(alpha)?.lambda));
            }
        }
        for (arm, cell, lambda) in arms {
            let ctx = run.context(Some(alpha), target.label()).with_arm(
                arm,
                cell.map(|(b, _)| cfg.betas[b]),
                cell.map(|(_, g)| g),
            );
            let global = world.evaluate(lambda);
            rows.push(ctx.row("lambda_hat", Population::Calibration, lambda));
            rows.extend(compare(&ctx, &global, &user_eval));
            rows.push(ctx.row("conservative_users", Population::NonAdversarial, conservative as f64));
            rows.push(ctx.row(
                "user_exceedance_fraction",
                Population::NonAdversarial,
                exceedance(&user_eval, &lambdas, alpha),
            ));
        }
    }
    Ok(rows)
}

fn compare(ctx: &RowContext, global: &PopulationEval, user: &PopulationEval) -> Vec<ResultRow> {
    let p = Population::NonAdversarial;
    let rep_ratio = if global.repeated_fraction() > 0.0 {
        user.repeated_fraction() / global.repeated_fraction()
    } else {
        0.0
    };
    vec![
        ctx.row("ndcg_global", p, global.ndcg()),
        ctx.row("ndcg_user", p, user.ndcg()),
        ctx.row("recall_global", p, global.recall()),
        ctx.row("recall_user", p, user.recall()),
        ctx.row("repeated_fraction_global", p, global.repeated_fraction()),
        ctx.row("repeated_fraction_user", p, user.repeated_fraction()),
        ctx.row("test_risk_global", p, global.risk()),
        ctx.row("test_risk_se_global", p, global.risk_se()),
        ctx.row("test_risk_user", p, user.risk()),
        ctx.row("test_risk_se_user", p, user.risk_se()),
        ctx.row("delta_ndcg", p, user.ndcg() - global.ndcg()),
        ctx.row("delta_recall", p, user.recall() - global.recall()),
        ctx.row("delta_repeated_fraction", p, user.repeated_fraction() - global.repeated_fraction()),
        ctx.row("repeated_ratio", p, rep_ratio),
    ]
}

/// Share of non-conservative users whose mean test risk exceeds alpha by
/// more than two standard errors of their own events.
fn exceedance(
    eval: &PopulationEval,
    thresholds: &BTreeMap<UserId, riskctl_core::calibration::UserThreshold>,
    alpha: f64,
) -> f64 {
    let mut by_user: BTreeMap<UserId, Vec<f64>> = BTreeMap::new();
    for o in &eval.outcomes {
        by_user.entry(o.user).or_default().push(o.risk);
    }
    let checked: Vec<bool> = by_user
        .iter()
        .filter(|(u, _)| thresholds.get(u).is_some_and(|t| !t.conservative()))
        .map(|(_, r)| mean(r) > alpha + 2.0 * std_error(r))
        .collect();
    if checked.is_empty() {
        return 0.0;
    }
    checked.iter().filter(|&&x| x).count() as f64 / checked.len() as f64
}
