//! The simulation studies. Each run is independent and seeded from the
//! master seed and its index; runs execute in parallel and their rows are
//! concatenated in run order.

mod appendix_b;
mod rq1;
mod rq2;
mod rq3;
mod rq4;
mod validity;
pub mod world;

use rayon::prelude::*;
use riskctl_core::adversary::{sample_collective, Collective, StrategySpec};
use riskctl_core::dataset::{generate_synthetic, Dataset, SynthConfig};
use riskctl_core::stats::derive_seed;
use riskctl_core::theory::theorem1_bound;
use riskctl_core::{GroupId, UserId};

use crate::config::{DataSource, ExperimentConfig, ExperimentId};
use crate::error::Result;
use crate::io::load_dataset;
use crate::results::{ResultRow, ResultTable, RowContext, Arm, Population};
use world::World;

/// Seed streams below a run seed.
mod stream {
    pub const DATA: u64 = 0;
    pub const SPLIT: u64 = 1;
    /// Plus the beta index.
    pub const COLLECTIVE: u64 = 100;
}

/// Seed of run `run`.
pub fn run_seed(master: u64, run: usize) -> u64 {
    derive_seed(master, run as u64)
}

/// Data shared by all runs.
enum Source {
    Synthetic(SynthConfig),
    Loaded(Dataset),
}

impl Source {
    fn new(config: &ExperimentConfig) -> Result<Self> {
        Ok(match &config.data {
            DataSource::Synthetic(s) => Source::Synthetic(s.clone()),
            DataSource::Files {
                interactions,
                items,
            } => Source::Loaded(load_dataset(interactions, items)?),
        })
    }

    fn dataset(&self, seed: u64) -> Result<Dataset> {
        Ok(match self {
            Source::Synthetic(s) => generate_synthetic(s, derive_seed(seed, stream::DATA))?,
            Source::Loaded(d) => d.clone(),
        })
    }

    /// Same data with a group-agnostic risk predictor: the generator draws
    /// the same random numbers whatever the bias, so only risk scores
    /// differ. Only synthetic data has a control.
    fn control(&self, seed: u64) -> Result<Option<Dataset>> {
        Ok(match self {
            Source::Synthetic(s) => Some(generate_synthetic(
                &SynthConfig {
                    group_bias: 0.0,
                    ..s.clone()
                },
                derive_seed(seed, stream::DATA),
            )?),
            Source::Loaded(_) => None,
        })
    }
}

/// Everything one run needs.
struct Run<'a> {
    config: &'a ExperimentConfig,
    source: &'a Source,
    index: usize,
    seed: u64,
}

impl Run<'_> {
    fn split(&self, dataset: &Dataset) -> Result<Dataset> {
        Ok(dataset.split(
            self.config.calibration_fraction,
            derive_seed(self.seed, stream::SPLIT),
        )?)
    }

    fn world(&self) -> Result<World> {
        let d = self.split(&self.source.dataset(self.seed)?)?;
        Ok(World::new(d, self.config.grid()?, self.config.k)?)
    }

    fn context(&self, alpha: Option<f64>, target: String) -> RowContext {
        RowContext {
            experiment: self.config.experiment.name(),
            run: self.index,
            seed: self.seed,
            arm: Arm::Baseline,
            alpha,
            target,
            beta: None,
            gamma: None,
            k: self.config.k,
        }
    }

    /// Members for the `beta_ix`-th beta; identical across strategies.
    fn collective(
        &self,
        world: &World,
        beta_ix: usize,
        spec: StrategySpec,
    ) -> Result<Collective> {
        Ok(sample_collective(
            &world.cal_users,
            self.config.betas[beta_ix],
            spec,
            derive_seed(self.seed, stream::COLLECTIVE + beta_ix as u64),
        )?)
    }
}

impl Run<'_> {
    /// Members for the `beta_ix`-th beta.
    fn members(&self, world: &World, beta_ix: usize) -> Result<Vec<UserId>> {
        Ok(self
            .collective(world, beta_ix, StrategySpec::Random { gamma: 0.0 })?
            .members)
    }
}

/// Rate-based specs of the configured strategies, plus `Tag` once if
/// configured.
fn attack_specs(config: &ExperimentConfig, tag: GroupId) -> Result<Vec<StrategySpec>> {
    let mut out = Vec::new();
    for &s in &config.strategies {
        if s == riskctl_core::adversary::Strategy::Tag {
            out.push(StrategySpec::Tag { group: tag });
            continue;
        }
        for &g in &config.gammas {
            let spec = StrategySpec::with_rate(s, g)?;
            spec.validate(config.allow_large_gamma)?;
            out.push(spec);
        }
    }
    Ok(out)
}

/// The configured tag group, or the group with the most items (lowest id on
/// ties).
fn tag_group(config: &ExperimentConfig, dataset: &Dataset) -> GroupId {
    if let Some(g) = config.tag_group {
        return GroupId(g);
    }
    let mut counts = std::collections::BTreeMap::new();
    for it in dataset.items() {
        *counts.entry(it.group).or_insert(0usize) += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(g, _)| g)
        .unwrap_or(GroupId(0))
}

#[allow(clippy::too_many_arguments)]
/// Rows of a Theorem 1 check. The tolerance covers both the test sampling
/// error and the calibration sampling error that moves the threshold.
fn bound_rows(
    ctx: &RowContext,
    alpha: f64,
    k: usize,
    q: usize,
    r_adv: f64,
    observed: f64,
    se_test: f64,
    se_cal: f64,
) -> Result<Vec<ResultRow>> {
    let bound = theorem1_bound(alpha, k, q, r_adv)?;
    let se = (se_test * se_test + se_cal * se_cal).sqrt();
    let p = Population::NonAdversarial;
    Ok(vec![
        ctx.row("K", Population::Adversarial, k as f64),
        ctx.row("Q", Population::Calibration, q as f64),
        ctx.row("r_adv", Population::Adversarial, r_adv),
        ctx.row("bound", p, bound),
        ctx.row("observed_risk", p, observed),
        ctx.row("slack", p, bound - observed),
        ctx.row("se_test", p, se_test),
        ctx.row("se_calibration", Population::Calibration, se_cal),
        ctx.row("tolerance", p, 2.0 * se),
        ctx.row("bound_satisfied", p, f64::from(observed <= bound + 2.0 * se)),
    ])
}

/// Standard test-side rows for a population evaluation.
fn eval_rows(
    ctx: &RowContext,
    e: &riskctl_core::metrics::PopulationEval,
    lambda: f64,
) -> Vec<ResultRow> {
    let p = Population::NonAdversarial;
    vec![
        ctx.row("lambda_hat", Population::Calibration, lambda),
        ctx.row("test_risk", p, e.risk()),
        ctx.row("test_risk_se", p, e.risk_se()),
        ctx.row("ndcg", p, e.ndcg()),
        ctx.row("recall", p, e.recall()),
        ctx.row("repeated_fraction", p, e.repeated_fraction()),
        ctx.row("zero_positive_slates", p, e.zero_positive_slates() as f64),
    ]
}

fn run_one(run: &Run<'_>) -> Result<Vec<ResultRow>> {
    match run.config.experiment {
        ExperimentId::Rq1 => rq1::run(run),
        ExperimentId::Rq2 => rq2::run(run),
        ExperimentId::Rq3 => rq3::run(run),
        ExperimentId::Rq4 => rq4::run(run),
        ExperimentId::AppendixB => appendix_b::run(run),
        ExperimentId::Validity => validity::run(run),
    }
}

/// Runs every configured run and appends the aggregate rows.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultTable> {
    config.validate()?;
    let source = Source::new(config)?;
    let runs: Vec<Vec<ResultRow>> = (0..config.runs)
        .into_par_iter()
        .map(|index| {
            run_one(&Run {
                config,
                source: &source,
                index,
                seed: run_seed(config.seed, index),
            })
        })
        .collect::<Result<_>>()?;
    let mut table = ResultTable::default();
    for rows in runs {
        table.extend(rows);
    }
    let agg = table.aggregate(config.seed, config.bootstrap_level, config.bootstrap_resamples)?;
    table.extend(agg);
    Ok(table)
}

/// Mean of `members`' organic calibration risk at every grid point.
fn organic_member_curve(world: &World, members: &[UserId]) -> Result<Vec<f64>> {
    let profiles = world.member_profiles(members)?;
    Ok(riskctl_core::calibration::RiskCurve::from_profiles(&world.grid, &profiles)?
        .values()
        .to_vec())
}
