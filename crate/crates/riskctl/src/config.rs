//! Experiment configuration: per-experiment defaults overridden by a TOML
//! file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use riskctl_core::adversary::Strategy;
use riskctl_core::calibration::ThresholdGrid;
use riskctl_core::dataset::SynthConfig;
use riskctl_core::metrics::ExposureMode;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    Rq1,
    Rq2,
    Rq3,
    Rq4,
    AppendixB,
    Validity,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [
        ExperimentId::Rq1,
        ExperimentId::Rq2,
        ExperimentId::Rq3,
        ExperimentId::Rq4,
        ExperimentId::AppendixB,
        ExperimentId::Validity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::Rq1 => "rq1",
            ExperimentId::Rq2 => "rq2",
            ExperimentId::Rq3 => "rq3",
            ExperimentId::Rq4 => "rq4",
            ExperimentId::AppendixB => "appendix_b",
            ExperimentId::Validity => "validity",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentId {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "unknown experiment {s:?}; expected one of rq1, rq2, rq3, rq4, appendix_b, validity"
                ))
            })
    }
}

/// Where the interaction data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Fresh synthetic data for every run.
    Synthetic(SynthConfig),
    /// Fixed files; runs differ only in the split and the collectives.
    Files {
        interactions: PathBuf,
        items: PathBuf,
    },
}

/// How the global risk target is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RiskTarget {
    /// A fixed alpha.
    Alpha(f64),
    /// `alpha = (1 - reduction) * R(0)` on each run's organic calibration
    /// curve.
    Reduction(f64),
}

impl RiskTarget {
    pub fn resolve(self, baseline: f64) -> f64 {
        match self {
            RiskTarget::Alpha(a) => a,
            RiskTarget::Reduction(r) => (1.0 - r) * baseline,
        }
    }

    pub fn label(self) -> String {
        match self {
            RiskTarget::Alpha(a) => format!("alpha={a}"),
            RiskTarget::Reduction(r) => format!("reduction={r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub data: DataSource,
    /// Risk targets swept by the experiment.
    pub targets: Vec<RiskTarget>,
    pub k: usize,
    pub betas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub strategies: Vec<Strategy>,
    pub runs: usize,
    pub seed: u64,
    pub calibration_fraction: f64,
    pub grid_points: usize,
    pub grid_max: f64,
    pub allow_large_gamma: bool,
    pub bootstrap_resamples: usize,
    pub bootstrap_level: f64,
    pub exposure_mode: ExposureMode,
    /// Tag target; defaults to the group with the most calibration
    /// exposures.
    pub tag_group: Option<u32>,
    /// Per-user calibration events of each test user (rq4).
    pub user_calibration_slates: usize,
    /// Groups compared in appendix_b.
    pub compared_groups: (u32, u32),
    /// Betas of the flag-everything arm in rq2.
    pub corollary_betas: Vec<f64>,
}

/// Everything in [`ExperimentConfig`] as optional overrides.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Overrides {
    data: Option<DataSource>,
    targets: Option<Vec<RiskTarget>>,
    k: Option<usize>,
    betas: Option<Vec<f64>>,
    gammas: Option<Vec<f64>>,
    strategies: Option<Vec<Strategy>>,
    runs: Option<usize>,
    seed: Option<u64>,
    calibration_fraction: Option<f64>,
    grid_points: Option<usize>,
    grid_max: Option<f64>,
    allow_large_gamma: Option<bool>,
    bootstrap_resamples: Option<usize>,
    bootstrap_level: Option<f64>,
    exposure_mode: Option<ExposureMode>,
    tag_group: Option<u32>,
    user_calibration_slates: Option<usize>,
    compared_groups: Option<(u32, u32)>,
    corollary_betas: Option<Vec<f64>>,
}

const ALL_STRATEGIES: [Strategy; 5] = Strategy::ALL;

impl ExperimentConfig {
    /// Defaults for each experiment.
    pub fn defaults(id: ExperimentId) -> Self {
        let base = Self {
            experiment: id,
            data: DataSource::Synthetic(SynthConfig::default()),
            targets: vec![RiskTarget::Reduction(0.25)],
            k: 20,
            betas: vec![0.001, 0.005, 0.01, 0.02, 0.05, 0.1],
            gammas: vec![0.001, 0.01, 0.1],
            strategies: ALL_STRATEGIES.to_vec(),
            runs: 10,
            seed: 0,
            calibration_fraction: 0.5,
            grid_points: 1001,
            grid_max: 1.001,
            allow_large_gamma: false,
            bootstrap_resamples: 1000,
            bootstrap_level: 0.95,
            exposure_mode: ExposureMode::PerItem,
            tag_group: None,
            user_calibration_slates: 0,
            compared_groups: (0, 1),
            corollary_betas: vec![],
        };
        match id {
            ExperimentId::Rq1 => Self {
                betas: vec![0.01],
                ..base
            },
            ExperimentId::Rq2 => Self {
                corollary_betas: vec![0.01, 0.02],
                ..base
            },
            ExperimentId::Rq3 => Self {
                data: DataSource::Synthetic(SynthConfig {
                    group_bias: 0.0,
                    ..SynthConfig::default()
                }),
                betas: vec![0.001, 0.005, 0.01],
                gammas: vec![],
                strategies: vec![Strategy::Tag, Strategy::Random],
                allow_large_gamma: true,
                ..base
            },
            ExperimentId::Rq4 => Self {
                data: DataSource::Synthetic(rq4_data()),
                betas: vec![0.01],
                targets: vec![RiskTarget::Reduction(0.5)],
                strategies: vec![Strategy::LowRisk],
                user_calibration_slates: RQ4_USER_SLATES,
                ..base
            },
            ExperimentId::AppendixB => Self {
                data: DataSource::Synthetic(SynthConfig {
                    group_bias: 0.3,
                    groups: 2,
                    group_skew: 0.0,
                    ..SynthConfig::default()
                }),
                targets: [0.1, 0.25, 0.5, 0.75]
                    .into_iter()
                    .map(RiskTarget::Reduction)
                    .collect(),
                betas: vec![],
                gammas: vec![],
                strategies: vec![],
                ..base
            },
            ExperimentId::Validity => Self {
                data: DataSource::Synthetic(validity_data()),
                targets: [0.05, 0.1, 0.2].into_iter().map(RiskTarget::Alpha).collect(),
                betas: vec![],
                gammas: vec![],
                strategies: vec![],
                runs: 100,
                ..base
            },
        }
    }

    /// Defaults for `id` overridden by the TOML text.
    pub fn from_toml(id: ExperimentId, text: &str, path: &Path) -> Result<Self> {
        let o: Overrides = toml::from_str(text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut c = Self::defaults(id);
        macro_rules! apply {
            ($($f:ident),*) => { $( if let Some(v) = o.$f { c.$f = v; } )* };
        }
        apply!(
            data, targets, k, betas, gammas, strategies, runs, seed, calibration_fraction,
            grid_points, grid_max, allow_large_gamma, bootstrap_resamples, bootstrap_level,
            exposure_mode, user_calibration_slates, compared_groups, corollary_betas
        );
        if o.tag_group.is_some() {
            c.tag_group = o.tag_group;
        }
        c.validate().map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(c)
    }

    pub fn load(id: ExperimentId, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(id, &text, path)
    }

    pub fn grid(&self) -> Result<ThresholdGrid> {
        Ok(ThresholdGrid::uniform(self.grid_points, self.grid_max)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Usage(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0) {
            return bad(format!(
                "calibration_fraction {} must lie in (0, 1)",
                self.calibration_fraction
            ));
        }
        for t in &self.targets {
            match *t {
                RiskTarget::Alpha(a) if !(a > 0.0 && a <= 1.0) => {
                    return bad(format!("alpha {a} must lie in (0, 1]"))
                }
                RiskTarget::Reduction(r) if !(0.0..1.0).contains(&r) => {
                    return bad(format!("reduction {r} must lie in [0, 1)"))
                }
                _ => {}
            }
        }
        for &b in self.betas.iter().chain(&self.corollary_betas) {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("beta {b} must lie in (0, 1)"));
            }
        }
        for &g in &self.gammas {
            riskctl_core::adversary::StrategySpec::LowRisk { gamma: g }
                .validate(self.allow_large_gamma)?;
        }
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        self.grid()?;
        Ok(())
    }
}

/// Exchangeable data with a binding flag rate for the validity check.
pub fn validity_data() -> SynthConfig {
    SynthConfig {
        flag_rate: 0.25,
        user_heterogeneity: 0.5,
        ..SynthConfig::default()
    }
}

/// Long histories so that per-user calibration is feasible at a small
/// alpha, strongly heterogeneous users, and a risk predictor that does not
/// see the user effect. Each user sees every item at most once, hence the
/// catalog size.
pub fn rq4_data() -> SynthConfig {
    SynthConfig {
        users: 200,
        items: 21_100,
        slates_per_user: RQ4_USER_SLATES + 30,
        flag_rate: 0.006,
        user_heterogeneity: 3.5,
        risk_noise: 1.5,
        risk_user_weight: 0.0,
        ..SynthConfig::default()
    }
}

const RQ4_USER_SLATES: usize = 1000;
