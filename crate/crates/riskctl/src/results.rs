//! Long-format result rows and their CSV form.

use std::collections::BTreeMap;
use std::path::Path;

use riskctl_core::adversary::Strategy;
use riskctl_core::stats::{bootstrap_ci, derive_seed, mean};

use crate::error::{CliError, Result};
use crate::io::write_atomic;

pub const RESULTS_HEADER: [&str; 11] = [
    "experiment",
    "run",
    "seed",
    "strategy",
    "alpha",
    "beta",
    "gamma",
    "k",
    "metric",
    "population",
    "value",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Population {
    All,
    NonAdversarial,
    Adversarial,
    Calibration,
    Group(u32),
}

impl Population {
    pub fn label(self) -> String {
        match self {
            Population::All => "all".into(),
            Population::NonAdversarial => "non_adversarial".into(),
            Population::Adversarial => "adversarial".into(),
            Population::Calibration => "calibration".into(),
            Population::Group(g) => format!("group_{g}"),
        }
    }
}

/// Which arm a row belongs to: an adversary strategy or the no-attack
/// baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Arm {
    Baseline,
    Attack(Strategy),
}

impl Arm {
    pub fn label(self) -> &'static str {
        match self {
            Arm::Baseline => "none",
            Arm::Attack(s) => s.name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: &'static str,
    pub run: usize,
    pub seed: u64,
    pub arm: Arm,
    pub alpha: Option<f64>,
    /// Configured target the alpha was derived from; rows of different runs
    /// with the same target aggregate together.
    pub target: String,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub k: usize,
    pub metric: String,
    pub population: Population,
    pub value: f64,
}

/// Shared columns of a block of rows.
#[derive(Debug, Clone)]
pub struct RowContext {
    pub experiment: &'static str,
    pub run: usize,
    pub seed: u64,
    pub arm: Arm,
    pub alpha: Option<f64>,
    pub target: String,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub k: usize,
}

impl RowContext {
    pub fn row(&self, metric: impl Into<String>, population: Population, value: f64) -> ResultRow {
        ResultRow {
            experiment: self.experiment,
            run: self.run,
            seed: self.seed,
            arm: self.arm,
            alpha: self.alpha,
            target: self.target.clone(),
            beta: self.beta,
            gamma: self.gamma,
            k: self.k,
            metric: metric.into(),
            population,
            value,
        }
    }

    pub fn with_arm(&self, arm: Arm, beta: Option<f64>, gamma: Option<f64>) -> Self {
        Self {
            arm,
            beta,
            gamma,
            ..self.clone()
        }
    }
}

/// Metric name of a curve point.
pub fn curve_metric(name: &str, lambda: f64) -> String {
    format!("{name}@{lambda}")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

type GroupKey = (Arm, String, Option<u64>, Option<u64>, usize, String, Population);
/// Values, alphas and the first row of one group.
type Group<'a> = (Vec<f64>, Vec<Option<f64>>, &'a ResultRow);

/// Rows of one experiment, in emission order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn extend(&mut self, rows: impl IntoIterator<Item = ResultRow>) {
        self.rows.extend(rows);
    }

    /// Run-level values of one metric, in run order.
    pub fn values(&self, filter: impl Fn(&ResultRow) -> bool) -> Vec<f64> {
        self.rows.iter().filter(|r| filter(r)).map(|r| r.value).collect()
    }

    /// Mean and percentile-bootstrap CI over runs for every group of rows
    /// that share all columns except run, seed and value. The alpha column of
    /// an aggregate is the mean alpha of its runs.
    pub fn aggregate(&self, master_seed: u64, level: f64, resamples: usize) -> Result<Vec<ResultRow>> {
        let mut groups: BTreeMap<GroupKey, Group<'_>> = BTreeMap::new();
        for r in &self.rows {
            let key = (
                r.arm,
                r.target.clone(),
                r.beta.map(f64::to_bits),
                r.gamma.map(f64::to_bits),
                r.k,
                r.metric.clone(),
                r.population,
            );
            let e = groups.entry(key).or_insert_with(|| (Vec::new(), Vec::new(), r));
            e.0.push(r.value);
            e.1.push(r.alpha);
        }
        let mut out = Vec::new();
        for (ix, (_, (values, alphas, first))) in groups.into_iter().enumerate() {
            // Runs of a reduction target each resolve their own alpha; the
            // aggregate carries their mean.
            let alpha = if alphas.windows(2).all(|w| w[0] == w[1]) {
                alphas[0]
            } else {
                alphas.iter().copied().collect::<Option<Vec<f64>>>().map(|a| mean(&a))
            };
            let base = ResultRow {
                run: usize::MAX,
                seed: master_seed,
                alpha,
                ..first.clone()
            };
            let metric = |suffix: &str, value: f64| ResultRow {
                metric: format!("{}_{suffix}", first.metric),
                value,
                ..base.clone()
            };
            if values.len() >= 2 {
                let ci = bootstrap_ci(&values, level, resamples, derive_seed(master_seed, ix as u64))?;
                out.push(metric("mean", ci.point));
                out.push(metric("ci_lower", ci.lower));
                out.push(metric("ci_upper", ci.upper));
            } else {
                out.push(metric("mean", mean(&values)));
            }
        }
        Ok(out)
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(RESULTS_HEADER).expect("in-memory write");
        for r in &self.rows {
            let run = if r.run == usize::MAX {
                "all".to_string()
            } else {
                r.run.to_string()
            };
            w.write_record([
                r.experiment.to_string(),
                run,
                r.seed.to_string(),
                r.arm.label().to_string(),
                opt(r.alpha),
                opt(r.beta),
                opt(r.gamma),
                r.k.to_string(),
                r.metric.clone(),
                r.population.label(),
                r.value.to_string(),
            ])
            .expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(r) = self.rows.iter().find(|r| !r.value.is_finite()) {
            return Err(CliError::Runtime(format!(
                "non-finite value for metric {} in run {}",
                r.metric, r.run
            )));
        }
        write_atomic(path, &self.to_csv())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(run: usize) -> RowContext {
        RowContext {
            experiment: "rq2",
            run,
            seed: 10 + run as u64,
            arm: Arm::Attack(Strategy::LowRisk),
            alpha: Some(0.1),
            target: "alpha=0.1".into(),
            beta: Some(0.01),
            gamma: None,
            k: 20,
        }
    }

    #[test]
    fn csv_layout() {
        let t = ResultTable {
            rows: vec![ctx(0).row("ndcg", Population::NonAdversarial, 0.5)],
        };
        let text = String::from_utf8(t.to_csv()).unwrap();
        assert_eq!(
            text,
            "experiment,run,seed,strategy,alpha,beta,gamma,k,metric,population,value\n\
             rq2,0,10,low_risk,0.1,0.01,,20,ndcg,non_adversarial,0.5\n"
        );
    }

    #[test]
    fn aggregation_rows() {
        let mut t = ResultTable::default();
        for run in 0..4 {
            t.extend([ctx(run).row("ndcg", Population::All, run as f64)]);
        }
        t.extend([ctx(0).row("recall", Population::All, 0.25)]);
        let agg = t.aggregate(3, 0.95, 200).unwrap();
        let names: Vec<&str> = agg.iter().map(|r| r.metric.as_str()).collect();
        assert_eq!(names, ["ndcg_mean", "ndcg_ci_lower", "ndcg_ci_upper", "recall_mean"]);
        assert_eq!(agg[0].value, 1.5);
        assert!(agg[1].value <= 1.5 && agg[2].value >= 1.5);
        assert!(agg.iter().all(|r| r.run == usize::MAX));
    }
}
