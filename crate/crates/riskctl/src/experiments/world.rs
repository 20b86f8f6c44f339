//! One simulated run: a split dataset with everything precomputed that the
//! experiment arms share.

use std::collections::BTreeMap;
use std::ops::Range;

use riskctl_core::adversary::{
    distinct_pairs, inject_flags, select_reports, Collective, ReportSet,
};
use riskctl_core::calibration::{calibrate_global, RiskCurve, SlateProfile, Threshold, ThresholdGrid};
use riskctl_core::dataset::{Dataset, SlateLog};
use riskctl_core::metrics::{PopulationEval, PreparedPopulation};
use riskctl_core::recsys::{Recommender, SafePool, SafePools};
use riskctl_core::stats::clustered_std_error;
use riskctl_core::{Result, UserId};

pub struct World {
    pub dataset: Dataset,
    pub grid: ThresholdGrid,
    pub k: usize,
    pub cal_users: Vec<UserId>,
    pub test_users: Vec<UserId>,
    pub cal_slates: Vec<SlateLog>,
    cal_index: BTreeMap<UserId, Range<usize>>,
    pub organic_pools: SafePools,
    pub organic_profiles: Vec<SlateProfile>,
    pub test: PreparedPopulation,
    /// Distinct calibration `(user, item)` pairs.
    pub cal_pairs: usize,
}

impl World {
    /// `dataset` must already be split.
    pub fn new(dataset: Dataset, grid: ThresholdGrid, k: usize) -> Result<Self> {
        let cal_users = dataset.calibration_users();
        let test_users = dataset.test_users();
        Self::with_test_slates(dataset, grid, k, cal_users, test_users, None)
    }

    /// Like [`World::new`], but test users are evaluated only on the events
    /// in `test_slates` when given.
    pub fn with_test_slates(
        dataset: Dataset,
        grid: ThresholdGrid,
        k: usize,
        cal_users: Vec<UserId>,
        test_users: Vec<UserId>,
        test_slates: Option<Vec<SlateLog>>,
    ) -> Result<Self> {
        let all: Vec<UserId> = dataset.users().iter().map(|u| u.id).collect();
        let organic_pools = SafePools::build(&dataset, &all, &dataset)?;
        let mut cal_slates = Vec::new();
        let mut cal_index = BTreeMap::new();
        for &u in &cal_users {
            let start = cal_slates.len();
            cal_slates.extend_from_slice(dataset.slates_of(u)?);
            cal_index.insert(u, start..cal_slates.len());
        }
        let rec = Recommender::new(&dataset, k)?;
        let organic_profiles = cal_slates
            .iter()
            .map(|s| Ok(SlateProfile::from_log(&rec, s, &dataset, organic_pools.get(s.user)?)))
            .collect::<Result<Vec<_>>>()?;
        let test_slates = match test_slates {
            Some(s) => s,
            None => dataset.slates_of_users(&test_users)?,
        };
        let test = PreparedPopulation::prepare(&dataset, &test_slates, k, &organic_pools)?;
        let cal_pairs = distinct_pairs(&dataset, &cal_users)?;
        Ok(Self {
            dataset,
            grid,
            k,
            cal_users,
            test_users,
            cal_slates,
            cal_index,
            organic_pools,
            organic_profiles,
            test,
            cal_pairs,
        })
    }

    /// Number of calibration events `Q`.
    pub fn samples(&self) -> usize {
        self.cal_slates.len()
    }

    pub fn organic_curve(&self) -> Result<RiskCurve> {
        let c = RiskCurve::from_profiles(&self.grid, &self.organic_profiles)?;
        c.check_monotone()?;
        Ok(c)
    }

    /// Honest test outcome at a global threshold.
    pub fn evaluate(&self, lambda: f64) -> PopulationEval {
        self.test.evaluate(|_| lambda)
    }

    /// User-clustered standard error of the mean organic set risk at
    /// `lambda` over the calibration events of users outside `members`.
    pub fn honest_calibration_se(&self, members: &[UserId], lambda: f64) -> f64 {
        let (risks, users): (Vec<f64>, Vec<UserId>) = self
            .cal_index
            .iter()
            .filter(|(u, _)| members.binary_search(u).is_err())
            .flat_map(|(u, r)| r.clone().map(move |ix| (ix, *u)))
            .map(|(ix, u)| (self.organic_profiles[ix].risk_at(lambda), u))
            .unzip();
        clustered_std_error(&risks, &users).unwrap_or(f64::NAN)
    }

    /// Organic calibration profiles of `members`' events.
    pub fn member_profiles(&self, members: &[UserId]) -> Result<Vec<SlateProfile>> {
        let mut out = Vec::new();
        for m in members {
            let range = self.cal_index.get(m).cloned().ok_or_else(|| {
                riskctl_core::Error::Validation(format!("{m} is not a calibration user"))
            })?;
            out.extend(range.map(|ix| self.organic_profiles[ix].clone()));
        }
        Ok(out)
    }

    /// Calibration under the collective's injected reports.
    pub fn attack(&self, collective: &Collective) -> Result<Attack> {
        let reports = select_reports(collective, &self.dataset)?;
        let view = inject_flags(&self.dataset, &reports)?;
        let rec = Recommender::new(&self.dataset, self.k)?;
        let mut replaced: BTreeMap<usize, SlateProfile> = BTreeMap::new();
        let mut member_ix = Vec::new();
        for &m in &collective.members {
            let pool = SafePool::for_user(&self.dataset, m, &view)?;
            let range = self.cal_index.get(&m).cloned().ok_or(riskctl_core::Error::Validation(
                format!("collective member {m} is not a calibration user"),
            ))?;
            for ix in range {
                replaced.insert(ix, SlateProfile::from_log(&rec, &self.cal_slates[ix], &view, &pool));
                member_ix.push(ix);
            }
        }
        let curve = RiskCurve::from_profiles(
            &self.grid,
            self.organic_profiles
                .iter()
                .enumerate()
                .map(|(ix, p)| replaced.get(&ix).unwrap_or(p)),
        )?;
        curve.check_monotone()?;
        let member_profiles = member_ix.iter().map(|ix| replaced[ix].clone()).collect();
        Ok(Attack {
            reports,
            curve,
            member_profiles,
            members: collective.members.len(),
        })
    }
}

/// Calibration state after an attack.
pub struct Attack {
    pub reports: ReportSet,
    pub curve: RiskCurve,
    pub member_profiles: Vec<SlateProfile>,
    pub members: usize,
}

impl Attack {
    /// Mean set risk of the members' calibration events at `lambda`.
    pub fn r_adv(&self, lambda: f64) -> f64 {
        let s: f64 = self.member_profiles.iter().map(|p| p.risk_at(lambda)).sum();
        s / self.member_profiles.len() as f64
    }

    /// Members' risk curve (not required to be monotone).
    pub fn member_curve(&self, grid: &ThresholdGrid) -> Result<RiskCurve> {
        RiskCurve::from_profiles(grid, &self.member_profiles)
    }

    pub fn calibrate(&self, alpha: f64) -> Result<Threshold> {
        calibrate_global(&self.curve, alpha)
    }

    /// Number of member calibration events `K`.
    pub fn member_samples(&self) -> usize {
        self.member_profiles.len()
    }
}
