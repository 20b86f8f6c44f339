//! Adversarial collectives and the "Not Interested" reporting strategies.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::calibration::{RiskCurve, SlateProfile, ThresholdGrid};
use crate::dataset::{Dataset, FlagOracle, SlateLog};
use crate::ids::{GroupId, ItemId, UserId};
use crate::math::ceil_count;
use crate::recsys::{Recommender, SafePools};
use crate::stats::derive_seed;
use crate::{Error, Result};

/// Largest reporting rate accepted without an explicit override.
pub const MAX_GAMMA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Strategy {
    LowRisk,
    Likes,
    TopRanker,
    Tag,
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::LowRisk,
        Strategy::Likes,
        Strategy::TopRanker,
        Strategy::Tag,
        Strategy::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::LowRisk => "low_risk",
            Strategy::Likes => "likes",
            Strategy::TopRanker => "top_ranker",
            Strategy::Tag => "tag",
            Strategy::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A strategy with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StrategySpec {
    LowRisk { gamma: f64 },
    Likes { gamma: f64 },
    TopRanker { gamma: f64 },
    Tag { group: GroupId },
    Random { gamma: f64 },
}

impl StrategySpec {
    /// Rate-based spec for `strategy`; `Tag` is rejected here.
    pub fn with_rate(strategy: Strategy, gamma: f64) -> Result<Self> {
        Ok(match strategy {
            Strategy::LowRisk => Self::LowRisk { gamma },
            Strategy::Likes => Self::Likes { gamma },
            Strategy::TopRanker => Self::TopRanker { gamma },
            Strategy::Random => Self::Random { gamma },
            Strategy::Tag => {
                return Err(Error::Config("tag strategy takes a group, not a rate".into()))
            }
        })
    }

    pub fn strategy(&self) -> Strategy {
        match self {
            Self::LowRisk { .. } => Strategy::LowRisk,
            Self::Likes { .. } => Strategy::Likes,
            Self::TopRanker { .. } => Strategy::TopRanker,
            Self::Tag { .. } => Strategy::Tag,
            Self::Random { .. } => Strategy::Random,
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match *self {
            Self::LowRisk { gamma }
            | Self::Likes { gamma }
            | Self::TopRanker { gamma }
            | Self::Random { gamma } => Some(gamma),
            Self::Tag { .. } => None,
        }
    }

    pub fn target_group(&self) -> Option<GroupId> {
        match *self {
            Self::Tag { group } => Some(group),
            _ => None,
        }
    }

    /// Rates must lie in `[0, 1]`, and in `[0, MAX_GAMMA]` unless
    /// `allow_large_gamma`.
    pub fn validate(&self, allow_large_gamma: bool) -> Result<()> {
        if let Some(g) = self.gamma() {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::Config(format!("gamma {g} outside [0, 1]")));
            }
            if g > MAX_GAMMA && !allow_large_gamma {
                return Err(Error::Config(format!(
                    "gamma {g} exceeds {MAX_GAMMA}; pass the large-gamma override to allow it"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Collective {
    /// Ascending member ids.
    pub members: Vec<UserId>,
    pub beta: f64,
    pub spec: StrategySpec,
    /// Seed for the random strategy.
    pub seed: u64,
}

impl Collective {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, user: UserId) -> bool {
        self.members.binary_search(&user).is_ok()
    }
}

/// Collective size for `beta` out of `q` users.
pub fn collective_size(beta: f64, q: usize) -> usize {
    ceil_count(beta, q)
}

/// Uniformly samples `ceil(beta * Q)` members from the calibration users.
pub fn sample_collective(
    calibration_users: &[UserId],
    beta: f64,
    spec: StrategySpec,
    seed: u64,
) -> Result<Collective> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Config(format!("beta {beta} must lie in (0, 1)")));
    }
    let q = calibration_users.len();
    let k = collective_size(beta, q);
    if k >= q {
        return Err(Error::Config(format!(
            "beta {beta} gives {k} adversaries out of {q} calibration users; honest users must remain"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut members: Vec<UserId> = index::sample(&mut rng, q, k)
        .into_iter()
        .map(|ix| calibration_users[ix])
        .collect();
    members.sort_unstable();
    Ok(Collective {
        members,
        beta,
        spec,
        seed: derive_seed(seed, 1),
    })
}

/// Items each member reports, ascending by item id per member.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportSet {
    reports: BTreeMap<UserId, Vec<ItemId>>,
    strategy: Option<Strategy>,
}

impl ReportSet {
    pub fn new(strategy: Option<Strategy>) -> Self {
        Self {
            reports: BTreeMap::new(),
            strategy,
        }
    }

    /// Adds reports for `user`; duplicates collapse.
    pub fn insert(&mut self, user: UserId, items: impl IntoIterator<Item = ItemId>) {
        let v = self.reports.entry(user).or_default();
        v.extend(items);
        v.sort_unstable();
        v.dedup();
    }

    pub fn strategy(&self) -> Option<Strategy> {
        self.strategy
    }

    pub fn of(&self, user: UserId) -> &[ItemId] {
        self.reports.get(&user).map_or(&[], |v| v.as_slice())
    }

    pub fn contains(&self, user: UserId, item: ItemId) -> bool {
        self.reports
            .get(&user)
            .is_some_and(|v| v.binary_search(&item).is_ok())
    }

    /// All `(user, item)` pairs, ascending.
    pub fn pairs(&self) -> impl Iterator<Item = (UserId, ItemId)> + '_ {
        self.reports
            .iter()
            .flat_map(|(&u, v)| v.iter().map(move |&i| (u, i)))
    }

    pub fn len(&self) -> usize {
        self.reports.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Takes the first `n` items after sorting by `key` (ties by ascending id).
fn top_by<K: PartialOrd>(items: &mut [(ItemId, K)], n: usize) -> Vec<ItemId> {
    items.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    items.iter().take(n).map(|e| e.0).collect()
}

/// Items one member reports under `spec`.
pub fn member_reports(
    dataset: &Dataset,
    user: UserId,
    spec: &StrategySpec,
    seed: u64,
) -> Result<Vec<ItemId>> {
    let exposure = dataset.exposure_log(user)?;
    if exposure.is_empty() {
        return Err(Error::Validation(format!("adversary {user} has no exposure log")));
    }
    let n = spec.gamma().map(|g| ceil_count(g, exposure.len())).unwrap_or(0);
    let mut out = match *spec {
        StrategySpec::LowRisk { .. } => {
            let mut v = exposure
                .iter()
                .map(|&i| Ok((i, dataset.interaction(user, i)?.risk)))
                .collect::<Result<Vec<_>>>()?;
            top_by(&mut v, n)
        }
        StrategySpec::Likes { .. } => {
            let mut v = exposure
                .iter()
                .map(|&i| {
                    let item = dataset
                        .item(i)
                        .ok_or_else(|| Error::Validation(format!("unknown item {i}")))?;
                    Ok((i, core::cmp::Reverse(item.likes)))
                })
                .collect::<Result<Vec<_>>>()?;
            top_by(&mut v, n)
        }
        StrategySpec::TopRanker { .. } => {
            let mut v = exposure
                .iter()
                .map(|&i| Ok((i, -dataset.interaction(user, i)?.relevance)))
                .collect::<Result<Vec<_>>>()?;
            top_by(&mut v, n)
        }
        StrategySpec::Tag { group } => exposure
            .iter()
            .copied()
            .filter(|&i| dataset.item(i).is_some_and(|it| it.group == group))
            .collect(),
        StrategySpec::Random { .. } => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, user.0 as u64));
            index::sample(&mut rng, exposure.len(), n)
                .into_iter()
                .map(|ix| exposure[ix])
                .collect()
        }
    };
    out.sort_unstable();
    Ok(out)
}

/// Reports of every member of the collective.
pub fn select_reports(collective: &Collective, dataset: &Dataset) -> Result<ReportSet> {
    if let Some(g) = collective.spec.target_group() {
        if !dataset.groups().contains(&g) {
            return Err(Error::Config(format!("tag target group {g} not in catalog")));
        }
    }
    let mut set = ReportSet::new(Some(collective.spec.strategy()));
    for &u in &collective.members {
        set.insert(u, member_reports(dataset, u, &collective.spec, collective.seed)?);
    }
    Ok(set)
}

/// Organic flags plus injected reports. The dataset is only borrowed.
#[derive(Debug, Clone, Copy)]
pub struct FlagView<'a> {
    dataset: &'a Dataset,
    reports: &'a ReportSet,
}

impl FlagOracle for FlagView<'_> {
    fn is_flagged(&self, user: UserId, item: ItemId) -> bool {
        self.reports.contains(user, item) || self.dataset.organic_flag(user, item)
    }
}

impl<'a> FlagView<'a> {
    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    pub fn reports(&self) -> &'a ReportSet {
        self.reports
    }
}

/// Overlays `reports` on the organic flags. Every reported pair must be in
/// the reporter's exposure log.
pub fn inject_flags<'a>(dataset: &'a Dataset, reports: &'a ReportSet) -> Result<FlagView<'a>> {
    for (u, i) in reports.pairs() {
        if dataset.interaction(u, i).is_err() {
            return Err(Error::Validation(format!(
                "user {u} reported item {i} they were never shown"
            )));
        }
    }
    Ok(FlagView { dataset, reports })
}

fn member_profiles(
    collective: &Collective,
    dataset: &Dataset,
    oracle: &impl FlagOracle,
    k: usize,
    pools: &SafePools,
) -> Result<Vec<SlateProfile>> {
    if collective.is_empty() {
        return Err(Error::Validation("empty collective".into()));
    }
    let rec = Recommender::new(dataset, k)?;
    let mut out = Vec::new();
    for &u in &collective.members {
        let pool = pools.get(u)?;
        for s in dataset.slates_of(u)? {
            out.push(SlateProfile::from_log(&rec, s, oracle, pool));
        }
    }
    Ok(out)
}

/// Mean set risk of the members' calibration slates at `lambda`.
pub fn adversarial_calibration_risk(
    collective: &Collective,
    lambda: f64,
    dataset: &Dataset,
    oracle: &impl FlagOracle,
    k: usize,
    pools: &SafePools,
) -> Result<f64> {
    let profiles = member_profiles(collective, dataset, oracle, k, pools)?;
    let sum: f64 = profiles.iter().map(|p| p.risk_at(lambda)).sum();
    Ok(sum / profiles.len() as f64)
}

/// The members' risk over the whole grid. Not required to be monotone.
pub fn adversarial_risk_curve(
    collective: &Collective,
    grid: &ThresholdGrid,
    dataset: &Dataset,
    oracle: &impl FlagOracle,
    k: usize,
    pools: &SafePools,
) -> Result<RiskCurve> {
    let profiles = member_profiles(collective, dataset, oracle, k, pools)?;
    RiskCurve::from_profiles(grid, &profiles)
}

/// Report pairs relative to the distinct calibration `(user, item)` pairs.
pub fn reported_fraction(reports: &ReportSet, calibration_pairs: usize) -> f64 {
    if calibration_pairs == 0 {
        return 0.0;
    }
    reports.len() as f64 / calibration_pairs as f64
}

/// Distinct `(user, item)` pairs of `users`.
pub fn distinct_pairs(dataset: &Dataset, users: &[UserId]) -> Result<usize> {
    let mut n = 0;
    for &u in users {
        n += dataset.user_items(u)?.count();
    }
    Ok(n)
}

/// Audit row label.
pub fn describe(spec: &StrategySpec) -> String {
    match *spec {
        StrategySpec::Tag { group } => format!("tag(g={group})"),
        s => format!("{}(gamma={})", s.strategy(), s.gamma().unwrap_or(0.0)),
    }
}

/// Members' slates.
pub fn member_slates(collective: &Collective, dataset: &Dataset) -> Result<Vec<SlateLog>> {
    dataset.slates_of_users(&collective.members)
}
