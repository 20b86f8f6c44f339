//! Ranking quality, exposure and risk metrics over served slates.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::dataset::{Dataset, SlateLog};
use crate::ids::{GroupId, ItemId, UserId};
use crate::recsys::{passes_filter, Candidate, Provenance, Recommender, SafePools, Slate};
use crate::stats;
use crate::{Error, Result};

/// Binary relevance labels: the set of positive items.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelevanceLabels(Vec<ItemId>);

impl FromIterator<ItemId> for RelevanceLabels {
    fn from_iter<T: IntoIterator<Item = ItemId>>(iter: T) -> Self {
        let mut v: Vec<ItemId> = iter.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Self(v)
    }
}

impl RelevanceLabels {
    /// Items of the logged event that the user did not flag.
    pub fn of_slate(dataset: &Dataset, slate: &SlateLog) -> Self {
        dataset
            .rows(slate)
            .iter()
            .filter(|it| !dataset.organic_flag(it.user, it.item))
            .map(|it| it.item)
            .collect()
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.0.binary_search(&item).is_ok()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn discount(position: usize) -> f64 {
    1.0 / libm::log2(position as f64 + 1.0)
}

/// nDCG@k with `log2(position + 1)` discount; 0 without positives.
pub fn ndcg_at_k(items: &[ItemId], labels: &RelevanceLabels, k: usize) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let dcg: f64 = items
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| labels.contains(**i))
        .map(|(p, _)| discount(p + 1))
        .sum();
    let idcg: f64 = (1..=k.min(labels.len())).map(discount).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Share of positives found in the top `k`; 0 without positives.
pub fn recall_at_k(items: &[ItemId], labels: &RelevanceLabels, k: usize) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = items.iter().take(k).filter(|i| labels.contains(**i)).count();
    hits as f64 / labels.len() as f64
}

/// `(baseline - attacked) / beta`.
pub fn reduction(baseline: f64, attacked: f64, beta: f64) -> Result<f64> {
    if beta.is_nan() || beta <= 0.0 {
        return Err(Error::Config(format!("reduction needs beta > 0, got {beta}")));
    }
    Ok((baseline - attacked) / beta)
}

/// Share of repeated-safe positions over all served positions.
pub fn repeated_fraction<'a>(slates: impl IntoIterator<Item = &'a Slate>) -> f64 {
    let (mut rep, mut all) = (0usize, 0usize);
    for s in slates {
        rep += s.repeated_count();
        all += s.len();
    }
    if all == 0 {
        0.0
    } else {
        rep as f64 / all as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ExposureMode {
    /// Per-item exposure rate, averaged over the group's items.
    #[default]
    PerItem,
    /// Shown count over opportunity count, pooled over the group.
    Pooled,
}

/// Opportunities (item in the event's candidate pool) and appearances.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExposureTally {
    counts: BTreeMap<ItemId, (u64, u64)>,
}

impl ExposureTally {
    /// Records one served event: every pool item had an opportunity.
    pub fn record(&mut self, pool: impl IntoIterator<Item = ItemId>, served: &Slate) {
        for i in pool {
            let e = self.counts.entry(i).or_insert((0, 0));
            e.0 += 1;
            if served.contains(i) {
                e.1 += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &ExposureTally) {
        for (&i, &(o, s)) in &other.counts {
            let e = self.counts.entry(i).or_insert((0, 0));
            e.0 += o;
            e.1 += s;
        }
    }

    /// `(opportunities, shown)` for one item.
    pub fn item(&self, item: ItemId) -> (u64, u64) {
        self.counts.get(&item).copied().unwrap_or((0, 0))
    }

    /// Exposure of `group`; `None` when its items had no opportunity.
    pub fn group_exposure(&self, dataset: &Dataset, group: GroupId, mode: ExposureMode) -> Option<f64> {
        let mut n = 0usize;
        let mut rate_sum = 0.0;
        let (mut opp, mut shown) = (0u64, 0u64);
        for it in dataset.items().iter().filter(|it| it.group == group) {
            let (o, s) = self.item(it.id);
            if o == 0 {
                continue;
            }
            n += 1;
            rate_sum += s as f64 / o as f64;
            opp += o;
            shown += s;
        }
        if n == 0 {
            return None;
        }
        Some(match mode {
            ExposureMode::PerItem => rate_sum / n as f64,
            ExposureMode::Pooled => shown as f64 / opp as f64,
        })
    }
}

/// Exposure of `group` over `slates`, each paired with its candidate pool.
pub fn group_exposure<'a>(
    dataset: &Dataset,
    group: GroupId,
    served: impl IntoIterator<Item = (&'a [ItemId], &'a Slate)>,
    mode: ExposureMode,
) -> Option<f64> {
    let mut t = ExposureTally::default();
    for (pool, slate) in served {
        t.record(pool.iter().copied(), slate);
    }
    t.group_exposure(dataset, group, mode)
}

/// Outcome of serving one logged event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlateOutcome {
    pub user: UserId,
    pub lambda: f64,
    pub risk: f64,
    pub ndcg: f64,
    pub recall: f64,
    pub len: usize,
    pub repeated: usize,
    pub positives: usize,
}

/// Test-time results for a population of events.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationEval {
    pub outcomes: Vec<SlateOutcome>,
    pub exposure: ExposureTally,
}

impl PopulationEval {
    pub fn slates(&self) -> usize {
        self.outcomes.len()
    }

    fn column(&self, f: impl Fn(&SlateOutcome) -> f64) -> Vec<f64> {
        self.outcomes.iter().map(f).collect()
    }

    /// Mean set risk under organic flags.
    pub fn risk(&self) -> f64 {
        stats::mean(&self.column(|o| o.risk))
    }

    /// Monte-Carlo standard error of [`PopulationEval::risk`], clustered by
    /// user.
    pub fn risk_se(&self) -> f64 {
        let users: Vec<UserId> = self.outcomes.iter().map(|o| o.user).collect();
        stats::clustered_std_error(&self.column(|o| o.risk), &users).unwrap_or(f64::NAN)
    }

    pub fn ndcg(&self) -> f64 {
        stats::mean(&self.column(|o| o.ndcg))
    }

    pub fn recall(&self) -> f64 {
        stats::mean(&self.column(|o| o.recall))
    }

    pub fn repeated_fraction(&self) -> f64 {
        let all: usize = self.outcomes.iter().map(|o| o.len).sum();
        let rep: usize = self.outcomes.iter().map(|o| o.repeated).sum();
        if all == 0 {
            0.0
        } else {
            rep as f64 / all as f64
        }
    }

    /// Events whose log has no positives; they score 0 on nDCG and Recall.
    pub fn zero_positive_slates(&self) -> usize {
        self.outcomes.iter().filter(|o| o.positives == 0).count()
    }

    /// Mean set risk per user, ascending by user id.
    pub fn risk_by_user(&self) -> Vec<(UserId, f64, usize)> {
        let mut acc: BTreeMap<UserId, (f64, usize)> = BTreeMap::new();
        for o in &self.outcomes {
            let e = acc.entry(o.user).or_insert((0.0, 0));
            e.0 += o.risk;
            e.1 += 1;
        }
        acc.into_iter()
            .map(|(u, (s, n))| (u, s / n as f64, n))
            .collect()
    }
}

/// One test event with everything needed to serve it at any threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedEvent {
    pub user: UserId,
    /// Shown positions in rank order: `(candidate, organically flagged)`.
    shown: Vec<(Candidate, bool)>,
    /// Replacement items in use order, with their organic flag.
    refills: Vec<(ItemId, bool)>,
    /// Every logged item of the event.
    pool: Vec<ItemId>,
    labels: RelevanceLabels,
}

impl PreparedEvent {
    pub fn prepare(rec: &Recommender<'_>, log: &SlateLog, pools: &SafePools) -> Result<Self> {
        let dataset = rec.dataset();
        let ranked = rec.slate_pool(log);
        let slots = rec.k().min(ranked.len());
        let safe = pools.get(log.user)?;
        let user = log.user;
        Ok(Self {
            user,
            shown: ranked[..slots]
                .iter()
                .map(|c| (*c, dataset.organic_flag(user, c.item)))
                .collect(),
            refills: safe
                .available_for(&ranked)
                .take(slots)
                .map(|i| (i, dataset.organic_flag(user, i)))
                .collect(),
            pool: ranked.iter().map(|c| c.item).collect(),
            labels: RelevanceLabels::of_slate(dataset, log),
        })
    }

    /// The served slate; identical to [`Recommender::recommend_slate`].
    pub fn serve(&self, lambda: f64) -> Slate {
        let mut entries: Vec<(ItemId, Provenance)> = self
            .shown
            .iter()
            .filter(|(c, _)| passes_filter(c.risk, lambda))
            .map(|(c, _)| (c.item, Provenance::Fresh))
            .collect();
        let missing = self.shown.len() - entries.len();
        entries.extend(
            self.refills
                .iter()
                .take(missing)
                .map(|(i, _)| (*i, Provenance::RepeatedSafe)),
        );
        Slate::new(self.user, lambda, entries)
    }

    fn outcome(&self, lambda: f64, k: usize, exposure: &mut ExposureTally) -> SlateOutcome {
        let slate = self.serve(lambda);
        let fresh_flags = self
            .shown
            .iter()
            .filter(|(c, h)| *h && passes_filter(c.risk, lambda))
            .count();
        let refill_flags = self
            .refills
            .iter()
            .take(slate.repeated_count())
            .filter(|(_, h)| *h)
            .count();
        let risk = if slate.is_empty() {
            0.0
        } else {
            (fresh_flags + refill_flags) as f64 / slate.len() as f64
        };
        let items: Vec<ItemId> = slate.items().collect();
        exposure.record(self.pool.iter().copied(), &slate);
        SlateOutcome {
            user: self.user,
            lambda,
            risk,
            ndcg: ndcg_at_k(&items, &self.labels, k),
            recall: recall_at_k(&items, &self.labels, k),
            len: slate.len(),
            repeated: slate.repeated_count(),
            positives: self.labels.len(),
        }
    }
}

/// Test events prepared once and evaluated at many thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPopulation {
    events: Vec<PreparedEvent>,
    k: usize,
}

impl PreparedPopulation {
    pub fn prepare(dataset: &Dataset, slates: &[SlateLog], k: usize, pools: &SafePools) -> Result<Self> {
        let rec = Recommender::new(dataset, k)?;
        let events = slates
            .iter()
            .map(|s| PreparedEvent::prepare(&rec, s, pools))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { events, k })
    }

    pub fn events(&self) -> &[PreparedEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Serves every event at the threshold chosen for its user.
    pub fn evaluate(&self, lambda_of: impl Fn(UserId) -> f64) -> PopulationEval {
        let mut exposure = ExposureTally::default();
        let outcomes = self
            .events
            .iter()
            .map(|e| e.outcome(lambda_of(e.user), self.k, &mut exposure))
            .collect();
        PopulationEval { outcomes, exposure }
    }
}

/// Serves every event in `slates` at the threshold chosen for its user and
/// scores it against organic flags.
pub fn evaluate_population(
    dataset: &Dataset,
    slates: &[SlateLog],
    k: usize,
    pools: &SafePools,
    lambda_of: impl Fn(UserId) -> f64,
) -> Result<PopulationEval> {
    Ok(PreparedPopulation::prepare(dataset, slates, k, pools)?.evaluate(lambda_of))
}

/// Mean organic set risk of `slates` served at `lambda`.
pub fn expected_test_risk(
    dataset: &Dataset,
    slates: &[SlateLog],
    lambda: f64,
    k: usize,
    pools: &SafePools,
) -> Result<f64> {
    if slates.is_empty() {
        return Err(Error::Validation("expected risk over an empty population".into()));
    }
    Ok(evaluate_population(dataset, slates, k, pools, |_| lambda)?.risk())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u32]) -> Vec<ItemId> {
        v.iter().map(|&i| ItemId(i)).collect()
    }

    fn labels(v: &[u32]) -> RelevanceLabels {
        ids(v).into_iter().collect()
    }

    #[test]
    fn ndcg_cases() {
        assert_eq!(ndcg_at_k(&ids(&[1, 2, 3]), &labels(&[1, 2, 3]), 3), 1.0);
        let v = ndcg_at_k(&ids(&[5, 6]), &labels(&[6]), 2);
        assert!((v - 1.0 / libm::log2(3.0)).abs() < 1e-15);
        assert!((v - 0.6309).abs() < 1e-4);
        assert_eq!(ndcg_at_k(&ids(&[1]), &labels(&[]), 1), 0.0);
    }

    #[test]
    fn recall_cases() {
        assert_eq!(recall_at_k(&ids(&[1, 9, 2]), &labels(&[1, 2, 3, 4]), 3), 0.5);
        assert_eq!(recall_at_k(&ids(&[4, 3, 2, 1]), &labels(&[1, 2, 3, 4]), 4), 1.0);
        assert_eq!(recall_at_k(&[], &labels(&[1]), 5), 0.0);
    }

    #[test]
    fn reduction_cases() {
        assert_eq!(reduction(0.3, 0.3, 0.01).unwrap(), 0.0);
        assert!((reduction(0.5, 0.45, 0.01).unwrap() - 5.0).abs() < 1e-9);
        assert!(reduction(0.4, 0.5, 0.1).unwrap() < 0.0);
        assert!(reduction(0.4, 0.5, 0.0).is_err());
    }

    fn slate(fresh: usize, rep: usize) -> Slate {
        let mut e: Vec<(ItemId, Provenance)> =
            (0..fresh).map(|i| (ItemId(i as u32), Provenance::Fresh)).collect();
        e.extend((0..rep).map(|i| (ItemId(100 + i as u32), Provenance::RepeatedSafe)));
        Slate::new(UserId(0), 0.0, e)
    }

    #[test]
    fn repeated_fraction_cases() {
        assert_eq!(repeated_fraction(&[slate(20, 0)]), 0.0);
        assert_eq!(repeated_fraction(&[slate(5, 15), slate(5, 15)]), 0.75);
        assert_eq!(repeated_fraction(&[slate(0, 3)]), 1.0);
        assert_eq!(repeated_fraction(&[]), 0.0);
    }
}
