//! Two-stage recommendation for a fixed threshold: rank candidates, drop the
//! top-k positions whose filter score `1 - risk` is below `lambda`, and fill
//! the dropped positions with repeated safe items.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::dataset::{Dataset, FlagOracle, SlateLog};
use crate::ids::{ItemId, UserId};
use crate::{Error, Result};

/// Whether an item with this risk score survives the filter at `lambda`.
#[inline]
pub fn passes_filter(risk: f64, lambda: f64) -> bool {
    1.0 - risk >= lambda
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub item: ItemId,
    pub relevance: f64,
    pub risk: f64,
}

/// Descending relevance, ties by ascending item id.
fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.relevance
        .total_cmp(&a.relevance)
        .then_with(|| a.item.cmp(&b.item))
}

/// Sorts candidates into ranking order.
pub fn rank_candidates(candidates: &mut [Candidate]) {
    candidates.sort_by(rank_order);
}

/// Items of `pool` that pass the filter at `lambda`, in pool order.
pub fn candidate_set(pool: &[Candidate], lambda: f64) -> Vec<ItemId> {
    pool.iter()
        .filter(|c| passes_filter(c.risk, lambda))
        .map(|c| c.item)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Provenance {
    Fresh,
    RepeatedSafe,
}

/// One served recommendation list.
#[derive(Debug, Clone, PartialEq)]
pub struct Slate {
    pub user: UserId,
    pub lambda: f64,
    entries: Vec<(ItemId, Provenance)>,
}

impl Slate {
    pub fn new(user: UserId, lambda: f64, entries: Vec<(ItemId, Provenance)>) -> Self {
        Self {
            user,
            lambda,
            entries,
        }
    }

    pub fn entries(&self) -> &[(ItemId, Provenance)] {
        &self.entries
    }

    pub fn items(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.entries.iter().any(|e| e.0 == item)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn fresh_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.1 == Provenance::Fresh)
            .count()
    }

    pub fn repeated_count(&self) -> usize {
        self.len() - self.fresh_count()
    }
}

/// Previously consumed items the user never flagged, ordered by descending
/// historical relevance (ties by ascending id).
#[derive(Debug, Clone, PartialEq)]
pub struct SafePool {
    user: UserId,
    items: Vec<ItemId>,
}

impl SafePool {
    /// Builds the pool from `(item, relevance, flagged)` history records.
    /// An item flagged in any record is excluded; repeated records keep the
    /// highest relevance.
    pub fn from_history(user: UserId, history: impl IntoIterator<Item = (ItemId, f64, bool)>) -> Self {
        let mut best: BTreeMap<ItemId, (f64, bool)> = BTreeMap::new();
        for (item, relevance, flagged) in history {
            let e = best.entry(item).or_insert((relevance, flagged));
            if relevance > e.0 {
                e.0 = relevance;
            }
            e.1 |= flagged;
        }
        let mut kept: Vec<(ItemId, f64)> = best
            .into_iter()
            .filter(|(_, (_, flagged))| !flagged)
            .map(|(item, (rel, _))| (item, rel))
            .collect();
        kept.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self {
            user,
            items: kept.into_iter().map(|(i, _)| i).collect(),
        }
    }

    /// The user's consumed items that `oracle` does not flag.
    pub fn for_user(dataset: &Dataset, user: UserId, oracle: &impl FlagOracle) -> Result<Self> {
        let mut history = Vec::new();
        for slate in dataset.slates_of(user)? {
            for it in dataset.rows(slate) {
                history.push((it.item, it.relevance, oracle.is_flagged(user, it.item)));
            }
        }
        Ok(Self::from_history(user, history))
    }

    pub fn user(&self) -> UserId {
        self.user
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Pool entries usable for a request whose candidate pool is `pool`.
    pub fn available_for<'a>(&'a self, pool: &'a [Candidate]) -> impl Iterator<Item = ItemId> + 'a {
        self.items
            .iter()
            .copied()
            .filter(move |i| !pool.iter().any(|c| c.item == *i))
    }
}

/// Safe pools for a set of users, keyed by user.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SafePools {
    pools: BTreeMap<UserId, SafePool>,
}

impl SafePools {
    pub fn build(dataset: &Dataset, users: &[UserId], oracle: &impl FlagOracle) -> Result<Self> {
        let mut pools = BTreeMap::new();
        for &u in users {
            pools.insert(u, SafePool::for_user(dataset, u, oracle)?);
        }
        Ok(Self { pools })
    }

    pub fn get(&self, user: UserId) -> Result<&SafePool> {
        self.pools.get(&user).ok_or(Error::UnknownUser(user))
    }

    pub fn insert(&mut self, pool: SafePool) {
        self.pools.insert(pool.user, pool);
    }
}

/// Serves one request from an already ranked candidate pool.
///
/// The top `min(k, |pool|)` positions keep the items that pass the filter;
/// every filtered position is refilled from `safe`, in pool order, skipping
/// items that belong to the candidate pool itself. When the safe pool runs
/// dry the slate is shorter than `k`.
pub fn recommend_ranked(
    user: UserId,
    ranked: &[Candidate],
    lambda: f64,
    k: usize,
    safe: &SafePool,
) -> Result<Slate> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let slots = k.min(ranked.len());
    let mut entries: Vec<(ItemId, Provenance)> = ranked[..slots]
        .iter()
        .filter(|c| passes_filter(c.risk, lambda))
        .map(|c| (c.item, Provenance::Fresh))
        .collect();
    let missing = slots - entries.len();
    entries.extend(
        safe.available_for(ranked)
            .take(missing)
            .map(|i| (i, Provenance::RepeatedSafe)),
    );
    Ok(Slate::new(user, lambda, entries))
}

/// Pipeline view over a dataset with a fixed slate size `k`.
#[derive(Debug, Clone, Copy)]
pub struct Recommender<'a> {
    dataset: &'a Dataset,
    k: usize,
}

impl<'a> Recommender<'a> {
    pub fn new(dataset: &'a Dataset, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(Self { dataset, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    fn candidate(&self, user: UserId, item: ItemId) -> Result<Candidate> {
        let it = self.dataset.interaction(user, item)?;
        Ok(Candidate {
            item,
            relevance: it.relevance,
            risk: it.risk,
        })
    }

    /// The user's whole candidate pool: every distinct item in their log.
    pub fn user_pool(&self, user: UserId) -> Result<Vec<Candidate>> {
        self.dataset
            .exposure_log(user)?
            .into_iter()
            .map(|i| self.candidate(user, i))
            .collect()
    }

    /// Candidate pool of one recommendation event, in ranking order.
    pub fn slate_pool(&self, slate: &SlateLog) -> Vec<Candidate> {
        let mut pool: Vec<Candidate> = self
            .dataset
            .rows(slate)
            .iter()
            .map(|it| Candidate {
                item: it.item,
                relevance: it.relevance,
                risk: it.risk,
            })
            .collect();
        rank_candidates(&mut pool);
        pool
    }

    /// Items of the user's pool with `1 - risk >= lambda`, ascending by id.
    pub fn candidate_set(&self, user: UserId, lambda: f64) -> Result<Vec<ItemId>> {
        Ok(candidate_set(&self.user_pool(user)?, lambda))
    }

    /// Orders `items` by the user's relevance scores.
    pub fn rank(&self, user: UserId, items: &[ItemId]) -> Result<Vec<ItemId>> {
        let mut c = items
            .iter()
            .map(|&i| self.candidate(user, i))
            .collect::<Result<Vec<_>>>()?;
        rank_candidates(&mut c);
        Ok(c.into_iter().map(|c| c.item).collect())
    }

    /// Serves the user from their whole pool.
    pub fn recommend(&self, user: UserId, lambda: f64, safe: &SafePool) -> Result<Slate> {
        self.check_pool_owner(user, safe)?;
        let mut pool = self.user_pool(user)?;
        rank_candidates(&mut pool);
        recommend_ranked(user, &pool, lambda, self.k, safe)
    }

    /// Serves one logged recommendation event.
    pub fn recommend_slate(&self, slate: &SlateLog, lambda: f64, safe: &SafePool) -> Result<Slate> {
        self.check_pool_owner(slate.user, safe)?;
        recommend_ranked(slate.user, &self.slate_pool(slate), lambda, self.k, safe)
    }

    fn check_pool_owner(&self, user: UserId, safe: &SafePool) -> Result<()> {
        if safe.user != user {
            return Err(Error::Validation(format!(
                "safe pool of user {} used for user {user}",
                safe.user
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn c(item: u32, relevance: f64, risk: f64) -> Candidate {
        Candidate {
            item: ItemId(item),
            relevance,
            risk,
        }
    }

    fn ids(v: &[u32]) -> Vec<ItemId> {
        v.iter().map(|&i| ItemId(i)).collect()
    }

    #[test]
    fn candidate_set_applies_the_predicate() {
        let pool = [c(1, 0.3, 0.05), c(2, 0.2, 0.4), c(3, 0.1, 0.9)];
        assert_eq!(candidate_set(&pool, 0.0), ids(&[1, 2, 3]));
        assert_eq!(candidate_set(&pool, 0.5), ids(&[1, 2]));
        assert!(candidate_set(&pool, 1.001).is_empty());
    }

    #[test]
    fn ranking_breaks_ties_by_item_id() {
        let mut a = vec![c(2, 0.5, 0.0), c(1, 0.9, 0.0)];
        rank_candidates(&mut a);
        assert_eq!(a.iter().map(|c| c.item).collect::<Vec<_>>(), ids(&[1, 2]));

        let mut b = vec![c(7, 0.4, 0.0), c(3, 0.4, 0.0)];
        rank_candidates(&mut b);
        assert_eq!(b.iter().map(|c| c.item).collect::<Vec<_>>(), ids(&[3, 7]));

        let mut one = vec![c(5, 0.1, 0.0)];
        rank_candidates(&mut one);
        assert_eq!(one[0].item, ItemId(5));
    }

    fn pool(n: u32, offset: u32) -> SafePool {
        SafePool::from_history(
            UserId(0),
            (0..n).map(|i| (ItemId(offset + i), 1.0 - i as f64 / 1000.0, false)),
        )
    }

    #[test]
    fn no_filtering_means_no_replacement() {
        let mut ranked: Vec<Candidate> = (0..25).map(|i| c(i, 1.0 - i as f64 * 0.01, 0.5)).collect();
        rank_candidates(&mut ranked);
        let s = recommend_ranked(UserId(0), &ranked, 0.0, 20, &pool(30, 100)).unwrap();
        assert_eq!(s.len(), 20);
        assert_eq!(s.fresh_count(), 20);
        assert_eq!(s.repeated_count(), 0);
    }

    #[test]
    fn filtered_positions_are_refilled() {
        // 5 of the 20 shown items survive lambda = 0.5.
        let mut ranked: Vec<Candidate> = (0..20)
            .map(|i| c(i, 1.0 - i as f64 * 0.01, if i % 4 == 0 { 0.1 } else { 0.9 }))
            .collect();
        rank_candidates(&mut ranked);
        let s = recommend_ranked(UserId(0), &ranked, 0.5, 20, &pool(30, 100)).unwrap();
        assert_eq!(s.fresh_count(), 5);
        assert_eq!(s.repeated_count(), 15);
        assert_eq!(s.entries()[5], (ItemId(100), Provenance::RepeatedSafe));
    }

    #[test]
    fn everything_filtered_and_nothing_to_repeat() {
        let ranked: Vec<Candidate> = (0..20).map(|i| c(i, 0.5, 0.2)).collect();
        let empty = SafePool::from_history(UserId(0), []);
        let s = recommend_ranked(UserId(0), &ranked, 1.001, 20, &empty).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn zero_k_is_rejected() {
        let empty = SafePool::from_history(UserId(0), []);
        assert!(matches!(
            recommend_ranked(UserId(0), &[], 0.0, 0, &empty),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn safe_pool_drops_flagged_and_skips_pool_members() {
        let sp = SafePool::from_history(
            UserId(0),
            [
                (ItemId(1), 0.2, false),
                (ItemId(2), 0.9, false),
                (ItemId(3), 0.5, true),
                (ItemId(1), 0.8, false),
                (ItemId(4), 0.1, false),
            ],
        );
        assert_eq!(sp.items(), &ids(&[2, 1, 4])[..]);
        let ranked = [c(2, 0.9, 0.99)];
        let avail: Vec<ItemId> = sp.available_for(&ranked).collect();
        assert_eq!(avail, ids(&[1, 4]));
        let s = recommend_ranked(UserId(0), &ranked, 0.5, 5, &sp).unwrap();
        assert_eq!(s.entries(), &[(ItemId(1), Provenance::RepeatedSafe)]);
    }
}
