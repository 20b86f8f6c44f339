//! Immutable interaction data: catalog, users, scored interactions and the
//! calibration/test partition of users.

mod synth;

use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ids::{GroupId, ItemId, SlateId, UserId};
use crate::math::round_half_up;
use crate::{Error, Result};

pub use synth::{generate_synthetic, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Item {
    pub id: ItemId,
    pub group: GroupId,
    /// Popularity signal visible to users.
    pub likes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct User {
    pub id: UserId,
    /// Marginal probability that this user flags an item. Ground truth for
    /// synthetic data; the empirical flag rate for loaded data.
    pub true_flag_rate: f64,
}

/// One logged user-item exposure.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Interaction {
    pub user: UserId,
    pub item: ItemId,
    pub slate: SlateId,
    /// Ranker score `f(u, i)`.
    pub relevance: f64,
    /// Risk predictor score `r(i, u)`.
    pub risk: f64,
    /// Organic "Not Interested" feedback.
    pub flagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Split {
    Calibration,
    Test,
}

/// Answers whether a user flagged an item.
pub trait FlagOracle {
    fn is_flagged(&self, user: UserId, item: ItemId) -> bool;
}

/// The interactions of one recommendation event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlateLog {
    pub user: UserId,
    pub slate: SlateId,
    rows: Range<usize>,
}

impl SlateLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ItemEntry {
    item: ItemId,
    /// First row for this (user, item) pair in sorted interaction order.
    row: usize,
    /// Flagged in any of the pair's rows.
    flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    items: Vec<Item>,
    users: Vec<User>,
    interactions: Vec<Interaction>,
    slates: Vec<SlateLog>,
    user_slates: Vec<Range<usize>>,
    user_items: Vec<Vec<ItemEntry>>,
    split: Option<Vec<Split>>,
}

impl Dataset {
    /// Validates and indexes the data. Interactions are stably reordered by
    /// `(user, slate)`.
    pub fn new(
        mut items: Vec<Item>,
        mut users: Vec<User>,
        interactions: Vec<Interaction>,
    ) -> Result<Self> {
        items.sort_by_key(|i| i.id);
        if let Some(w) = items.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::Validation(format!("duplicate item_id {}", w[0].id)));
        }
        users.sort_by_key(|u| u.id);
        if let Some(w) = users.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::Validation(format!("duplicate user_id {}", w[0].id)));
        }
        for u in &users {
            if !(0.0..=1.0).contains(&u.true_flag_rate) {
                return Err(Error::Validation(format!(
                    "user {}: true_flag_rate {} outside [0, 1]",
                    u.id, u.true_flag_rate
                )));
            }
        }
        for (row, it) in interactions.iter().enumerate() {
            if !(0.0..=1.0).contains(&it.risk) {
                return Err(Error::Validation(format!(
                    "interaction {row}: risk {} outside [0, 1]",
                    it.risk
                )));
            }
            if !(it.relevance.is_finite() && it.relevance >= 0.0) {
                return Err(Error::Validation(format!(
                    "interaction {row}: relevance {} must be finite and non-negative",
                    it.relevance
                )));
            }
            if items.binary_search_by_key(&it.item, |i| i.id).is_err() {
                return Err(Error::Validation(format!(
                    "interaction {row}: unknown item_id {}",
                    it.item
                )));
            }
            if users.binary_search_by_key(&it.user, |u| u.id).is_err() {
                return Err(Error::Validation(format!(
                    "interaction {row}: unknown user_id {}",
                    it.user
                )));
            }
        }

        let mut interactions = interactions;
        interactions.sort_by_key(|it| (it.user, it.slate));

        let mut slates = Vec::new();
        let mut start = 0;
        while start < interactions.len() {
            let (user, slate) = (interactions[start].user, interactions[start].slate);
            let mut end = start + 1;
            while end < interactions.len()
                && interactions[end].user == user
                && interactions[end].slate == slate
            {
                end += 1;
            }
            slates.push(SlateLog {
                user,
                slate,
                rows: start..end,
            });
            start = end;
        }

        let mut user_slates = Vec::with_capacity(users.len());
        let mut user_items = Vec::with_capacity(users.len());
        let mut cursor = 0;
        for u in &users {
            let first = cursor;
            while cursor < slates.len() && slates[cursor].user == u.id {
                cursor += 1;
            }
            user_slates.push(first..cursor);

            let mut entries: Vec<ItemEntry> = Vec::new();
            if first < cursor {
                let rows = slates[first].rows.start..slates[cursor - 1].rows.end;
                for row in rows {
                    let it = &interactions[row];
                    entries.push(ItemEntry {
                        item: it.item,
                        row,
                        flagged: it.flagged,
                    });
                }
            }
            entries.sort_by_key(|e| (e.item, e.row));
            let mut merged: Vec<ItemEntry> = Vec::with_capacity(entries.len());
            for e in entries {
                match merged.last_mut() {
                    Some(last) if last.item == e.item => last.flagged |= e.flagged,
                    _ => merged.push(e),
                }
            }
            user_items.push(merged);
        }

        Ok(Self {
            items,
            users,
            interactions,
            slates,
            user_slates,
            user_items,
            split: None,
        })
    }

    /// Catalog, sorted by item id.
    pub fn items(&self) -> &[Item] {
        &self.items
    }

    /// Users, sorted by user id.
    pub fn users(&self) -> &[User] {
        &self.users
    }

    /// Interactions, sorted by `(user, slate)`.
    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    /// All recommendation events, sorted by `(user, slate)`.
    pub fn slates(&self) -> &[SlateLog] {
        &self.slates
    }

    pub fn item(&self, id: ItemId) -> Option<&Item> {
        self.items
            .binary_search_by_key(&id, |i| i.id)
            .ok()
            .map(|ix| &self.items[ix])
    }

    fn user_index(&self, id: UserId) -> Result<usize> {
        self.users
            .binary_search_by_key(&id, |u| u.id)
            .map_err(|_| Error::UnknownUser(id))
    }

    pub fn user(&self, id: UserId) -> Result<&User> {
        self.user_index(id).map(|ix| &self.users[ix])
    }

    pub fn slates_of(&self, user: UserId) -> Result<&[SlateLog]> {
        let ix = self.user_index(user)?;
        Ok(&self.slates[self.user_slates[ix].clone()])
    }

    pub fn rows(&self, slate: &SlateLog) -> &[Interaction] {
        &self.interactions[slate.rows.clone()]
    }

    /// The scored interaction for `(user, item)`; the first one in slate
    /// order when the pair was logged more than once.
    pub fn interaction(&self, user: UserId, item: ItemId) -> Result<&Interaction> {
        let ix = self.user_index(user)?;
        let entries = &self.user_items[ix];
        entries
            .binary_search_by_key(&item, |e| e.item)
            .map(|p| &self.interactions[entries[p].row])
            .map_err(|_| Error::Unscored { user, item })
    }

    /// Distinct items the user was exposed to, ascending.
    pub fn exposure_log(&self, user: UserId) -> Result<Vec<ItemId>> {
        let ix = self.user_index(user)?;
        Ok(self.user_items[ix].iter().map(|e| e.item).collect())
    }

    /// Distinct `(user, item)` pairs of the user with their organic flag.
    pub fn user_items(&self, user: UserId) -> Result<impl Iterator<Item = (ItemId, bool)> + '_> {
        let ix = self.user_index(user)?;
        Ok(self.user_items[ix].iter().map(|e| (e.item, e.flagged)))
    }

    pub fn organic_flag(&self, user: UserId, item: ItemId) -> bool {
        match self.user_index(user) {
            Ok(ix) => {
                let entries = &self.user_items[ix];
                entries
                    .binary_search_by_key(&item, |e| e.item)
                    .map(|p| entries[p].flagged)
                    .unwrap_or(false)
            }
            Err(_) => false,
        }
    }

    /// Distinct groups present in the catalog, ascending.
    pub fn groups(&self) -> Vec<GroupId> {
        let mut g: Vec<GroupId> = self.items.iter().map(|i| i.group).collect();
        g.sort_unstable();
        g.dedup();
        g
    }

    /// Fraction of interactions carrying an organic flag.
    pub fn flag_rate(&self) -> f64 {
        if self.interactions.is_empty() {
            return 0.0;
        }
        let flagged = self.interactions.iter().filter(|i| i.flagged).count();
        flagged as f64 / self.interactions.len() as f64
    }

    /// Partitions users into calibration and test sets.
    ///
    /// The calibration count is `round_half_up(fraction * users)`, clamped so
    /// both sides keep at least one user; membership follows a seeded
    /// shuffle of the user list.
    pub fn split(&self, calibration_fraction: f64, seed: u64) -> Result<Self> {
        if !(calibration_fraction > 0.0 && calibration_fraction < 1.0) {
            return Err(Error::Config(format!(
                "calibration fraction {calibration_fraction} must lie in (0, 1)"
            )));
        }
        let n = self.users.len();
        if n < 2 {
            return Err(Error::Config(format!(
                "splitting needs at least 2 users, dataset has {n}"
            )));
        }
        let n_cal = (round_half_up(calibration_fraction * n as f64) as usize).clamp(1, n - 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut split = alloc::vec![Split::Test; n];
        for &ix in &order[..n_cal] {
            split[ix] = Split::Calibration;
        }
        let mut out = self.clone();
        out.split = Some(split);
        Ok(out)
    }

    pub fn is_split(&self) -> bool {
        self.split.is_some()
    }

    pub fn split_of(&self, user: UserId) -> Option<Split> {
        let split = self.split.as_ref()?;
        self.user_index(user).ok().map(|ix| split[ix])
    }

    fn users_in(&self, which: Split) -> Vec<UserId> {
        match &self.split {
            Some(split) => self
                .users
                .iter()
                .zip(split)
                .filter(|(_, s)| **s == which)
                .map(|(u, _)| u.id)
                .collect(),
            None => Vec::new(),
        }
    }

    /// Calibration users, ascending. Empty before [`Dataset::split`].
    pub fn calibration_users(&self) -> Vec<UserId> {
        self.users_in(Split::Calibration)
    }

    /// Test users, ascending. Empty before [`Dataset::split`].
    pub fn test_users(&self) -> Vec<UserId> {
        self.users_in(Split::Test)
    }

    /// Slates of the given users, in user order.
    pub fn slates_of_users(&self, users: &[UserId]) -> Result<Vec<SlateLog>> {
        let mut out = Vec::new();
        for &u in users {
            out.extend_from_slice(self.slates_of(u)?);
        }
        Ok(out)
    }

    /// Split tag of every interaction, in [`Dataset::interactions`] order.
    pub fn interaction_splits(&self) -> Option<Vec<Split>> {
        let split = self.split.as_ref()?;
        let mut out = Vec::with_capacity(self.interactions.len());
        for (ix, range) in self.user_slates.iter().enumerate() {
            for s in &self.slates[range.clone()] {
                out.extend(core::iter::repeat_n(split[ix], s.len()));
            }
        }
        Some(out)
    }
}

impl FlagOracle for Dataset {
    fn is_flagged(&self, user: UserId, item: ItemId) -> bool {
        self.organic_flag(user, item)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn item(id: u32, group: u32) -> Item {
        Item {
            id: ItemId(id),
            group: GroupId(group),
            likes: 1,
        }
    }

    fn user(id: u32) -> User {
        User {
            id: UserId(id),
            true_flag_rate: 0.0,
        }
    }

    fn row(user: u32, item: u32, slate: u32, risk: f64, flagged: bool) -> Interaction {
        Interaction {
            user: UserId(user),
            item: ItemId(item),
            slate,
            relevance: 0.5,
            risk,
            flagged,
        }
    }

    #[test]
    fn indexes_slates_and_flags() {
        let ds = Dataset::new(
            vec![item(1, 0), item(2, 0), item(3, 1)],
            vec![user(7), user(8)],
            vec![
                row(8, 1, 0, 0.1, false),
                row(7, 2, 1, 0.2, true),
                row(7, 1, 0, 0.3, false),
                row(7, 3, 1, 0.4, false),
            ],
        )
        .unwrap();
        assert_eq!(ds.slates().len(), 3);
        assert_eq!(ds.slates_of(UserId(7)).unwrap().len(), 2);
        assert!(ds.organic_flag(UserId(7), ItemId(2)));
        assert!(!ds.organic_flag(UserId(8), ItemId(2)));
        assert_eq!(
            ds.exposure_log(UserId(7)).unwrap(),
            vec![ItemId(1), ItemId(2), ItemId(3)]
        );
        assert_eq!(ds.groups(), vec![GroupId(0), GroupId(1)]);
    }

    #[test]
    fn rejects_out_of_range_risk() {
        let err = Dataset::new(
            vec![item(1, 0)],
            vec![user(1)],
            vec![row(1, 1, 0, 1.5, false)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("risk")));
    }

    #[test]
    fn rejects_unknown_item() {
        let err = Dataset::new(
            vec![item(1, 0)],
            vec![user(1)],
            vec![row(1, 9, 0, 0.5, false)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("unknown item_id 9")));
    }

    #[test]
    fn rejects_duplicate_ids() {
        assert!(Dataset::new(vec![item(1, 0), item(1, 2)], vec![], vec![]).is_err());
        assert!(Dataset::new(vec![], vec![user(3), user(3)], vec![]).is_err());
    }

    fn users_only(n: u32) -> Dataset {
        Dataset::new(vec![], (0..n).map(user).collect(), vec![]).unwrap()
    }

    #[test]
    fn split_counts_follow_round_half_up() {
        let ds = users_only(100).split(0.5, 1).unwrap();
        assert_eq!(ds.calibration_users().len(), 50);
        assert_eq!(ds.test_users().len(), 50);

        let ds = users_only(3).split(0.5, 1).unwrap();
        assert_eq!(ds.calibration_users().len(), 2);
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let base = users_only(40);
        let a = base.split(0.3, 11).unwrap();
        let b = base.split(0.3, 11).unwrap();
        assert_eq!(a.calibration_users(), b.calibration_users());
        let cal = a.calibration_users();
        let test = a.test_users();
        assert_eq!(cal.len() + test.len(), 40);
        assert!(cal.iter().all(|u| !test.contains(u)));
        let c = base.split(0.3, 12).unwrap();
        assert_ne!(a.calibration_users(), c.calibration_users());
    }

    #[test]
    fn split_rejects_bad_input() {
        assert!(matches!(users_only(10).split(0.0, 1), Err(Error::Config(_))));
        assert!(matches!(users_only(10).split(1.0, 1), Err(Error::Config(_))));
        assert!(matches!(users_only(1).split(0.5, 1), Err(Error::Config(_))));
    }
}
