use alloc::format;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, Interaction, Item, User};
use crate::ids::{GroupId, ItemId, UserId};
use crate::math::{sigmoid, solve_logit_normal_offset};
use crate::{Error, Result};

const LIKES_LOG_MEAN: f64 = 4.0;
const LIKES_LOG_SD: f64 = 1.5;

/// Parameters of the synthetic generator.
///
/// True flag propensity is `sigmoid(b + user_effect + item_effect)` with
/// Gaussian effects and `b` solved so the population mean equals
/// `flag_rate`. The risk score is a noisy logistic transform of the same
/// effects, so the learned risk is informative but not the truth. Relevance
/// is a low-rank latent inner product plus noise, independent of risk.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub groups: usize,
    pub slates_per_user: usize,
    pub slate_width: usize,
    /// Mean probability that an exposure is flagged.
    pub flag_rate: f64,
    /// Standard deviation of the noise added to the risk logit, in units of
    /// the standardized propensity.
    pub risk_noise: f64,
    /// Correlation between item log-likes and the item's risk effect.
    pub likes_risk_correlation: f64,
    /// Risk-logit shift: `-group_bias` for even groups, `+group_bias` for
    /// odd groups. Zero gives a group-agnostic risk predictor; true flag
    /// rates never depend on the group.
    pub group_bias: f64,
    /// Standard deviation of the user effect on the propensity logit.
    pub user_heterogeneity: f64,
    /// Standard deviation of the item effect on the propensity logit.
    pub item_heterogeneity: f64,
    /// Weight in [0, 1] of the user effect inside the risk score.
    pub risk_user_weight: f64,
    /// Slope of the risk logistic transform.
    pub risk_scale: f64,
    /// Zipf exponent of group sizes; 0 gives equal-sized groups.
    pub group_skew: f64,
    pub latent_dim: usize,
    pub relevance_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 2000,
            items: 1000,
            groups: 20,
            slates_per_user: 5,
            slate_width: 20,
            flag_rate: 0.002,
            risk_noise: 0.5,
            likes_risk_correlation: -0.4,
            group_bias: 0.0,
            user_heterogeneity: 1.0,
            item_heterogeneity: 1.0,
            risk_user_weight: 1.0,
            risk_scale: 1.5,
            group_skew: 0.5,
            latent_dim: 8,
            relevance_noise: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: alloc::string::String| Err(Error::Config(m));
        if self.users == 0 || self.items == 0 {
            return fail(format!(
                "users ({}) and items ({}) must be positive",
                self.users, self.items
            ));
        }
        if self.groups == 0 || self.slates_per_user == 0 || self.slate_width == 0 {
            return fail("groups, slates_per_user and slate_width must be positive".into());
        }
        if self.slates_per_user * self.slate_width > self.items {
            return fail(format!(
                "slates_per_user * slate_width = {} exceeds the catalog size {}",
                self.slates_per_user * self.slate_width,
                self.items
            ));
        }
        if !(0.0..=1.0).contains(&self.flag_rate) {
            return fail(format!("flag_rate {} outside [0, 1]", self.flag_rate));
        }
        if !(-1.0..=1.0).contains(&self.likes_risk_correlation) {
            return fail(format!(
                "likes_risk_correlation {} outside [-1, 1]",
                self.likes_risk_correlation
            ));
        }
        if !(0.0..=1.0).contains(&self.risk_user_weight) {
            return fail(format!(
                "risk_user_weight {} outside [0, 1]",
                self.risk_user_weight
            ));
        }
        let non_negative = [
            ("risk_noise", self.risk_noise),
            ("user_heterogeneity", self.user_heterogeneity),
            ("item_heterogeneity", self.item_heterogeneity),
            ("risk_scale", self.risk_scale),
            ("group_skew", self.group_skew),
            ("relevance_noise", self.relevance_noise),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !self.group_bias.is_finite() {
            return fail("group_bias must be finite".into());
        }
        if self.latent_dim == 0 {
            return fail("latent_dim must be positive".into());
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Generates a dataset; a pure function of `(config, seed)`.
pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.latent_dim;

    let weights: Vec<f64> = (0..config.groups)
        .map(|g| libm::pow((g + 1) as f64, -config.group_skew))
        .collect();
    let group_dist = WeightedIndex::new(&weights)
        .map_err(|e| Error::Config(format!("group weights: {e}")))?;

    let rho = config.likes_risk_correlation;
    let rho_rest = libm::sqrt(1.0 - rho * rho);
    let mut items = Vec::with_capacity(config.items);
    let mut item_effect = Vec::with_capacity(config.items);
    let mut item_factors = Vec::with_capacity(config.items * d);
    for ix in 0..config.items {
        let group = group_dist.sample(&mut rng) as u32;
        let z = normal(&mut rng);
        let likes_latent = rho * z + rho_rest * normal(&mut rng);
        let likes = libm::round(libm::exp(LIKES_LOG_MEAN + LIKES_LOG_SD * likes_latent)) as u64;
        items.push(Item {
            id: ItemId(ix as u32),
            group: GroupId(group),
            likes,
        });
        item_effect.push(z);
        for _ in 0..d {
            item_factors.push(normal(&mut rng));
        }
    }

    let mut user_effect = Vec::with_capacity(config.users);
    let mut user_factors = Vec::with_capacity(config.users * d);
    for _ in 0..config.users {
        user_effect.push(normal(&mut rng));
        for _ in 0..d {
            user_factors.push(normal(&mut rng));
        }
    }

    let (su, si) = (config.user_heterogeneity, config.item_heterogeneity);
    let total_sd = libm::sqrt(su * su + si * si);
    let offset = match config.flag_rate {
        r if r <= 0.0 => f64::NEG_INFINITY,
        r if r >= 1.0 => f64::INFINITY,
        r => solve_logit_normal_offset(r, total_sd),
    };
    let propensity = |u: usize, i: usize| -> f64 {
        if offset.is_infinite() {
            return if offset > 0.0 { 1.0 } else { 0.0 };
        }
        sigmoid(offset + su * user_effect[u] + si * item_effect[i])
    };

    let wu = config.risk_user_weight;
    let risk_sd = libm::sqrt(wu * wu * su * su + si * si);
    let rel_norm = 1.0 / libm::sqrt(d as f64);

    let users: Vec<User> = (0..config.users)
        .map(|u| {
            let sum: f64 = (0..config.items).map(|i| propensity(u, i)).sum();
            User {
                id: UserId(u as u32),
                true_flag_rate: (sum / config.items as f64).clamp(0.0, 1.0),
            }
        })
        .collect();

    let per_user = config.slates_per_user * config.slate_width;
    let mut interactions = Vec::with_capacity(config.users * per_user);
    for u in 0..config.users {
        let picked = rand::seq::index::sample(&mut rng, config.items, per_user);
        for (pos, i) in picked.into_iter().enumerate() {
            let flagged = rng.random::<f64>() < propensity(u, i);

            let dot: f64 = (0..d)
                .map(|f| user_factors[u * d + f] * item_factors[i * d + f])
                .sum();
            let relevance =
                sigmoid(dot * rel_norm + config.relevance_noise * normal(&mut rng));

            let latent = if risk_sd > 0.0 {
                (wu * su * user_effect[u] + si * item_effect[i]) / risk_sd
            } else {
                0.0
            };
            let shift = if items[i].group.0 % 2 == 1 {
                config.group_bias
            } else {
                -config.group_bias
            };
            let risk = sigmoid(
                config.risk_scale * (latent + config.risk_noise * normal(&mut rng)) + shift,
            );

            interactions.push(Interaction {
                user: UserId(u as u32),
                item: ItemId(i as u32),
                slate: (pos / config.slate_width) as u32,
                relevance,
                risk,
                flagged,
            });
        }
    }

    Dataset::new(items, users, interactions)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_means_no_flags() {
        let cfg = SynthConfig {
            users: 10,
            items: 20,
            groups: 3,
            slates_per_user: 2,
            slate_width: 5,
            flag_rate: 0.0,
            ..SynthConfig::default()
        };
        let ds = generate_synthetic(&cfg, 3).unwrap();
        assert_eq!(ds.interactions().len(), 100);
        assert!(ds.interactions().iter().all(|i| !i.flagged));
    }

    #[test]
    fn rejects_invalid_configs() {
        let bad = [
            SynthConfig { users: 0, ..SynthConfig::default() },
            SynthConfig { items: 0, ..SynthConfig::default() },
            SynthConfig { flag_rate: 1.5, ..SynthConfig::default() },
            SynthConfig { flag_rate: -0.1, ..SynthConfig::default() },
            SynthConfig { items: 50, ..SynthConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(generate_synthetic(&cfg, 0), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn slates_have_configured_shape_and_no_repeats() {
        let cfg = SynthConfig {
            users: 30,
            items: 200,
            ..SynthConfig::default()
        };
        let ds = generate_synthetic(&cfg, 9).unwrap();
        for u in ds.users() {
            let slates = ds.slates_of(u.id).unwrap();
            assert_eq!(slates.len(), cfg.slates_per_user);
            assert!(slates.iter().all(|s| s.len() == cfg.slate_width));
            assert_eq!(ds.exposure_log(u.id).unwrap().len(), 100);
        }
    }
}
