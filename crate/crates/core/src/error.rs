use alloc::string::String;

use crate::ids::{ItemId, UserId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("unknown user {0}")]
    UnknownUser(UserId),

    #[error("item {item} is not scored for user {user}")]
    Unscored { user: UserId, item: ItemId },

    #[error("calibration failed: {0}")]
    Calibration(String),

    /// No grid threshold satisfies the conformal condition.
    #[error(
        "alpha {alpha} is infeasible with {samples} calibration samples; \
         minimal feasible alpha is {min_alpha}"
    )]
    Infeasible {
        alpha: f64,
        samples: usize,
        min_alpha: f64,
    },

    #[error(
        "risk curve increases between lambda {lambda_before} ({before}) and \
         lambda {lambda_after} ({after}); repeated items must be flag-free"
    )]
    NonMonotone {
        lambda_before: f64,
        lambda_after: f64,
        before: f64,
        after: f64,
    },

    #[error("outside the domain of the bound: {0}")]
    Domain(String),
}

pub type Result<T> = core::result::Result<T, Error>;
