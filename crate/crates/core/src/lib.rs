//! Core algorithms for risk-controlling recommender systems.
//!
//! The crate models a two-stage recommender: a ranker orders candidate items,
//! a risk predictor scores them, and items whose filter score `1 - risk`
//! falls below a threshold `lambda` are removed from the top-k and replaced
//! with previously consumed, never-flagged items. The threshold is calibrated
//! with conformal risk control so the expected fraction of flagged items in a
//! slate stays below a target level.
//!
//! On top of that pipeline the crate provides coordinated "Not Interested"
//! reporting strategies, the budget-consumption bound they induce, evaluation
//! metrics and a seeded synthetic data generator. Everything here is
//! `no_std` + `alloc`; file formats, experiment drivers and the command line
//! live in the `riskctl` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod adversary;
pub mod calibration;
pub mod dataset;
mod error;
mod ids;
pub mod math;
pub mod metrics;
pub mod recsys;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};
pub use ids::{GroupId, ItemId, SlateId, UserId};
