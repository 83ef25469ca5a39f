//! Hybrid Bernoulli filtering for secure state estimation of linear systems whose
//! sensor channel may be hit by a signal attack and by packet substitution or
//! extra packet injection.
//!
//! The crate provides
//! - Gaussian and Gaussian-mixture primitives with pruning and merging ([`gaussian`]),
//! - the plant, attack and channel models ([`models`]),
//! - the Gaussian-mixture filter itself ([`filter`]),
//! - a brute-force grid implementation of the same recursion for scalar models ([`oracle`]),
//! - truth simulation and Monte-Carlo evaluation ([`sim`]),
//! - JSON scenario files and the command-line front end ([`config`], [`cli`]).

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod filter;
pub mod gaussian;
pub mod linalg;
pub mod models;
pub mod oracle;
pub mod sim;

pub use error::{HbfError, Result};
pub use filter::{
    AttackCorrection, EstimateReport, FilterOptions, HybridBernoulliDensity, HybridBernoulliFilter,
};
pub use gaussian::{GaussianComponent, GaussianMixture, ReductionParams};
pub use models::{AttackModel, ChannelMode, ChannelModel, ClutterBox, OutsideBoxPolicy, SystemModel};
