//! Local control analysis of observational data: cluster units on
//! confounders, measure within-cluster exposure/outcome rank correlations,
//! test them against random pseudo-clusterings, compare cluster counts and
//! model the local effects with a forest and a partitioning tree.

pub mod cluster;
pub mod config;
pub mod confirm;
pub mod dataset;
pub mod embed;
pub mod error;
pub mod explore;
pub mod forest;
pub mod lrc;
pub mod mob;
pub mod pipeline;
pub mod rng;

pub use error::{LcError, Result};
pub use config::RunConfig;
pub use pipeline::{run_aggregate, run_all, run_confirm, run_explore, run_reveal, Manifest, Stage};
