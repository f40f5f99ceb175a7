//! Core model of how an observer updates beliefs about a classifier's
//! decision after seeing a saliency-map explanation.
//!
//! The crate is `no_std` + `alloc`: everything here is pure computation over
//! in-memory grids and records. File formats, process plumbing, and the CLI
//! live in the companion `xlab` crate.
//!
//! Module map:
//!
//! - [`grid`]: dense float grids and saliency maps (single channel, unit range)
//! - [`study`]: trial/response/mask records and corpus validation
//! - [`similarity`]: min-max and sum scaling, Sloman cosine, L1 dissimilarity
//! - [`generalization`]: exponential and Beta-density generalization curves
//! - [`explainee`]: the 2AFC posterior model and its ablations
//! - [`teaching`]: GP mask sampling and the expected-mask saliency estimator
//! - [`aggregation`]: outlier exclusion, consensus masks, response proportions
//! - [`calibration`]: rate fitting, leave-one-out CV, paired comparisons
//! - [`stats`]: chi-square GOF, OLS with interaction, Spearman correlation
//! - [`special`]: log-gamma, incomplete gamma/beta, erf, tail probabilities
//! - [`rng`]: deterministic seed derivation and normal draws
//! - [`tables`]: plain-text table rendering for analysis outputs

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod aggregation;
pub mod calibration;
pub mod explainee;
pub mod generalization;
pub mod grid;
pub mod rng;
pub mod similarity;
pub mod special;
pub mod stats;
pub mod study;
pub mod tables;
pub mod teaching;

pub use explainee::{ModelSpec, Variant};
pub use generalization::GeneralizationRate;
pub use grid::{FloatGrid, SaliencyMap};
pub use study::{ClassRole, Condition, StudyCorpus};
