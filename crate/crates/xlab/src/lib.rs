//! Std companion to `xlab-core`: file formats, corpus IO, synthetic study
//! generation, classifier integration, the staged analysis pipeline, and
//! report rendering. The CLI binary is a thin shell over this crate.

pub mod classifier;
pub mod config;
pub mod corpus;
pub mod fgrid;
pub mod pipeline;
pub mod report;
pub mod synth;
pub mod teach;
