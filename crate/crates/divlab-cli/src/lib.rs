//! Experiment harness for the ensemble diversity laboratory: configuration,
//! training, evaluation, enumeration, attribution comparison, reliability
//! simulation, and CSV reporting.

pub mod combos;
pub mod config;
pub mod eval;
pub mod lmworld;
pub mod report;
pub mod train;
