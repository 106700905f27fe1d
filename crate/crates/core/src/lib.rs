//! Ventricular-arrhythmia risk scoring for imbalanced, mixed-type clinical cohorts.
//!
//! The pipeline runs in five stages: ingestion and outcome-variable exclusion
//! ([`data`], [`selection::exclude_outcome_variables`]), nearest-neighbour
//! imputation ([`imputation`]), univariate screening with association analysis
//! ([`selection`], [`stats`]), imbalance-corrected training ([`resampling`],
//! [`classifiers`]), and stratified cross-validated evaluation ([`evaluation`]).
//! [`sim`] generates synthetic cohorts with planted signal for testing.

pub mod classifiers;
pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod imputation;
pub mod resampling;
pub mod seeding;
pub mod selection;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
