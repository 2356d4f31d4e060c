//! Climate-invariant rescaling of subgrid-closure emulators.
//!
//! Moist thermodynamics ([`thermo`]), distribution distances ([`stats`]), the
//! `.civ` dataset format and rescaling batch generator ([`dataset`]), a
//! synthetic climate-column generator ([`synth`]), regressors and training
//! ([`models`]), evaluation metrics ([`metrics`]), attribution ([`explain`]) and
//! the end-to-end cold-to-warm experiment ([`experiment`]).

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod explain;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod thermo;

pub use error::{Error, Result};
