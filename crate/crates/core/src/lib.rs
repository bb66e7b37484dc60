//! Finite-time divergence rates and Lyapunov exponents for deterministic and
//! stochastic flows.
//!
//! The crate is organised bottom-up: [`noise`] and [`domain`] feed the
//! systems in [`dynamics`], which [`integrate`] advances in time. [`tangent`]
//! adds derivative flows and Lyapunov-type functionals, [`divergence`]
//! holds the phi-divergence family, [`ulam`] estimates centred transfer
//! operator rows, and [`fields`] assembles per-box diagnostics that
//! [`fieldgrid`] reads and writes. [`bounds`] checks inequalities on
//! closed-form oracles.

pub mod bounds;
pub mod divergence;
pub mod domain;
pub mod dynamics;
pub mod error;
pub mod fieldgrid;
pub mod fields;
pub mod integrate;
pub mod noise;
pub mod stats;
pub mod tangent;
pub mod ulam;

pub use divergence::{DiscreteDistribution, DivergenceKind};
pub use domain::{Domain, Mat, Point};
pub use dynamics::DynamicsSpec;
pub use error::{Error, Result};
pub use fields::{Diagnostic, ScalarField};
pub use integrate::{IntegratorConfig, Scheme};
pub use noise::PathKey;
pub use ulam::{GridPartition, RowDistribution, Sampling};
