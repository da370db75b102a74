//! Solvers and structural verifiers for dimension-reduced mean field games.
//!
//! The crate covers finite-state master equations and their linear
//! reductions, reduced master equations on moment sets, mean field games of
//! controls, and small common-noise expansions.

pub mod controls;
pub mod error;
pub mod finite;
pub mod master;
pub mod math;
pub mod noise;
pub mod ode;
pub mod verify;
pub mod zoo;

pub use error::{Error, Result};
pub use math::{moments, wasserstein, FeatureMap, MomentSet, ParticleCloud, ReductionMap};
