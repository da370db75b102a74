//! Reduction maps, empirical measures, moment features and transport
//! distances.

mod cloud;
mod feature;
mod moment_set;
mod reduction;
mod wasserstein;

pub use cloud::ParticleCloud;
pub use feature::{moments, FeatureFamily, FeatureFn, FeatureMap};
pub use moment_set::MomentSet;
pub use reduction::{Lifted, ReductionMap};
pub use wasserstein::{min_cost_assignment, wasserstein, MAX_ASSIGNMENT_SIZE};

pub(crate) use reduction::mat_vec;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
