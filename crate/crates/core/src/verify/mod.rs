//! Sampling-based verifiers for the structural hypotheses: monotonicity,
//! complete and fiber reduction, coefficient conditions of the power and
//! quadratic families, homogeneity of features and closure of the
//! controls dynamics.

mod conditions;
mod controls;
mod monotone;
mod reduce;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use conditions::{check_abc, check_h_monotone, quadratic_chain, QuadraticChain, DEFAULT_Z_GRID};
pub use controls::{check_control_reduction, check_phi_homogeneity, HomogeneityFit};
pub use monotone::{check_monotone, check_pair_monotone};
pub use reduce::{check_complete_reduce, check_fiber_reduce, check_pair_reduction, MapFn, PairReduction};

/// Inputs that attain a report's worst margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub label: String,
    pub points: Vec<Vec<f64>>,
}

impl Witness {
    pub fn new(label: impl Into<String>, points: Vec<Vec<f64>>) -> Self {
        Self {
            label: label.into(),
            points,
        }
    }
}

/// Outcome of one verification. `pass` iff `worst_margin >= -tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub pass: bool,
    /// Signed; negative means violation. `+inf` when nothing was sampled.
    pub worst_margin: f64,
    pub witness: Option<Witness>,
    pub samples: usize,
    pub seed: u64,
    pub tolerance: f64,
    /// Names of failed sub-conditions, in evaluation order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed: Vec<String>,
    /// Set when the check could not decide (for example a rank-deficient fit).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub indeterminate: bool,
}

impl CheckReport {
    pub fn from_margin(
        name: impl Into<String>,
        worst_margin: f64,
        witness: Option<Witness>,
        samples: usize,
        seed: u64,
        tolerance: f64,
    ) -> Self {
        let name = name.into();
        let pass = worst_margin >= -tolerance;
        Self {
            failed: if pass { Vec::new() } else { vec![name.clone()] },
            name,
            pass,
            worst_margin,
            witness,
            samples,
            seed,
            tolerance,
            indeterminate: false,
        }
    }

    /// Conjunction of sub-reports. The witness comes from the first failing
    /// part, or from the part with the smallest margin if all pass.
    pub fn combine(name: impl Into<String>, parts: &[CheckReport]) -> Self {
        let worst = parts.iter().map(|p| p.worst_margin).fold(f64::INFINITY, f64::min);
        let failed: Vec<String> = parts.iter().filter(|p| !p.pass).flat_map(|p| p.failed.clone()).collect();
        let source = parts.iter().find(|p| !p.pass).or_else(|| {
            parts
                .iter()
                .filter(|p| p.worst_margin == worst)
                .find(|p| p.witness.is_some())
        });
        Self {
            name: name.into(),
            pass: parts.iter().all(|p| p.pass),
            worst_margin: worst,
            witness: source.and_then(|p| p.witness.clone()),
            samples: parts.iter().map(|p| p.samples).sum(),
            seed: parts.first().map_or(0, |p| p.seed),
            tolerance: parts.iter().map(|p| p.tolerance).fold(0.0, f64::max),
            failed,
            indeterminate: parts.iter().any(|p| p.indeterminate),
        }
    }
}

/// Random sampling setup shared by the verifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSpec {
    pub samples: usize,
    pub seed: u64,
    /// Samples are drawn uniformly from `[-half_width, half_width]^M`.
    pub half_width: f64,
    pub tol: f64,
    /// Explicit pairs evaluated before the random ones.
    pub probes: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self {
            samples: 10_000,
            seed: 0,
            half_width: 5.0,
            tol: 1e-10,
            probes: Vec::new(),
        }
    }
}

impl SamplingSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Only the explicit probes, no random samples.
    pub fn probes_only(probes: Vec<(Vec<f64>, Vec<f64>)>) -> Self {
        Self {
            samples: 0,
            probes,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(Error::Input(format!("half_width must be positive, got {}", self.half_width)));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Input(format!("tolerance must be nonnegative, got {}", self.tol)));
        }
        if self.samples == 0 && self.probes.is_empty() {
            return Err(Error::Input("need at least one sample or probe".into()));
        }
        Ok(())
    }

    pub(crate) fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// `count` flat draws of `width` uniform coordinates each.
    pub(crate) fn draw(&self, width: usize) -> Vec<f64> {
        let mut rng = self.rng();
        let r = self.half_width;
        (0..self.samples * width).map(|_| rng.random_range(-r..=r)).collect()
    }
}

/// Evaluates `margin(i)` for `i < count` in parallel and returns the minimum
/// with its first index. The reduction runs in index order, so the result
/// does not depend on scheduling.
pub fn worst_of<F>(count: usize, margin: F) -> Result<(f64, usize)>
where
    F: Fn(usize) -> Result<f64> + Sync,
{
    let values: Vec<f64> = (0..count).into_par_iter().map(&margin).collect::<Result<_>>()?;
    let mut best = (f64::INFINITY, 0);
    for (i, v) in values.into_iter().enumerate() {
        if v < best.0 {
            best = (v, i);
        }
    }
    Ok(best)
}
