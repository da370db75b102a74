use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FiniteStateModel;
use crate::error::{Error, Result};
use crate::math::{dot, mat_vec, sub};

/// `x -> M x + c`; its adjoint acts through `M^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub linear: DMatrix<f64>,
    pub offset: Vec<f64>,
}

impl AffineMap {
    pub fn linear(m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        Self {
            linear: m,
            offset: vec![0.0; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::linear(DMatrix::identity(n, n))
    }

    /// `scale * Rot(angle)` in the first two coordinates.
    pub fn rotation_contraction(n: usize, scale: f64, angle: f64) -> Self {
        let mut m = DMatrix::identity(n, n) * scale;
        let (s, c) = angle.sin_cos();
        m[(0, 0)] = scale * c;
        m[(0, 1)] = -scale * s;
        m[(1, 0)] = scale * s;
        m[(1, 1)] = scale * c;
        Self::linear(m)
    }

    pub fn dim(&self) -> usize {
        self.linear.nrows()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        mat_vec(&self.linear, x)
            .into_iter()
            .zip(&self.offset)
            .map(|(a, b)| a + b)
            .collect()
    }

    /// `M^T v`.
    pub fn adjoint_apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|j| (0..n).map(|i| self.linear[(i, j)] * v[i]).sum())
            .collect()
    }

    pub fn is_identity(&self) -> bool {
        let n = self.dim();
        self.offset.iter().all(|v| *v == 0.0) && self.linear == DMatrix::identity(n, n)
    }

    /// Whether the image of `[-r, r]^N` stays inside it (checked on corners,
    /// which suffices for affine maps).
    pub fn maps_box_into_itself(&self, r: f64) -> bool {
        let n = self.dim();
        (0..1usize << n).all(|mask| {
            let corner: Vec<f64> = (0..n).map(|k| if mask >> k & 1 == 1 { r } else { -r }).collect();
            self.apply(&corner).iter().all(|v| v.abs() <= r * (1.0 + 1e-12))
        })
    }
}

/// Grid and time discretization of the noisy solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub half_width: f64,
    pub nodes_per_axis: usize,
    pub dt: f64,
    pub horizon: f64,
    /// Number of stored snapshots after the initial one.
    pub snapshots: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            half_width: 4.0,
            nodes_per_axis: 81,
            dt: 2.5e-4,
            horizon: 1.0,
            snapshots: 20,
        }
    }
}

impl GridSpec {
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.nodes_per_axis - 1) as f64
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt - 1e-9).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_width > 0.0) || self.nodes_per_axis < 3 || !(self.dt > 0.0) || !(self.horizon > 0.0) {
            return Err(Error::Input("grid needs R > 0, >= 3 nodes, dt > 0, T > 0".into()));
        }
        if self.snapshots == 0 || self.steps() % self.snapshots != 0 {
            return Err(Error::Input(format!(
                "snapshot count {} must divide the step count {}",
                self.snapshots,
                self.steps()
            )));
        }
        Ok(())
    }
}

/// Finite-state model with common noise through an affine rearrangement.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub core: FiniteStateModel,
    pub rearrangement: AffineMap,
    pub lambda: f64,
    pub alpha: f64,
    pub grid: GridSpec,
}

impl NoiseModel {
    /// Minimum of `pairing - alpha |x - y|^2` over random quadruples in the
    /// simulation box.
    pub fn strong_monotonicity_margin(&self, samples: usize, seed: u64) -> f64 {
        let n = self.core.dim;
        let r = self.grid.half_width;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = f64::INFINITY;
        let draw = |rng: &mut ChaCha8Rng| (0..n).map(|_| rng.random_range(-r..=r)).collect::<Vec<_>>();
        for _ in 0..samples {
            let (x, y, u, v) = (draw(&mut rng), draw(&mut rng), draw(&mut rng), draw(&mut rng));
            let dx = sub(&x, &y);
            let pair = dot(&sub(&self.core.eval_g(&x, &u), &self.core.eval_g(&y, &v)), &dx)
                + dot(&sub(&self.core.eval_f(&x, &u), &self.core.eval_f(&y, &v)), &sub(&u, &v));
            worst = worst.min(pair - self.alpha * dot(&dx, &dx));
        }
        worst
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let n = self.core.dim;
        if n > 3 {
            return Err(Error::Unsupported(format!("grid solvers support N <= 3, got {n}")));
        }
        if self.rearrangement.dim() != n {
            return Err(Error::Dimension {
                expected: n,
                got: self.rearrangement.dim(),
            });
        }
        if !self.rearrangement.maps_box_into_itself(self.grid.half_width) {
            return Err(Error::Precondition("rearrangement does not map the box into itself".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Input("noise rate must be nonnegative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_contraction_stays_in_box() {
        let t = AffineMap::rotation_contraction(2, 0.5, std::f64::consts::FRAC_PI_6);
        assert!(t.maps_box_into_itself(4.0));
        assert!(!AffineMap::rotation_contraction(2, 1.0, 0.5).maps_box_into_itself(4.0));
    }

    #[test]
    fn adjoint_is_transpose() {
        let t = AffineMap::rotation_contraction(2, 0.5, 0.3);
        let (x, v) = ([0.4, -1.2], [2.0, 0.7]);
        let lhs = dot(&mat_vec(&t.linear, &x), &v);
        let rhs = dot(&x, &t.adjoint_apply(&v));
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn grid_validation() {
        let g = GridSpec::default();
        assert!(g.validate().is_ok());
        assert_eq!(g.steps(), 4000);
        assert!((g.spacing() - 0.1).abs() < 1e-15);
        let bad = GridSpec { snapshots: 7, ..g };
        assert!(bad.validate().is_err());
    }
}
