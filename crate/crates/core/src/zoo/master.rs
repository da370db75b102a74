use std::fmt;
use std::sync::Arc;

use super::ScalarFn;
use crate::math::{FeatureMap, MomentSet};

/// Reduced Hamiltonian `h(z, u)` on a moment set, with the terminal map `g`
/// and the particle velocity of the underlying continuous-state game.
pub trait ReducedHamiltonian: Send + Sync {
    fn name(&self) -> &str;
    /// Dimension `m` of `z` and `u`.
    fn dim(&self) -> usize;
    fn moment_set(&self) -> MomentSet;
    fn feature(&self) -> FeatureMap;
    fn h(&self, z: &[f64], u: &[f64]) -> Vec<f64>;
    /// `(z . h_u)_j = sum_i z_i dh_i/du_j`.
    fn z_h_u(&self, z: &[f64], u: &[f64]) -> Vec<f64>;
    fn terminal(&self, z: &[f64]) -> Vec<f64>;
    /// `-D_p H(x, m, D phi(x) psi)` for `d = 1`, with `z` the moments of `m`.
    fn velocity(&self, x: f64, z: &[f64], psi: &[f64]) -> f64;
}

/// `h(z, u) = a(z)|u|^q / q + b(z) u + c(z)` with `phi(y) = |y|^{q'}/q'`.
#[derive(Debug, Clone)]
pub struct PowerMasterModel {
    pub name: String,
    pub q: f64,
    pub a: ScalarFn,
    pub b: ScalarFn,
    pub c: ScalarFn,
    pub g: ScalarFn,
}

impl PowerMasterModel {
    pub fn q_conj(&self) -> f64 {
        self.q / (self.q - 1.0)
    }

    pub fn h_scalar(&self, z: f64, u: f64) -> f64 {
        self.a.eval(z) * u.abs().powf(self.q) / self.q + self.b.eval(z) * u + self.c.eval(z)
    }

    pub fn h_u(&self, z: f64, u: f64) -> f64 {
        self.a.eval(z) * u.abs().powf(self.q - 2.0) * u + self.b.eval(z)
    }

    pub fn h_z(&self, z: f64, u: f64) -> f64 {
        self.a.deriv(z) * u.abs().powf(self.q) / self.q + self.b.deriv(z) * u + self.c.deriv(z)
    }

    pub fn h_uu(&self, z: f64, u: f64) -> f64 {
        (self.q - 1.0) * self.a.eval(z) * u.abs().powf(self.q - 2.0)
    }

    pub fn h_uz(&self, z: f64, u: f64) -> f64 {
        self.a.deriv(z) * u.abs().powf(self.q - 2.0) * u + self.b.deriv(z)
    }
}

impl ReducedHamiltonian for PowerMasterModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        1
    }

    fn moment_set(&self) -> MomentSet {
        MomentSet::HalfLine
    }

    fn feature(&self) -> FeatureMap {
        FeatureMap::power(self.q_conj(), 1)
    }

    fn h(&self, z: &[f64], u: &[f64]) -> Vec<f64> {
        vec![self.h_scalar(z[0], u[0])]
    }

    fn z_h_u(&self, z: &[f64], u: &[f64]) -> Vec<f64> {
        vec![z[0] * self.h_u(z[0], u[0])]
    }

    fn terminal(&self, z: &[f64]) -> Vec<f64> {
        vec![self.g.eval(z[0])]
    }

    fn velocity(&self, x: f64, z: &[f64], psi: &[f64]) -> f64 {
        // H = (1/q')[a|p|^q/q + b p x + c|x|^{q'}], Du = |x|^{q'-2} x psi
        let qc = self.q_conj();
        let p = x.abs().powf(qc - 2.0) * x * psi[0];
        let p = if x == 0.0 { 0.0 } else { p };
        let dph = (self.a.eval(z[0]) * p.abs().powf(self.q - 2.0) * p + self.b.eval(z[0]) * x) / qc;
        -dph
    }
}

pub type Vec3Fn = Arc<dyn Fn(&[f64]) -> [f64; 3] + Send + Sync>;

/// `h(z, u) = (u1^2/2 - f0, u1 u2 - f1, u2^2 - f2)` with
/// `phi(y) = (1, y, y^2/2)`.
#[derive(Clone)]
pub struct QuadraticMasterModel {
    pub name: String,
    pub f: Vec3Fn,
    pub g: Vec3Fn,
}

impl fmt::Debug for QuadraticMasterModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "QuadraticMasterModel({})", self.name)
    }
}

impl QuadraticMasterModel {
    pub fn identity(name: &str) -> Self {
        Self {
            name: name.to_string(),
            f: Arc::new(|z: &[f64]| [z[0], z[1], z[2]]),
            g: Arc::new(|z: &[f64]| [z[0], z[1], z[2]]),
        }
    }
}

impl ReducedHamiltonian for QuadraticMasterModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        3
    }

    fn moment_set(&self) -> MomentSet {
        MomentSet::ParabolicSlice
    }

    fn feature(&self) -> FeatureMap {
        FeatureMap::quadratic()
    }

    fn h(&self, z: &[f64], u: &[f64]) -> Vec<f64> {
        let f = (self.f)(z);
        vec![0.5 * u[1] * u[1] - f[0], u[1] * u[2] - f[1], u[2] * u[2] - f[2]]
    }

    fn z_h_u(&self, z: &[f64], u: &[f64]) -> Vec<f64> {
        vec![
            0.0,
            z[0] * u[1] + z[1] * u[2],
            z[1] * u[1] + 2.0 * z[2] * u[2],
        ]
    }

    fn terminal(&self, z: &[f64]) -> Vec<f64> {
        (self.g)(z).to_vec()
    }

    fn velocity(&self, x: f64, _z: &[f64], psi: &[f64]) -> f64 {
        // H = p^2/2 - ..., Du = psi_1 + x psi_2
        -(psi[1] + x * psi[2])
    }
}
