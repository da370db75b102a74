use std::fmt;
use std::sync::Arc;

use super::ScalarFn;
use crate::error::{Error, Result};
use crate::math::ParticleCloud;

/// One-dimensional game whose Hamiltonian depends on the population through
/// `phi(t) = int Phi(t, y, Du) dm_t` and whose terminal cost depends on `m`
/// through declared moment functionals.
pub trait ControlsSystem: Send + Sync {
    fn name(&self) -> &str;
    /// Dimension `m` of `phi`.
    fn phi_dim(&self) -> usize;
    fn hamiltonian(&self, x: f64, p: f64, phi: &[f64]) -> f64;
    fn dp_h(&self, x: f64, p: f64, phi: &[f64]) -> f64;
    fn dx_h(&self, x: f64, p: f64, phi: &[f64]) -> f64;
    /// Moment functionals of `m` seen by the terminal cost.
    fn terminal_moments(&self, m: &ParticleCloud) -> Vec<f64>;
    fn terminal(&self, x: f64, moments: &[f64]) -> f64;
    fn dx_terminal(&self, x: f64, moments: &[f64]) -> f64;
    fn feature(&self, t: f64, x: f64, p: f64) -> Vec<f64>;
    fn dt_feature(&self, t: f64, x: f64, p: f64) -> Vec<f64>;
    fn dx_feature(&self, t: f64, x: f64, p: f64) -> Vec<f64>;
    fn dp_feature(&self, t: f64, x: f64, p: f64) -> Vec<f64>;
    /// Row-major `m x m`.
    fn coef_a(&self, t: f64, phi: &[f64]) -> Vec<f64>;
    fn coef_b(&self, t: f64, phi: &[f64]) -> Vec<f64>;

    /// `f(t, phi) = A(t, phi) phi + B(t, phi)`.
    fn drift(&self, t: f64, phi: &[f64]) -> Vec<f64> {
        let m = self.phi_dim();
        let a = self.coef_a(t, phi);
        let b = self.coef_b(t, phi);
        (0..m)
            .map(|i| (0..m).map(|j| a[i * m + j] * phi[j]).sum::<f64>() + b[i])
            .collect()
    }
}

/// A controls system together with its growth exponents.
#[derive(Clone)]
pub struct ControlsModel {
    pub system: Arc<dyn ControlsSystem>,
    pub q: f64,
    pub r: f64,
    /// Moment order `lambda > gamma` tracked by the diagnostics.
    pub lambda: f64,
}

impl fmt::Debug for ControlsModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlsModel")
            .field("system", &self.system.name())
            .field("q", &self.q)
            .field("r", &self.r)
            .field("lambda", &self.lambda)
            .finish()
    }
}

impl ControlsModel {
    pub fn new(system: Arc<dyn ControlsSystem>, q: f64, r: f64, lambda: f64) -> Result<Self> {
        if !(q > 1.0) || !(r >= q) {
            return Err(Error::Input(format!("need q > 1 and r >= q, got q={q}, r={r}")));
        }
        let m = Self { system, q, r, lambda };
        if !(lambda > m.gamma()) {
            return Err(Error::Input(format!(
                "moment order {lambda} must exceed gamma = {}",
                m.gamma()
            )));
        }
        Ok(m)
    }

    /// `gamma = r / (q - 1)`.
    pub fn gamma(&self) -> f64 {
        self.r / (self.q - 1.0)
    }

    pub fn q_conj(&self) -> f64 {
        self.q / (self.q - 1.0)
    }
}

/// `H = p^2/2`, `G = x^2/2`, `Phi = p`, `A = 0`, `B = offset`.
#[derive(Debug, Clone)]
pub struct QuadControls {
    pub b_offset: f64,
}

impl ControlsSystem for QuadControls {
    fn name(&self) -> &str {
        "quad-controls"
    }
    fn phi_dim(&self) -> usize {
        1
    }
    fn hamiltonian(&self, _x: f64, p: f64, _phi: &[f64]) -> f64 {
        0.5 * p * p
    }
    fn dp_h(&self, _x: f64, p: f64, _phi: &[f64]) -> f64 {
        p
    }
    fn dx_h(&self, _x: f64, _p: f64, _phi: &[f64]) -> f64 {
        0.0
    }
    fn terminal_moments(&self, _m: &ParticleCloud) -> Vec<f64> {
        Vec::new()
    }
    fn terminal(&self, x: f64, _moments: &[f64]) -> f64 {
        0.5 * x * x
    }
    fn dx_terminal(&self, x: f64, _moments: &[f64]) -> f64 {
        x
    }
    fn feature(&self, _t: f64, _x: f64, p: f64) -> Vec<f64> {
        vec![p]
    }
    fn dt_feature(&self, _t: f64, _x: f64, _p: f64) -> Vec<f64> {
        vec![0.0]
    }
    fn dx_feature(&self, _t: f64, _x: f64, _p: f64) -> Vec<f64> {
        vec![0.0]
    }
    fn dp_feature(&self, _t: f64, _x: f64, _p: f64) -> Vec<f64> {
        vec![1.0]
    }
    fn coef_a(&self, _t: f64, _phi: &[f64]) -> Vec<f64> {
        vec![0.0]
    }
    fn coef_b(&self, _t: f64, _phi: &[f64]) -> Vec<f64> {
        vec![self.b_offset]
    }
}

/// Affine drift `b(x, phi) = a(phi) x + b(phi)` with `H(p) = p^2/2`,
/// homogeneous feature `Phi(p) = |p|^k / k` and terminal cost
/// `G(x, m) = x^2/2 + kappa x mean(m)`.
#[derive(Debug, Clone)]
pub struct AffineDriftControls {
    pub a: ScalarFn,
    pub b: ScalarFn,
    pub k: f64,
    pub kappa: f64,
}

impl ControlsSystem for AffineDriftControls {
    fn name(&self) -> &str {
        "affine-drift"
    }
    fn phi_dim(&self) -> usize {
        1
    }
    fn hamiltonian(&self, x: f64, p: f64, phi: &[f64]) -> f64 {
        0.5 * p * p - (self.a.eval(phi[0]) * x + self.b.eval(phi[0])) * p
    }
    fn dp_h(&self, x: f64, p: f64, phi: &[f64]) -> f64 {
        p - (self.a.eval(phi[0]) * x + self.b.eval(phi[0]))
    }
    fn dx_h(&self, _x: f64, p: f64, phi: &[f64]) -> f64 {
        -self.a.eval(phi[0]) * p
    }
    fn terminal_moments(&self, m: &ParticleCloud) -> Vec<f64> {
        vec![m.average(|y| y[0])]
    }
    fn terminal(&self, x: f64, moments: &[f64]) -> f64 {
        0.5 * x * x + self.kappa * x * moments[0]
    }
    fn dx_terminal(&self, x: f64, moments: &[f64]) -> f64 {
        x + self.kappa * moments[0]
    }
    fn feature(&self, _t: f64, _x: f64, p: f64) -> Vec<f64> {
        vec![p.abs().powf(self.k) / self.k]
    }
    fn dt_feature(&self, _t: f64, _x: f64, _p: f64) -> Vec<f64> {
        vec![0.0]
    }
    fn dx_feature(&self, _t: f64, _x: f64, _p: f64) -> Vec<f64> {
        vec![0.0]
    }
    fn dp_feature(&self, _t: f64, _x: f64, p: f64) -> Vec<f64> {
        vec![p.abs().powf(self.k - 2.0) * p]
    }
    fn coef_a(&self, _t: f64, phi: &[f64]) -> Vec<f64> {
        vec![self.a.eval(phi[0]) * self.k]
    }
    fn coef_b(&self, _t: f64, _phi: &[f64]) -> Vec<f64> {
        vec![0.0]
    }
}

/// Power family in one dimension:
/// `H = (1/p')(|p|^p/p - x a(phi) p)`, `G = (1/p')|x|^{p'} g(z)`,
/// `Phi = |p|^q / q`, `z = (1/p') int |y|^{p'} dm`.
#[derive(Debug, Clone)]
pub struct PowerControlsSystem {
    pub p: f64,
    pub q: f64,
    pub a: ScalarFn,
    pub g: ScalarFn,
}

impl PowerControlsSystem {
    fn pc(&self) -> f64 {
        self.p / (self.p - 1.0)
    }
}

impl ControlsSystem for PowerControlsSystem {
    fn name(&self) -> &str {
        "power-controls"
    }
    fn phi_dim(&self) -> usize {
        1
    }
    fn hamiltonian(&self, x: f64, p: f64, phi: &[f64]) -> f64 {
        (p.abs().powf(self.p) / self.p - x * self.a.eval(phi[0]) * p) / self.pc()
    }
    fn dp_h(&self, x: f64, p: f64, phi: &[f64]) -> f64 {
        (p.abs().powf(self.p - 2.0) * p - x * self.a.eval(phi[0])) / self.pc()
    }
    fn dx_h(&self, _x: f64, p: f64, phi: &[f64]) -> f64 {
        -self.a.eval(phi[0]) * p / self.pc()
    }
    fn terminal_moments(&self, m: &ParticleCloud) -> Vec<f64> {
        let pc = self.pc();
        vec![m.average(|y| y[0].abs().powf(pc) / pc)]
    }
    fn terminal(&self, x: f64, moments: &[f64]) -> f64 {
        let pc = self.pc();
        x.abs().powf(pc) / pc * self.g.eval(moments[0])
    }
    fn dx_terminal(&self, x: f64, moments: &[f64]) -> f64 {
        x.abs().powf(self.pc() - 2.0) * x * self.g.eval(moments[0])
    }
    fn feature(&self, _t: f64, _x: f64, p: f64) -> Vec<f64> {
        vec![p.abs().powf(self.q) / self.q]
    }
    fn dt_feature(&self, _t: f64, _x: f64, _p: f64) -> Vec<f64> {
        vec![0.0]
    }
    fn dx_feature(&self, _t: f64, _x: f64, _p: f64) -> Vec<f64> {
        vec![0.0]
    }
    fn dp_feature(&self, _t: f64, _x: f64, p: f64) -> Vec<f64> {
        vec![p.abs().powf(self.q - 2.0) * p]
    }
    fn coef_a(&self, _t: f64, phi: &[f64]) -> Vec<f64> {
        vec![self.q / self.pc() * self.a.eval(phi[0])]
    }
    fn coef_b(&self, _t: f64, _phi: &[f64]) -> Vec<f64> {
        vec![0.0]
    }
}

/// Scalar data of the power family reduced to ODEs in `(psi, z, phi)`.
#[derive(Debug, Clone)]
pub struct PowerControlsModel {
    pub name: String,
    pub p: f64,
    pub q: f64,
    pub a: ScalarFn,
    pub g: ScalarFn,
    pub m0: ParticleCloud,
    pub horizon: f64,
    /// Declared `(delta0, delta1)` with `delta0 < phi^{1/p} a'(phi) <= delta1`.
    pub band: Option<(f64, f64)>,
}

impl PowerControlsModel {
    pub fn p_conj(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    /// `z0 = (1/p') int |y|^{p'} dm0`.
    pub fn z0(&self) -> f64 {
        let pc = self.p_conj();
        self.m0.average(|y| y[0].abs().powf(pc) / pc)
    }

    /// `alpha0 = (1/q) int |x|^{q(p'-1)} dm0`.
    pub fn alpha0(&self) -> f64 {
        let e = self.q * (self.p_conj() - 1.0);
        self.m0.average(|y| y[0].abs().powf(e)) / self.q
    }

    /// The full (unreduced) controls model with the same data.
    pub fn full_model(&self) -> Result<ControlsModel> {
        let system = PowerControlsSystem {
            p: self.p,
            q: self.q,
            a: self.a.clone(),
            g: self.g.clone(),
        };
        // Phi grows like |p|^q and H like |p|^p; take r = max(p, q) + 1 slack.
        let q_h = self.p;
        let r = self.q.max(q_h);
        let gamma = r / (q_h - 1.0);
        ControlsModel::new(Arc::new(system), q_h, r, gamma + 1.0)
    }
}
