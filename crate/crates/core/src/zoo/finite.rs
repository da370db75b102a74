use std::fmt;
use std::sync::Arc;

use crate::error::{check_finite, Result};
use crate::ode::FD_STEP;

/// `(x, U, out)` callback for a map `R^N x R^N -> R^N`.
pub type PairFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `(x, out)` callback for a map `R^N -> R^N`.
pub type VecFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// `(x, U, out)` callback filling the row-major `N x N` Jacobian in `U`.
pub type PairJac = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

/// Which members of the pair `(G, F)` are declared strictly monotone.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StrictFlags {
    pub g: bool,
    pub f: bool,
}

/// Data `(F, G, U0)` of a finite-state master equation on `R^N`.
#[derive(Clone)]
pub struct FiniteStateModel {
    pub name: String,
    pub dim: usize,
    pub f: PairFn,
    pub g: PairFn,
    pub u0: VecFn,
    pub du_f: Option<PairJac>,
    pub du_g: Option<PairJac>,
    pub strict: StrictFlags,
}

/// Reduced data `(F~, G~, U0~)` live on `R^n` with the same shape.
pub type ReducedFiniteModel = FiniteStateModel;

impl fmt::Debug for FiniteStateModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FiniteStateModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("analytic_du_f", &self.du_f.is_some())
            .field("analytic_du_g", &self.du_g.is_some())
            .finish()
    }
}

impl FiniteStateModel {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        f: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        g: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        u0: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            f: Arc::new(f),
            g: Arc::new(g),
            u0: Arc::new(u0),
            du_f: None,
            du_g: None,
            strict: StrictFlags::default(),
        }
    }

    pub fn with_jacobians(mut self, du_f: PairJac, du_g: PairJac) -> Self {
        self.du_f = Some(du_f);
        self.du_g = Some(du_g);
        self
    }

    pub fn with_strict(mut self, strict: StrictFlags) -> Self {
        self.strict = strict;
        self
    }

    pub fn eval_f(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.f)(x, u, &mut out);
        out
    }

    pub fn eval_g(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.g)(x, u, &mut out);
        out
    }

    pub fn eval_u0(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.u0)(x, &mut out);
        out
    }

    /// Like [`Self::eval_f`] but reports non-finite output.
    pub fn try_f(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let v = self.eval_f(x, u);
        check_finite("F", x, &v)?;
        Ok(v)
    }

    pub fn try_g(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let v = self.eval_g(x, u);
        check_finite("G", x, &v)?;
        Ok(v)
    }

    pub fn try_u0(&self, x: &[f64]) -> Result<Vec<f64>> {
        let v = self.eval_u0(x);
        check_finite("U0", x, &v)?;
        Ok(v)
    }

    /// `grad_U F(x, U)`, analytic when available.
    pub fn jac_u_f(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        match &self.du_f {
            Some(j) => {
                let mut out = vec![0.0; self.dim * self.dim];
                j(x, u, &mut out);
                out
            }
            None => fd_jac_u(&self.f, self.dim, x, u),
        }
    }

    pub fn jac_u_g(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        match &self.du_g {
            Some(j) => {
                let mut out = vec![0.0; self.dim * self.dim];
                j(x, u, &mut out);
                out
            }
            None => fd_jac_u(&self.g, self.dim, x, u),
        }
    }

    pub fn fd_jac_u_f(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        fd_jac_u(&self.f, self.dim, x, u)
    }

    pub fn fd_jac_u_g(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        fd_jac_u(&self.g, self.dim, x, u)
    }
}

/// Central differences in `U` with step `1e-6`.
pub fn fd_jac_u(f: &PairFn, n: usize, x: &[f64], u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    let mut up = u.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        up[j] = u[j] + FD_STEP;
        f(x, &up, &mut fp);
        up[j] = u[j] - FD_STEP;
        f(x, &up, &mut fm);
        up[j] = u[j];
        for i in 0..n {
            out[i * n + j] = (fp[i] - fm[i]) / (2.0 * FD_STEP);
        }
    }
    out
}
