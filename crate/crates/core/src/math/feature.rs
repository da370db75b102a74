use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use super::ParticleCloud;
use crate::error::{check_finite, Error, Result};

pub type FeatureFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum FeatureFamily {
    /// `phi(y) = |y|^{q'} / q'`.
    Power { q_prime: f64 },
    /// `phi(y) = (1, y, y^2/2)`.
    Quadratic,
    Custom(String),
}

/// Moment-generating feature `phi: R^d -> R^m` with its derivative.
#[derive(Clone)]
pub struct FeatureMap {
    pub family: FeatureFamily,
    pub dim_in: usize,
    pub dim_out: usize,
    /// Growth exponent `K` in `|phi(x)| <= C (1 + |x|^K)`.
    pub growth: f64,
    phi: FeatureFn,
    /// Row-major `m x d` Jacobian.
    dphi: FeatureFn,
}

impl fmt::Debug for FeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeatureMap")
            .field("family", &self.family)
            .field("dim_in", &self.dim_in)
            .field("dim_out", &self.dim_out)
            .field("growth", &self.growth)
            .finish()
    }
}

impl FeatureMap {
    pub fn power(q_prime: f64, dim_in: usize) -> Self {
        let phi: FeatureFn = Arc::new(move |y: &[f64]| {
            let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            vec![r.powf(q_prime) / q_prime]
        });
        let dphi: FeatureFn = Arc::new(move |y: &[f64]| {
            let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            let s = if r == 0.0 { 0.0 } else { r.powf(q_prime - 2.0) };
            y.iter().map(|v| s * v).collect()
        });
        Self {
            family: FeatureFamily::Power { q_prime },
            dim_in,
            dim_out: 1,
            growth: q_prime,
            phi,
            dphi,
        }
    }

    pub fn quadratic() -> Self {
        Self {
            family: FeatureFamily::Quadratic,
            dim_in: 1,
            dim_out: 3,
            growth: 2.0,
            phi: Arc::new(|y: &[f64]| vec![1.0, y[0], 0.5 * y[0] * y[0]]),
            dphi: Arc::new(|y: &[f64]| vec![0.0, 1.0, y[0]]),
        }
    }

    pub fn custom(
        name: &str,
        dim_in: usize,
        dim_out: usize,
        growth: f64,
        phi: FeatureFn,
        dphi: FeatureFn,
    ) -> Self {
        Self {
            family: FeatureFamily::Custom(name.to_string()),
            dim_in,
            dim_out,
            growth,
            phi,
            dphi,
        }
    }

    pub fn eval(&self, y: &[f64]) -> Vec<f64> {
        (self.phi)(y)
    }

    pub fn jacobian(&self, y: &[f64]) -> Vec<f64> {
        (self.dphi)(y)
    }

    /// Empirical `C` in the growth bound over the given sample points.
    pub fn growth_constant<'a>(&self, samples: impl IntoIterator<Item = &'a [f64]>) -> f64 {
        let mut c: f64 = 0.0;
        for x in samples {
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let v = self.eval(x);
            let norm = v.iter().map(|v| v * v).sum::<f64>().sqrt();
            c = c.max(norm / (1.0 + r.powf(self.growth)));
        }
        c
    }
}

/// `(1/M) sum_i phi(y_i)`, summed in particle order.
pub fn moments(cloud: &ParticleCloud, fmap: &FeatureMap) -> Result<Vec<f64>> {
    if cloud.dim() != fmap.dim_in {
        return Err(Error::Dimension {
            expected: fmap.dim_in,
            got: cloud.dim(),
        });
    }
    let mut acc = vec![0.0; fmap.dim_out];
    for p in cloud.points() {
        let v = fmap.eval(p);
        check_finite("feature map", p, &v)?;
        for (a, b) in acc.iter_mut().zip(&v) {
            *a += b;
        }
    }
    let m = cloud.len() as f64;
    acc.iter_mut().for_each(|a| *a /= m);
    Ok(acc)
}
