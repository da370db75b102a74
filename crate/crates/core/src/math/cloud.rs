use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use crate::error::{Error, Result};

/// Equal-weight empirical measure on `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleCloud {
    points: Vec<f64>,
    dim: usize,
}

impl ParticleCloud {
    pub fn new(points: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Input("cloud dimension must be positive".into()));
        }
        if points.is_empty() || points.len() % dim != 0 {
            return Err(Error::Input(format!(
                "cloud needs a positive multiple of {dim} coordinates, got {}",
                points.len()
            )));
        }
        if let Some(i) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::Evaluation {
                what: "cloud coordinate".into(),
                at: vec![i as f64],
            });
        }
        Ok(Self { points, dim })
    }

    pub fn from_1d(points: Vec<f64>) -> Result<Self> {
        Self::new(points, 1)
    }

    pub fn dirac(at: &[f64]) -> Result<Self> {
        Self::new(at.to_vec(), at.len())
    }

    /// Midpoint quantiles of the uniform law on `[a, b]`.
    pub fn uniform_quantiles(a: f64, b: f64, m: usize) -> Result<Self> {
        if m == 0 || !(b > a) {
            return Err(Error::Input("need m >= 1 and a < b".into()));
        }
        let w = (b - a) / m as f64;
        Self::from_1d((0..m).map(|i| a + w * (i as f64 + 0.5)).collect())
    }

    /// Midpoint quantiles `F^{-1}((i + 1/2) / m)` of a continuous law.
    pub fn quantiles_of<D: ContinuousCDF<f64, f64>>(law: &D, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Input("need m >= 1".into()));
        }
        Self::from_1d(
            (0..m)
                .map(|i| law.inverse_cdf((i as f64 + 0.5) / m as f64))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn raw(&self) -> &[f64] {
        &self.points
    }

    /// Disjoint union with weights proportional to particle counts.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut pts = self.points.clone();
        pts.extend_from_slice(&other.points);
        Self::new(pts, self.dim)
    }

    /// Mean of `f` over the particles, summed in index order.
    pub fn average(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let mut s = 0.0;
        for p in self.points() {
            s += f(p);
        }
        s / self.len() as f64
    }

    /// Sorted coordinates of a one-dimensional cloud.
    pub fn sorted_1d(&self) -> Result<Vec<f64>> {
        if self.dim != 1 {
            return Err(Error::Unsupported("sorting needs d = 1".into()));
        }
        let mut v = self.points.clone();
        v.sort_by(f64::total_cmp);
        Ok(v)
    }

    /// Quantile function of a 1D cloud at level `s` in (0,1).
    pub fn quantile(&self, s: f64) -> Result<f64> {
        let v = self.sorted_1d()?;
        let m = v.len();
        let idx = ((s * m as f64).ceil() as usize).clamp(1, m) - 1;
        Ok(v[idx])
    }
}
