use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_dim, Error, Result};

/// Gram matrices worse than this are treated as singular.
const MAX_CONDITION: f64 = 1e12;

/// Surjective linear map `L: R^N -> R^n` with its adjoint, right inverse and
/// an orthonormal basis of its kernel.
#[derive(Debug, Clone)]
pub struct ReductionMap {
    l: DMatrix<f64>,
    adjoint: DMatrix<f64>,
    right_inverse: DMatrix<f64>,
    gram_inverse: DMatrix<f64>,
    kernel: DMatrix<f64>,
    condition: f64,
}

/// The three linear images computed by [`ReductionMap::reduce_and_lift`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lifted {
    pub lx: Vec<f64>,
    pub lstar_u: Vec<f64>,
    /// `L†(Lx)`, the minimum-norm point of the fiber through `x`.
    pub ldag_lx: Vec<f64>,
}

impl ReductionMap {
    pub fn new(l: DMatrix<f64>) -> Result<Self> {
        let (n, big_n) = l.shape();
        if n == 0 || n > big_n {
            return Err(Error::DegenerateMap(format!(
                "need 0 < n <= N, got n = {n}, N = {big_n}"
            )));
        }
        if l.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateMap("non-finite entry".into()));
        }
        let adjoint = l.transpose();
        let gram = &l * &adjoint;
        let sv = gram.clone().singular_values();
        let smax = sv.max();
        let smin = sv.min();
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(condition < MAX_CONDITION) {
            return Err(Error::DegenerateMap(format!(
                "L L* is numerically singular (condition {condition:e})"
            )));
        }
        let gram_inverse = gram
            .try_inverse()
            .ok_or_else(|| Error::DegenerateMap("L L* not invertible".into()))?;
        let right_inverse = &adjoint * &gram_inverse;
        let projector = DMatrix::<f64>::identity(big_n, big_n) - &right_inverse * &l;
        let kernel = orthonormal_columns(&projector, big_n - n);
        Ok(Self {
            l,
            adjoint,
            right_inverse,
            gram_inverse,
            kernel,
            condition,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let big_n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != big_n) {
            return Err(Error::Input("ragged reduction matrix".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(n, big_n, &flat))
    }

    /// Reduced dimension `n`.
    pub fn n(&self) -> usize {
        self.l.nrows()
    }

    /// Full dimension `N`.
    pub fn big_n(&self) -> usize {
        self.l.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn adjoint(&self) -> &DMatrix<f64> {
        &self.adjoint
    }

    pub fn right_inverse(&self) -> &DMatrix<f64> {
        &self.right_inverse
    }

    /// Columns form an orthonormal basis of `ker L` (possibly empty).
    pub fn kernel_basis(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    /// Condition number of `L L*`.
    pub fn condition_number(&self) -> f64 {
        self.condition
    }

    pub fn reduce(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.big_n(), x.len())?;
        Ok(mat_vec(&self.l, x))
    }

    pub fn lift(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n(), u.len())?;
        Ok(mat_vec(&self.adjoint, u))
    }

    pub fn right_inv(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n(), y.len())?;
        Ok(mat_vec(&self.right_inverse, y))
    }

    /// `(L L*)^{-1} v`.
    pub fn solve_gram(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n(), v.len())?;
        Ok(mat_vec(&self.gram_inverse, v))
    }

    pub fn reduce_and_lift(&self, x: &[f64], u: &[f64]) -> Result<Lifted> {
        let lx = self.reduce(x)?;
        let lstar_u = self.lift(u)?;
        let ldag_lx = self.right_inv(&lx)?;
        Ok(Lifted {
            lx,
            lstar_u,
            ldag_lx,
        })
    }

    /// `max |L L† - I|` entrywise.
    pub fn right_inverse_defect(&self) -> f64 {
        let n = self.n();
        let p = &self.l * &self.right_inverse - DMatrix::<f64>::identity(n, n);
        p.amax()
    }

    pub(crate) fn apply_l(&self, x: &[f64]) -> Vec<f64> {
        mat_vec(&self.l, x)
    }

    pub(crate) fn apply_adjoint(&self, u: &[f64]) -> Vec<f64> {
        mat_vec(&self.adjoint, u)
    }

    pub(crate) fn apply_right_inverse(&self, y: &[f64]) -> Vec<f64> {
        mat_vec(&self.right_inverse, y)
    }

    pub(crate) fn apply_gram_inverse(&self, v: &[f64]) -> Vec<f64> {
        mat_vec(&self.gram_inverse, v)
    }

    /// Point of `ker L` with the given coordinates in the kernel basis.
    pub fn kernel_point(&self, coords: &[f64]) -> Vec<f64> {
        let k = self.kernel.ncols();
        let c = DVector::from_iterator(k, coords.iter().copied().take(k));
        (&self.kernel * c).iter().copied().collect()
    }
}

pub(crate) fn mat_vec(m: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * x[j]).sum())
        .collect()
}

/// Modified Gram-Schmidt over the columns of `a`, keeping up to `want`
/// columns that survive with norm above 1e-8.
fn orthonormal_columns(a: &DMatrix<f64>, want: usize) -> DMatrix<f64> {
    let rows = a.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(want);
    for j in 0..a.ncols() {
        if basis.len() == want {
            break;
        }
        let mut v = a.column(j).into_owned();
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v -= b * c;
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            basis.push(v / norm);
        }
    }
    let mut out = DMatrix::zeros(rows, basis.len());
    for (j, b) in basis.iter().enumerate() {
        out.set_column(j, b);
    }
    out
}
