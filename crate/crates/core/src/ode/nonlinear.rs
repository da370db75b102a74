use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::norm;

/// How the Jacobian is maintained between Newton steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fallback {
    /// Broyden secant updates, refreshed by finite differences on stagnation.
    Secant,
    /// Fresh central-difference Jacobian every step.
    FdNewton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonSpec {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub fallback: Fallback,
    /// Extra full steps taken after the tolerance is met, while the residual
    /// keeps shrinking.
    pub polish: usize,
}

impl Default for NewtonSpec {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
            damping: 1.0,
            fallback: Fallback::FdNewton,
            polish: 2,
        }
    }
}

impl NewtonSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Input(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Input("tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of a root solve; `converged == false` is a report, not an error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootReport {
    pub x: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Residual norm after each accepted iterate, starting with the guess.
    pub trace: Vec<f64>,
}

/// Central-difference step for model Jacobians.
pub(crate) const FD_STEP: f64 = 1e-6;

/// Relative step of the five-point stencil used inside the root solver.
const ROOT_FD_STEP: f64 = 1e-3;

/// Fourth-order central differences; residual maps here are ODE solves, so
/// the wider stencil keeps the Jacobian accurate to ~1e-12.
fn fd_jacobian<R>(res: &mut R, x: &[f64], r0_len: usize) -> Result<DMatrix<f64>>
where
    R: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(r0_len, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = ROOT_FD_STEP * x[j].abs().max(1.0);
        let mut eval = |off: f64, xp: &mut Vec<f64>| {
            xp[j] = x[j] + off;
            let r = res(xp);
            xp[j] = x[j];
            r
        };
        let r1 = eval(h, &mut xp)?;
        let rm1 = eval(-h, &mut xp)?;
        let r2 = eval(2.0 * h, &mut xp)?;
        let rm2 = eval(-2.0 * h, &mut xp)?;
        for i in 0..r0_len {
            jac[(i, j)] = (8.0 * (r1[i] - rm1[i]) - (r2[i] - rm2[i])) / (12.0 * h);
        }
    }
    Ok(jac)
}

fn newton_direction(jac: &DMatrix<f64>, r: &[f64]) -> Option<Vec<f64>> {
    let rhs = DVector::from_iterator(r.len(), r.iter().map(|v| -v));
    if jac.is_square() {
        if let Some(d) = jac.clone().lu().solve(&rhs) {
            if d.iter().all(|v| v.is_finite()) {
                return Some(d.iter().copied().collect());
            }
        }
    }
    // Tikhonov-regularized normal equations
    let jt = jac.transpose();
    let mut normal = &jt * jac;
    let mu = 1e-12 * normal.amax().max(1.0);
    for k in 0..normal.nrows() {
        normal[(k, k)] += mu;
    }
    let d = normal.cholesky()?.solve(&(jt * rhs));
    d.iter()
        .all(|v| v.is_finite())
        .then(|| d.iter().copied().collect())
}

/// Damped Newton with backtracking on the residual norm.
pub fn solve_root<R>(mut res: R, guess: &[f64], spec: &NewtonSpec) -> Result<RootReport>
where
    R: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    spec.validate()?;
    let mut x = guess.to_vec();
    let mut r = res(&x)?;
    let mut rn = norm(&r);
    let mut trace = vec![rn];
    if rn <= spec.tol {
        return Ok(RootReport {
            x,
            residual: rn,
            iterations: 0,
            converged: true,
            trace,
        });
    }
    let mut jac = fd_jacobian(&mut res, &x, r.len())?;
    let mut fresh = true;
    let mut iterations = 0;
    let mut polished = 0;
    let mut converged = false;
    while iterations < spec.max_iter {
        let polishing = rn <= spec.tol;
        let Some(dir) = newton_direction(&jac, &r) else {
            if !fresh {
                jac = fd_jacobian(&mut res, &x, r.len())?;
                fresh = true;
                continue;
            }
            if polishing {
                break;
            }
            return Err(Error::NewtonFailure {
                iterations,
                residual: rn,
            });
        };
        let theta = if polishing { 1.0 } else { spec.damping };
        let mut lambda = theta;
        let mut accepted = None;
        for _ in 0..40 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + lambda * d).collect();
            if let Ok(rn_vec) = res(&xn) {
                let nn = norm(&rn_vec);
                if nn.is_finite() && nn < rn {
                    accepted = Some((xn, rn_vec, nn));
                    break;
                }
            }
            if polishing {
                break;
            }
            lambda *= 0.5;
        }
        let Some((xn, rnew, nnew)) = accepted else {
            if polishing {
                break;
            }
            if !fresh {
                jac = fd_jacobian(&mut res, &x, r.len())?;
                fresh = true;
                continue;
            }
            break;
        };
        if polishing {
            polished += 1;
        } else {
            iterations += 1;
        }
        let dx: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let dr: Vec<f64> = rnew.iter().zip(&r).map(|(a, b)| a - b).collect();
        x = xn;
        r = rnew;
        rn = nnew;
        trace.push(rn);
        if rn <= spec.tol {
            converged = true;
            if polished >= spec.polish {
                break;
            }
        }
        if converged {
            // Polishing steps reuse the last Jacobian.
            continue;
        }
        match spec.fallback {
            Fallback::Secant => {
                broyden_update(&mut jac, &dx, &dr);
                fresh = false;
            }
            Fallback::FdNewton => {
                jac = fd_jacobian(&mut res, &x, r.len())?;
                fresh = true;
            }
        }
    }
    converged |= rn <= spec.tol;
    Ok(RootReport {
        x,
        residual: rn,
        iterations,
        converged,
        trace,
    })
}

fn broyden_update(jac: &mut DMatrix<f64>, dx: &[f64], dr: &[f64]) {
    let dxv = DVector::from_column_slice(dx);
    let denom = dxv.dot(&dxv);
    if denom > 0.0 {
        let jdx = &*jac * &dxv;
        let corr = DVector::from_iterator(dr.len(), dr.iter().zip(jdx.iter()).map(|(a, b)| a - b));
        *jac += corr * dxv.transpose() / denom;
    }
}

/// Preimage of `target` under `map`, to residual `spec.tol`.
pub fn newton_invert<M>(mut map: M, target: &[f64], guess: &[f64], spec: &NewtonSpec) -> Result<RootReport>
where
    M: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if target.len() != guess.len() {
        return Err(Error::Dimension {
            expected: target.len(),
            got: guess.len(),
        });
    }
    let rep = solve_root(
        |x| {
            let y = map(x)?;
            Ok(y.iter().zip(target).map(|(a, b)| a - b).collect())
        },
        guess,
        spec,
    )?;
    if !rep.converged {
        return Err(Error::NewtonFailure {
            iterations: rep.iterations,
            residual: rep.residual,
        });
    }
    Ok(rep)
}
