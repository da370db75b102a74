use serde::{Deserialize, Serialize};

use super::integrate::{integrate, IntegratorSpec, Record, Trajectory};
use super::nonlinear::{solve_root, Fallback, NewtonSpec};
use crate::error::{Error, Result};
use crate::math::{norm, sub};

/// Which end of the horizon carries the unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShootDirection {
    /// Unknown is the backward variable at `t = 0`; the mismatch is measured
    /// against the terminal coupling at `T`.
    Forward,
    /// Unknown is the forward variable at `T`; the backward variable starts
    /// from the coupling there and the mismatch is measured at `t = 0`.
    Backward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootingSpec {
    pub guess: Vec<f64>,
    pub damping: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub fallback: Fallback,
    pub direction: ShootDirection,
    pub integrator: IntegratorSpec,
}

impl ShootingSpec {
    pub fn new(guess: Vec<f64>, direction: ShootDirection) -> Self {
        Self {
            guess,
            damping: 1.0,
            max_iter: 100,
            tol: 1e-10,
            fallback: Fallback::Secant,
            direction,
            integrator: IntegratorSpec::default(),
        }
    }
}

/// Two-point problem with state `[psi (k components); z (m components)]`.
///
/// `psi(T) = terminal(z(T))` and the forward block starts from
/// `initial(psi(0))`, which lets the initial forward state depend on the
/// backward one.
pub struct FbProblem<'a> {
    pub backward_dim: usize,
    pub forward_dim: usize,
    pub horizon: f64,
    pub field: &'a dyn Fn(f64, &[f64], &mut [f64]),
    pub terminal: &'a dyn Fn(&[f64]) -> Vec<f64>,
    pub initial: &'a dyn Fn(&[f64]) -> Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ShootReport {
    pub unknown: Vec<f64>,
    /// Full path on `[0, T]` in increasing time.
    pub trajectory: Trajectory,
    /// `|psi(T) - terminal(z(T))|`.
    pub terminal_residual: f64,
    /// `|z(0) - initial(psi(0))|`.
    pub initial_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

impl FbProblem<'_> {
    fn dims(&self) -> usize {
        self.backward_dim + self.forward_dim
    }

    fn path(&self, s: &[f64], dir: ShootDirection, spec: &IntegratorSpec, record: Record) -> Result<Trajectory> {
        let k = self.backward_dim;
        let mut y = Vec::with_capacity(self.dims());
        match dir {
            ShootDirection::Forward => {
                y.extend_from_slice(s);
                y.extend(self.initial_value(s)?);
                integrate(self.field, &y, 0.0, self.horizon, spec, record)
            }
            ShootDirection::Backward => {
                let psi_t = (self.terminal)(s);
                if psi_t.len() != k {
                    return Err(Error::Dimension {
                        expected: k,
                        got: psi_t.len(),
                    });
                }
                y.extend(psi_t);
                y.extend_from_slice(s);
                integrate(self.field, &y, self.horizon, 0.0, spec, record)
            }
        }
    }

    fn initial_value(&self, psi0: &[f64]) -> Result<Vec<f64>> {
        let z0 = (self.initial)(psi0);
        if z0.len() != self.forward_dim {
            return Err(Error::Dimension {
                expected: self.forward_dim,
                got: z0.len(),
            });
        }
        Ok(z0)
    }

    fn residual(&self, s: &[f64], dir: ShootDirection, spec: &IntegratorSpec) -> Result<Vec<f64>> {
        let k = self.backward_dim;
        let tr = self.path(s, dir, spec, Record::Final)?;
        let end = tr.final_state();
        match dir {
            ShootDirection::Forward => {
                let target = (self.terminal)(&end[k..]);
                Ok(sub(&end[..k], &target))
            }
            ShootDirection::Backward => {
                let z0 = self.initial_value(&end[..k])?;
                Ok(sub(&end[k..], &z0))
            }
        }
    }
}

/// Solve a forward-backward ODE system by shooting on one end's unknown.
///
/// Non-convergence comes back as a report with `converged == false` and the
/// residual trace; only invalid input and blow-up at the initial guess are
/// errors.
pub fn shoot_forward_backward(problem: &FbProblem<'_>, spec: &ShootingSpec) -> Result<ShootReport> {
    let want = match spec.direction {
        ShootDirection::Forward => problem.backward_dim,
        ShootDirection::Backward => problem.forward_dim,
    };
    if spec.guess.len() != want {
        return Err(Error::Dimension {
            expected: want,
            got: spec.guess.len(),
        });
    }
    if !(problem.horizon > 0.0) {
        return Err(Error::Input("horizon must be positive".into()));
    }
    let newton = NewtonSpec {
        tol: spec.tol,
        max_iter: spec.max_iter,
        damping: spec.damping,
        fallback: spec.fallback,
        polish: 2,
    };
    let root = solve_root(
        |s| problem.residual(s, spec.direction, &spec.integrator),
        &spec.guess,
        &newton,
    )?;
    let tr = problem.path(&root.x, spec.direction, &spec.integrator, Record::Steps)?;
    let tr = match spec.direction {
        ShootDirection::Forward => tr,
        ShootDirection::Backward => tr.reversed(),
    };
    let k = problem.backward_dim;
    let start = tr.initial_state();
    let end = tr.final_state();
    let terminal_residual = norm(&sub(&end[..k], &(problem.terminal)(&end[k..])));
    let initial_residual = norm(&sub(&start[k..], &problem.initial_value(&start[..k])?));
    Ok(ShootReport {
        unknown: root.x,
        trajectory: tr,
        terminal_residual,
        initial_residual,
        iterations: root.iterations,
        converged: root.converged,
        trace: root.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // demo-power reduced dynamics: psi' = psi^2/2 - z, z' = -z psi
    fn power_field(_: f64, y: &[f64], dy: &mut [f64]) {
        dy[0] = 0.5 * y[0] * y[0] - y[1];
        dy[1] = -y[1] * y[0];
    }

    fn power_problem<'a>(
        terminal: &'a dyn Fn(&[f64]) -> Vec<f64>,
        initial: &'a dyn Fn(&[f64]) -> Vec<f64>,
    ) -> FbProblem<'a> {
        FbProblem {
            backward_dim: 1,
            forward_dim: 1,
            horizon: 1.0,
            field: &power_field,
            terminal,
            initial,
        }
    }

    #[test]
    fn decoupled_linear_converges_in_one_iteration() {
        let field = |_: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = -y[0];
            dy[1] = -y[1];
        };
        let terminal = |_: &[f64]| vec![2.0];
        let initial = |_: &[f64]| vec![1.0];
        let p = FbProblem {
            backward_dim: 1,
            forward_dim: 1,
            horizon: 1.0,
            field: &field,
            terminal: &terminal,
            initial: &initial,
        };
        let rep = shoot_forward_backward(&p, &ShootingSpec::new(vec![0.0], ShootDirection::Forward)).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 1, "{:?}", rep.trace);
        assert!((rep.unknown[0] - 2.0 * 1f64.exp()).abs() < 1e-8);
    }

    #[test]
    fn zero_initial_mass_stays_zero() {
        let terminal = |z: &[f64]| vec![z[0]];
        let initial = |_: &[f64]| vec![0.0];
        let p = power_problem(&terminal, &initial);
        let rep = shoot_forward_backward(&p, &ShootingSpec::new(vec![0.5], ShootDirection::Backward)).unwrap();
        assert!(rep.converged);
        for i in 0..rep.trajectory.len() {
            assert!(rep.trajectory.state(i)[1].abs() < 1e-12);
        }
    }

    #[test]
    fn both_directions_agree_and_are_damping_invariant() {
        let terminal = |z: &[f64]| vec![z[0]];
        let initial = |_: &[f64]| vec![1.0];
        let p = power_problem(&terminal, &initial);
        let mut psi0 = Vec::new();
        for dir in [ShootDirection::Forward, ShootDirection::Backward] {
            for theta in [1.0, 0.5] {
                let guess = match dir {
                    ShootDirection::Forward => vec![0.0],
                    ShootDirection::Backward => vec![1.0],
                };
                let mut spec = ShootingSpec::new(guess, dir);
                spec.damping = theta;
                let rep = shoot_forward_backward(&p, &spec).unwrap();
                assert!(rep.converged, "{dir:?} theta {theta}");
                assert!(rep.terminal_residual <= 1e-10);
                assert!(rep.initial_residual <= 1e-10);
                psi0.push(rep.trajectory.initial_state()[0]);
            }
        }
        for v in &psi0 {
            assert!((v - psi0[0]).abs() < 1e-8, "{psi0:?}");
        }
    }

    #[test]
    fn non_convergence_is_a_report() {
        // frozen dynamics with z(0) = psi(0) give the residual s^2 + 1 > 0
        let field = |_: f64, _: &[f64], dy: &mut [f64]| {
            dy[0] = 0.0;
            dy[1] = 0.0;
        };
        let terminal = |z: &[f64]| vec![z[0] - z[0] * z[0] - 1.0];
        let initial = |psi: &[f64]| vec![psi[0]];
        let p = FbProblem {
            backward_dim: 1,
            forward_dim: 1,
            horizon: 1.0,
            field: &field,
            terminal: &terminal,
            initial: &initial,
        };
        let mut spec = ShootingSpec::new(vec![1.0], ShootDirection::Forward);
        spec.max_iter = 5;
        let rep = shoot_forward_backward(&p, &spec).unwrap();
        assert!(!rep.converged);
        assert!(rep.terminal_residual >= 1.0 - 1e-9);
        assert!(rep.trace.len() >= 2);
    }
}
