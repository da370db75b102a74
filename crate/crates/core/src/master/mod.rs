//! Reduced master equations on moment sets: characteristics, boundary data,
//! the reduced forward-backward system and its particle counterpart.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::math::{dot, moments, norm, sub, ParticleCloud};
use crate::ode::{
    integrate, newton_invert, shoot_forward_backward, FbProblem, IntegratorSpec, NewtonSpec, Record, ShootReport,
    ShootingSpec, Trajectory,
};
use crate::verify::{worst_of, CheckReport, Witness};
use crate::zoo::ReducedHamiltonian;

/// Moment-set membership tolerance along computed paths.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Right-hand side in `[Z; U]`: `Z' = -Z.h_u(Z, U)`, `U' = h(Z, U)`.
fn characteristic_rhs(model: &dyn ReducedHamiltonian) -> impl Fn(f64, &[f64], &mut [f64]) + '_ {
    let m = model.dim();
    move |_t, y, dy| {
        let (z, u) = y.split_at(m);
        let zh = model.z_h_u(z, u);
        let h = model.h(z, u);
        for j in 0..m {
            dy[j] = -zh[j];
            dy[m + j] = h[j];
        }
    }
}

fn check_member(model: &dyn ReducedHamiltonian, z: &[f64], t: f64) -> Result<()> {
    if model.moment_set().contains(z, MEMBERSHIP_TOL) {
        Ok(())
    } else {
        Err(Error::Geometry(format!("{z:?} left the moment set at t = {t}")))
    }
}

/// Backward characteristic from `(T, z)` down to `t`, in increasing time.
fn characteristic(
    model: &dyn ReducedHamiltonian,
    z: &[f64],
    horizon: f64,
    t: f64,
    spec: &IntegratorSpec,
    record: Record,
) -> Result<Trajectory> {
    let mut y0 = z.to_vec();
    y0.extend(model.terminal(z));
    Ok(integrate(characteristic_rhs(model), &y0, horizon, t, spec, record)?.reversed())
}

/// Boundary datum `f(t, z)` solving `d_t f = h(z, f)`, `f(T, z) = g(z)` at a
/// fixed boundary point.
#[derive(Debug, Clone, Serialize)]
pub struct BoundaryTrace {
    pub z: Vec<f64>,
    pub f: Trajectory,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReducedMasterSolution {
    pub dim: usize,
    pub horizon: f64,
    pub seeds: Vec<Vec<f64>>,
    /// `[Z; U]` on `[0, T]`, increasing time.
    pub trajectories: Vec<Trajectory>,
    pub boundary: Vec<BoundaryTrace>,
}

impl ReducedMasterSolution {
    pub fn z_at(&self, i: usize, t: f64) -> Vec<f64> {
        self.trajectories[i].at(t)[..self.dim].to_vec()
    }

    pub fn u_at(&self, i: usize, t: f64) -> Vec<f64> {
        self.trajectories[i].at(t)[self.dim..].to_vec()
    }

    /// `min <Z(t,z1) - Z(t,z2), z1 - z2> / |z1 - z2|^2` over seed pairs.
    pub fn monotonicity_modulus(&self, t: f64) -> f64 {
        let mut worst = f64::INFINITY;
        for i in 0..self.seeds.len() {
            for j in i + 1..self.seeds.len() {
                let dz = sub(&self.seeds[i], &self.seeds[j]);
                let d2 = dot(&dz, &dz);
                if d2 > 0.0 {
                    worst = worst.min(dot(&sub(&self.z_at(i, t), &self.z_at(j, t)), &dz) / d2);
                }
            }
        }
        worst
    }
}

/// Characteristics from every seed (terminal moments in the moment set) plus
/// boundary data at the seeds lying on the boundary.
pub fn solve_reduced_master(
    model: &dyn ReducedHamiltonian,
    seeds: &[Vec<f64>],
    horizon: f64,
    spec: &IntegratorSpec,
) -> Result<ReducedMasterSolution> {
    let m = model.dim();
    let set = model.moment_set();
    for s in seeds {
        check_dim(m, s.len())?;
        check_member(model, s, horizon)?;
    }
    let trajectories = seeds
        .par_iter()
        .map(|z| {
            let tr = characteristic(model, z, horizon, 0.0, spec, Record::Steps)?;
            for k in 0..tr.len() {
                check_member(model, &tr.state(k)[..m], tr.times[k])?;
            }
            Ok(tr)
        })
        .collect::<Result<Vec<_>>>()?;
    let boundary = seeds
        .iter()
        .filter(|z| set.on_boundary(z, 1e-12))
        .map(|z| {
            let f = integrate(
                |_t, y, dy| dy.copy_from_slice(&model.h(z, y)),
                &model.terminal(z),
                horizon,
                0.0,
                spec,
                Record::Steps,
            )?
            .reversed();
            Ok(BoundaryTrace { z: z.clone(), f })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReducedMasterSolution {
        dim: m,
        horizon,
        seeds: seeds.to_vec(),
        trajectories,
        boundary,
    })
}

/// Largest time step of the continuation used by [`eval_reduced_u`].
const CONTINUATION_STEP: f64 = 0.1;

/// `u(t, z) = U(t; z0)` with `Z(t; z0) = z`. The foot `z0` is found by
/// Newton, continued from `T` down to `t` so that each solve starts from the
/// foot of a nearby time (backward characteristics from large terminal
/// points can blow up, so `z` itself is a poor guess far from `T`).
pub fn eval_reduced_u(
    model: &dyn ReducedHamiltonian,
    t: f64,
    z: &[f64],
    horizon: f64,
    spec: &IntegratorSpec,
    newton: &NewtonSpec,
) -> Result<Vec<f64>> {
    let m = model.dim();
    check_dim(m, z.len())?;
    check_member(model, z, t)?;
    if t == horizon {
        return Ok(model.terminal(z));
    }
    let stages = ((horizon - t).abs() / CONTINUATION_STEP).ceil().max(1.0) as usize;
    let mut foot = z.to_vec();
    for k in 1..=stages {
        let tk = if k == stages {
            t
        } else {
            horizon + (t - horizon) * k as f64 / stages as f64
        };
        foot = newton_invert(
            |z0| Ok(characteristic(model, z0, horizon, tk, spec, Record::Final)?.initial_state()[..m].to_vec()),
            z,
            &foot,
            newton,
        )?
        .x;
    }
    let tr = characteristic(model, &foot, horizon, t, spec, Record::Final)?;
    Ok(tr.initial_state()[m..].to_vec())
}

/// `sup_t dist(Z(t, z), boundary)` for the seeds on the boundary. Interior
/// seeds are skipped; with none left the report is vacuous.
pub fn boundary_invariance_check(
    model: &dyn ReducedHamiltonian,
    seeds: &[Vec<f64>],
    horizon: f64,
    spec: &IntegratorSpec,
    tol: f64,
) -> Result<CheckReport> {
    let set = model.moment_set();
    let m = model.dim();
    let on: Vec<&Vec<f64>> = seeds.iter().filter(|z| set.on_boundary(z, 1e-12)).collect();
    let (worst, at) = worst_of(on.len(), |i| {
        let tr = characteristic(model, on[i], horizon, 0.0, spec, Record::Steps)?;
        let sup = (0..tr.len()).map(|k| set.boundary_distance(&tr.state(k)[..m])).fold(0.0, f64::max);
        Ok(-sup)
    })?;
    let witness = on.get(at).map(|z| Witness::new("boundary seed", vec![(*z).clone()]));
    Ok(CheckReport::from_margin(
        format!("boundary-invariance({})", model.name()),
        worst,
        witness,
        on.len(),
        0,
        tol,
    ))
}

/// `U(t, x, m) = phi(x) . u(t, int phi dm)`.
pub fn reconstruct_master_value(
    model: &dyn ReducedHamiltonian,
    u: &dyn Fn(f64, &[f64]) -> Result<Vec<f64>>,
    t: f64,
    x: &[f64],
    m: &ParticleCloud,
) -> Result<f64> {
    let fmap = model.feature();
    let z = moments(m, &fmap)?;
    if !model.moment_set().contains(&z, MEMBERSHIP_TOL) {
        return Err(Error::Geometry(format!("moments {z:?} outside the moment set")));
    }
    Ok(dot(&fmap.eval(x), &u(t, &z)?))
}

/// Solution `(psi, z)` of `-psi' + h(z, psi) = 0`, `psi(T) = g(z(T))`,
/// `z' + z.h_u(z, psi) = 0`, `z(0) = z0`.
#[derive(Debug, Clone, Serialize)]
pub struct FbReducedSolution {
    pub dim: usize,
    pub z0: Vec<f64>,
    pub shoot: ShootReport,
}

impl FbReducedSolution {
    pub fn converged(&self) -> bool {
        self.shoot.converged
    }

    pub fn psi(&self, t: f64) -> Vec<f64> {
        self.shoot.trajectory.at(t)[..self.dim].to_vec()
    }

    pub fn z(&self, t: f64) -> Vec<f64> {
        self.shoot.trajectory.at(t)[self.dim..].to_vec()
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.shoot.trajectory
    }
}

pub fn solve_fb_reduced(
    model: &dyn ReducedHamiltonian,
    z0: &[f64],
    horizon: f64,
    spec: &ShootingSpec,
) -> Result<FbReducedSolution> {
    let m = model.dim();
    check_dim(m, z0.len())?;
    check_member(model, z0, 0.0)?;
    let field = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let (psi, z) = y.split_at(m);
        let h = model.h(z, psi);
        let zh = model.z_h_u(z, psi);
        for j in 0..m {
            dy[j] = h[j];
            dy[m + j] = -zh[j];
        }
    };
    let terminal = |z: &[f64]| model.terminal(z);
    let initial = |_psi: &[f64]| z0.to_vec();
    let problem = FbProblem {
        backward_dim: m,
        forward_dim: m,
        horizon,
        field: &field,
        terminal: &terminal,
        initial: &initial,
    };
    let shoot = shoot_forward_backward(&problem, spec)?;
    if shoot.converged {
        let tr = &shoot.trajectory;
        for k in 0..tr.len() {
            check_member(model, &tr.state(k)[m..], tr.times[k])?;
        }
    }
    Ok(FbReducedSolution {
        dim: m,
        z0: z0.to_vec(),
        shoot,
    })
}

/// Pushes each particle of a one-dimensional cloud along `y' = b(t, y)` and
/// returns the clouds at `times` (within `[0, horizon]`).
pub fn transport_particles(
    velocity: &(dyn Fn(f64, f64) -> f64 + Sync),
    m0: &ParticleCloud,
    horizon: f64,
    times: &[f64],
    spec: &IntegratorSpec,
) -> Result<Vec<ParticleCloud>> {
    if m0.dim() != 1 {
        return Err(Error::Unsupported("particle transport runs in d = 1".into()));
    }
    if times.iter().any(|t| !(*t >= 0.0 && *t <= horizon)) {
        return Err(Error::Input("output times must lie in [0, T]".into()));
    }
    let paths = m0
        .raw()
        .par_iter()
        .enumerate()
        .map(|(i, &y0)| {
            integrate(
                |t, y, dy| dy[0] = velocity(t, y[0]),
                &[y0],
                0.0,
                horizon,
                spec,
                Record::Times(times.to_vec()),
            )
            .map_err(|e| match e {
                Error::BlowUp { t, detail } => Error::BlowUp {
                    t,
                    detail: format!("particle {i}: {detail}"),
                },
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    (0..times.len())
        .map(|k| ParticleCloud::from_1d(paths.iter().map(|p| p.state(k)[0]).collect()))
        .collect()
}

/// `sup_t |z(t) - int phi dm_t|` along output times.
#[derive(Debug, Clone, Serialize)]
pub struct MomentConsistency {
    pub report: CheckReport,
    pub times: Vec<f64>,
    pub errors: Vec<f64>,
}

/// Transports `m0` with the velocity `-D_pH(x, m, D phi(x) psi(t))` of the
/// solved reduced system and compares moments with `z(t)`.
pub fn verify_moment_consistency(
    model: &dyn ReducedHamiltonian,
    solution: &FbReducedSolution,
    m0: &ParticleCloud,
    times: &[f64],
    spec: &IntegratorSpec,
    tol: f64,
) -> Result<MomentConsistency> {
    let fmap = model.feature();
    let velocity = |t: f64, y: f64| {
        let state = solution.trajectory().at(t);
        let (psi, z) = state.split_at(solution.dim);
        model.velocity(y, z, psi)
    };
    let horizon = *solution.trajectory().times.last().unwrap_or(&0.0);
    let clouds = transport_particles(&velocity, m0, horizon, times, spec)?;
    let errors: Vec<f64> = clouds
        .iter()
        .zip(times)
        .map(|(c, t)| Ok(norm(&sub(&solution.z(*t), &moments(c, &fmap)?))))
        .collect::<Result<_>>()?;
    let (sup, at) = errors
        .iter()
        .enumerate()
        .fold((0.0, 0), |(s, a), (i, e)| if *e > s { (*e, i) } else { (s, a) });
    let witness = times.get(at).map(|t| Witness::new("t", vec![vec![*t]]));
    Ok(MomentConsistency {
        report: CheckReport::from_margin(
            format!("moment-consistency({})", model.name()),
            -sup,
            witness,
            times.len(),
            0,
            tol,
        ),
        times: times.to_vec(),
        errors,
    })
}

#[cfg(test)]
mod tests;
