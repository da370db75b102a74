//! Finite-state master equations solved along characteristics, their
//! reductions, and checks of the reduction identity and fiber geometry.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::math::{dot, norm, sub, ReductionMap};
use crate::ode::{integrate, newton_invert, IntegratorSpec, NewtonSpec, Record, Trajectory, TrajectoryBundle};
use crate::verify::{worst_of, CheckReport, Witness};
use crate::zoo::{FiniteStateModel, ReducedFiniteModel};

/// Characteristics `X' = F(X, V)`, `V' = G(X, V)`, `X(0) = x`,
/// `V(0) = U0(x)` for a set of seeds. States are stored as `[X; V]`.
#[derive(Debug, Clone, Serialize)]
pub struct CharacteristicField {
    pub dim: usize,
    pub horizon: f64,
    pub seeds: Vec<Vec<f64>>,
    pub trajectories: Vec<Trajectory>,
}

impl CharacteristicField {
    pub fn x_at(&self, i: usize, t: f64) -> Vec<f64> {
        self.trajectories[i].at(t)[..self.dim].to_vec()
    }

    pub fn v_at(&self, i: usize, t: f64) -> Vec<f64> {
        self.trajectories[i].at(t)[self.dim..].to_vec()
    }

    /// `<X_i - X_j, V_i - V_j>` at every recorded time of seed `i`.
    pub fn pairing_path(&self, i: usize, j: usize) -> Vec<f64> {
        let n = self.dim;
        let a = &self.trajectories[i];
        a.times
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let s = a.state(k);
                let o = self.trajectories[j].at(t);
                dot(&sub(&s[..n], &o[..n]), &sub(&s[n..], &o[n..]))
            })
            .collect()
    }

    pub fn bundle(&self) -> TrajectoryBundle {
        let mut labels: Vec<String> = (0..self.dim).map(|k| format!("X{k}")).collect();
        labels.extend((0..self.dim).map(|k| format!("V{k}")));
        TrajectoryBundle {
            labels,
            trajectories: self.trajectories.clone(),
        }
    }
}

fn characteristic_rhs(model: &FiniteStateModel) -> impl Fn(f64, &[f64], &mut [f64]) + '_ {
    let n = model.dim;
    move |_t, y, dy| {
        let (x, v) = y.split_at(n);
        let (dx, dv) = dy.split_at_mut(n);
        (model.f)(x, v, dx);
        (model.g)(x, v, dv);
    }
}

/// Single characteristic from `x` to time `t`.
fn flow(model: &FiniteStateModel, x: &[f64], t: f64, spec: &IntegratorSpec, record: Record) -> Result<Trajectory> {
    let mut y0 = x.to_vec();
    y0.extend(model.try_u0(x)?);
    integrate(characteristic_rhs(model), &y0, 0.0, t, spec, record)
}

pub fn solve_characteristics(
    model: &FiniteStateModel,
    seeds: &[Vec<f64>],
    horizon: f64,
    spec: &IntegratorSpec,
) -> Result<CharacteristicField> {
    if !(horizon >= 0.0) {
        return Err(Error::Input(format!("horizon must be nonnegative, got {horizon}")));
    }
    for s in seeds {
        check_dim(model.dim, s.len())?;
    }
    let trajectories = seeds
        .par_iter()
        .map(|x| flow(model, x, horizon, spec, Record::Steps))
        .collect::<Result<Vec<_>>>()?;
    Ok(CharacteristicField {
        dim: model.dim,
        horizon,
        seeds: seeds.to_vec(),
        trajectories,
    })
}

/// Characteristics of the reduced system; same equations on `R^n`.
pub fn solve_reduced_finite(
    reduced: &ReducedFiniteModel,
    seeds: &[Vec<f64>],
    horizon: f64,
    spec: &IntegratorSpec,
) -> Result<CharacteristicField> {
    solve_characteristics(reduced, seeds, horizon, spec)
}

/// Value `U(t, x_hat)` together with the foot `x` of the characteristic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointValue {
    pub u: Vec<f64>,
    pub foot: Vec<f64>,
    pub newton_iterations: usize,
}

/// `U(t, x_hat) = V(t; x)` where `X(t; x) = x_hat`, found by Newton on the
/// foot `x` starting from `x_hat`.
pub fn eval_u(
    model: &FiniteStateModel,
    t: f64,
    x_hat: &[f64],
    spec: &IntegratorSpec,
    newton: &NewtonSpec,
) -> Result<PointValue> {
    check_dim(model.dim, x_hat.len())?;
    if t == 0.0 {
        return Ok(PointValue {
            u: model.try_u0(x_hat)?,
            foot: x_hat.to_vec(),
            newton_iterations: 0,
        });
    }
    eval_u_from(model, t, x_hat, x_hat, spec, newton)
}

/// As [`eval_u`] with the Newton search for the foot started at `guess`.
pub fn eval_u_from(
    model: &FiniteStateModel,
    t: f64,
    x_hat: &[f64],
    guess: &[f64],
    spec: &IntegratorSpec,
    newton: &NewtonSpec,
) -> Result<PointValue> {
    check_dim(model.dim, guess.len())?;
    let n = model.dim;
    let mut seen: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let rep = newton_invert(
        |x| {
            let end = flow(model, x, t, spec, Record::Final)?.final_state().to_vec();
            let y = end[..n].to_vec();
            seen.push((x.to_vec(), end));
            Ok(y)
        },
        x_hat,
        guess,
        newton,
    )?;
    let end = match seen.into_iter().rev().find(|(x, _)| *x == rep.x) {
        Some((_, end)) => end,
        None => flow(model, &rep.x, t, spec, Record::Final)?.final_state().to_vec(),
    };
    Ok(PointValue {
        u: end[n..].to_vec(),
        foot: rep.x,
        newton_iterations: rep.iterations,
    })
}

/// `U(t, x_hat)` for each of `times` in order, each foot search starting
/// from the previous foot.
pub fn eval_u_path(
    model: &FiniteStateModel,
    times: &[f64],
    x_hat: &[f64],
    spec: &IntegratorSpec,
    newton: &NewtonSpec,
) -> Result<Vec<PointValue>> {
    let mut out: Vec<PointValue> = Vec::with_capacity(times.len());
    for &t in times {
        let guess = out.last().map_or(x_hat, |p| p.foot.as_slice());
        let v = if t == 0.0 {
            eval_u(model, t, x_hat, spec, newton)?
        } else {
            eval_u_from(model, t, x_hat, guess, spec, newton)?
        };
        out.push(v);
    }
    Ok(out)
}

/// All points of the tensor grid `{lo + k (hi - lo)/(n - 1)}^dim`, last
/// coordinate fastest.
pub fn box_grid(lo: f64, hi: f64, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = if n == 1 {
        vec![0.5 * (lo + hi)]
    } else {
        (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
    };
    let mut out = vec![Vec::new()];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |a| {
                    let mut q = p.clone();
                    q.push(*a);
                    q
                })
            })
            .collect();
    }
    out
}

/// `n` equispaced times on `[0, horizon]`.
pub fn time_grid(horizon: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![horizon];
    }
    (0..n).map(|k| horizon * k as f64 / (n - 1) as f64).collect()
}

/// `sup |U(t, x) - L* U~(t, Lx)|` over `grid x times`, each side computed by
/// its own characteristic solve.
#[allow(clippy::too_many_arguments)]
pub fn verify_reduction_identity(
    model: &FiniteStateModel,
    l: &ReductionMap,
    reduced: &ReducedFiniteModel,
    grid: &[Vec<f64>],
    times: &[f64],
    spec: &IntegratorSpec,
    newton: &NewtonSpec,
    tol: f64,
) -> Result<CheckReport> {
    check_dim(l.big_n(), model.dim)?;
    check_dim(l.n(), reduced.dim)?;
    // Points run in parallel; times within a point share warm starts.
    let margins: Vec<std::sync::Mutex<Vec<f64>>> = grid.iter().map(|_| Default::default()).collect();
    worst_of(grid.len(), |g| {
        let x = &grid[g];
        let full = eval_u_path(model, times, x, spec, newton)?;
        let red = eval_u_path(reduced, times, &l.apply_l(x), spec, newton)?;
        *margins[g].lock().unwrap() = full
            .iter()
            .zip(&red)
            .map(|(f, r)| -norm(&sub(&f.u, &l.apply_adjoint(&r.u))))
            .collect();
        Ok(0.0)
    })?;
    let margins: Vec<Vec<f64>> = margins.into_iter().map(|m| m.into_inner().unwrap()).collect();
    let (mut worst, mut at) = (f64::INFINITY, None);
    for (k, t) in times.iter().enumerate() {
        for (g, m) in margins.iter().enumerate() {
            if m[k] < worst {
                worst = m[k];
                at = Some((*t, g));
            }
        }
    }
    let witness = at.map(|(t, g)| {
        let mut p = vec![t];
        p.extend(grid[g].iter());
        Witness::new("(t, x)", vec![p])
    });
    let cases = times.len() * grid.len();
    Ok(CheckReport::from_margin(
        format!("reduction-identity({})", model.name),
        worst,
        witness,
        cases,
        0,
        tol,
    ))
}

/// `sup_t |L X(t, x1) - L X(t, x2)|` for seed pairs on common fibers.
pub fn fiber_evolution_check(
    model: &FiniteStateModel,
    l: &ReductionMap,
    pairs: &[(Vec<f64>, Vec<f64>)],
    horizon: f64,
    spec: &IntegratorSpec,
    tol: f64,
) -> Result<CheckReport> {
    for (a, b) in pairs {
        check_dim(model.dim, a.len())?;
        check_dim(model.dim, b.len())?;
        if norm(&l.apply_l(&sub(a, b))) > 1e-12 * (1.0 + norm(a) + norm(b)) {
            return Err(Error::Input(format!("seeds {a:?} and {b:?} are on different fibers")));
        }
    }
    let n = model.dim;
    let (worst, at) = worst_of(pairs.len(), |i| {
        let (a, b) = &pairs[i];
        let ta = flow(model, a, horizon, spec, Record::Steps)?;
        let tb = flow(model, b, horizon, spec, Record::Steps)?;
        let mut sup: f64 = 0.0;
        for k in 0..ta.len() {
            let d = sub(&ta.state(k)[..n], &tb.at(ta.times[k])[..n]);
            sup = sup.max(norm(&l.apply_l(&d)));
        }
        Ok(-sup)
    })?;
    let witness = pairs.get(at).map(|(a, b)| Witness::new("seed pair", vec![a.clone(), b.clone()]));
    Ok(CheckReport::from_margin("fiber-evolution", worst, witness, pairs.len(), 0, tol))
}

/// `sup |<V'(t), k>|` over recorded steps and an orthonormal basis `k` of
/// `ker L`: the value motion has no component along fibers when `G`
/// completely reduces.
pub fn tangential_motion_check(field: &CharacteristicField, l: &ReductionMap, tol: f64) -> Result<CheckReport> {
    check_dim(l.big_n(), field.dim)?;
    let n = field.dim;
    let kernel = l.kernel_basis();
    let (worst, at) = worst_of(field.trajectories.len(), |i| {
        let tr = &field.trajectories[i];
        let mut sup: f64 = 0.0;
        for s in 0..tr.len() {
            let dv = &tr.slope(s)[n..];
            for c in 0..kernel.ncols() {
                let k: Vec<f64> = kernel.column(c).iter().copied().collect();
                sup = sup.max(dot(dv, &k).abs());
            }
        }
        Ok(-sup)
    })?;
    let witness = field.seeds.get(at).map(|s| Witness::new("seed", vec![s.clone()]));
    Ok(CheckReport::from_margin(
        "tangential-value-motion",
        worst,
        witness,
        field.trajectories.len(),
        0,
        tol,
    ))
}

/// Central-difference residual of `d_t U + (F . grad) U - G` under step
/// refinement.
#[derive(Debug, Clone, Serialize)]
pub struct PdeResidualStudy {
    pub steps: Vec<f64>,
    pub sup_residuals: Vec<f64>,
    /// Least-squares slope of `log sup` against `log step`.
    pub slope: Option<f64>,
}

impl PdeResidualStudy {
    /// Passes when the residual decays at least at `min_slope` or already
    /// sits below `floor` at the coarsest step.
    pub fn report(&self, min_slope: f64, floor: f64) -> CheckReport {
        let first = self.sup_residuals.first().copied().unwrap_or(0.0);
        let margin = if first <= floor {
            0.0
        } else {
            self.slope.map_or(f64::NEG_INFINITY, |s| s - min_slope)
        };
        CheckReport::from_margin("pde-residual", margin, None, self.steps.len(), 0, 0.0)
    }
}

/// Least-squares slope of `log y` against `log x`, ignoring zero entries.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Residual study at `points = (t, x)` using the sampler `u(t, x)` and the
/// given difference steps (applied to both `t` and `x`).
pub fn pde_residual(
    model: &FiniteStateModel,
    sampler: &(dyn Fn(f64, &[f64]) -> Result<Vec<f64>> + Sync),
    points: &[(f64, Vec<f64>)],
    steps: &[f64],
) -> Result<PdeResidualStudy> {
    let n = model.dim;
    let mut sups = Vec::with_capacity(steps.len());
    for &h in steps {
        let (worst, _) = worst_of(points.len(), |i| {
            let (t, x) = &points[i];
            let u = sampler(*t, x)?;
            let ut = sub(&sampler(t + h, x)?, &sampler(t - h, x)?);
            let f = model.try_f(x, &u)?;
            let g = model.try_g(x, &u)?;
            let mut res: Vec<f64> = ut.iter().zip(&g).map(|(a, b)| a / (2.0 * h) - b).collect();
            for j in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let du = sub(&sampler(*t, &xp)?, &sampler(*t, &xm)?);
                for (r, d) in res.iter_mut().zip(&du) {
                    *r += f[j] * d / (2.0 * h);
                }
            }
            Ok(-res.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
        })?;
        sups.push(-worst);
    }
    Ok(PdeResidualStudy {
        slope: log_log_slope(steps, &sups),
        steps: steps.to_vec(),
        sup_residuals: sups,
    })
}
