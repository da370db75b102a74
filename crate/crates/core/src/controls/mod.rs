//! Strongly coupled games in one space dimension: the fixed-point map on
//! terminal measures, damped Picard iteration on it, and the reduced ODE
//! systems of the power family.

mod reduced;
#[cfg(test)]
mod tests;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{wasserstein, ParticleCloud};
use crate::verify::{CheckReport, Witness};
use crate::zoo::{ControlsModel, ControlsSystem};

pub use reduced::{
    a_priori_band, compare_reduced_full, default_shooting, multistart_guesses, pq_matrix, solve_pq,
    solve_reduced_controls, Band, PqMatrix, PqRun, PqStudy, PqVerdict, ReducedControls, PQ_AGREEMENT,
};

/// Momentum iterations allowed per node before a step is refused.
const MOMENTUM_ITERS: usize = 30;

/// Space-time grid of the Hamilton-Jacobi solve and the particle transport.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlsGrid {
    /// Half-width of the box `[-R, R]`.
    pub radius: f64,
    pub nx: usize,
    /// Largest time step; the horizon is split evenly.
    pub dt: f64,
    /// Number of stored particle snapshots, endpoints included.
    pub snapshots: usize,
}

impl Default for ControlsGrid {
    fn default() -> Self {
        Self {
            radius: 6.0,
            nx: 401,
            dt: 1e-3,
            snapshots: 11,
        }
    }
}

impl ControlsGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !(self.dt > 0.0) || self.nx < 5 || self.snapshots < 2 {
            return Err(Error::Input(
                "controls grid needs radius > 0, dt > 0, nx >= 5 and snapshots >= 2".into(),
            ));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.radius / (self.nx - 1) as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.nx).map(|i| -self.radius + i as f64 * h).collect()
    }

    pub fn steps(&self, horizon: f64) -> usize {
        ((horizon / self.dt) - 1e-9).ceil().max(1.0) as usize
    }
}

/// Four-point Lagrange interpolation on a uniform grid. Outside the grid the
/// end stencil extrapolates.
pub(crate) fn interp_cubic(values: &[f64], lo: f64, h: f64, x: f64) -> f64 {
    let n = values.len();
    let s = (x - lo) / h;
    let j = ((s.floor() as isize) - 1).clamp(0, n as isize - 4) as usize;
    let r = s - j as f64;
    let (r1, r2, r3) = (r - 1.0, r - 2.0, r - 3.0);
    -r1 * r2 * r3 / 6.0 * values[j] + r * r2 * r3 / 2.0 * values[j + 1] - r * r1 * r3 / 2.0 * values[j + 2]
        + r * r1 * r2 / 6.0 * values[j + 3]
}

fn interp_linear(values: &[f64], lo: f64, h: f64, x: f64) -> f64 {
    let n = values.len();
    let s = ((x - lo) / h).clamp(0.0, (n - 1) as f64);
    let j = (s.floor() as usize).min(n - 2);
    let r = s - j as f64;
    (1.0 - r) * values[j] + r * values[j + 1]
}

/// Runtime bounds of a solved state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlsDiagnostics {
    /// Smallest central second difference of `u` over unflagged nodes.
    pub min_d2u: f64,
    /// Fitted `C` in `|Du| <= C (1 + |x|^{q'-1})`.
    pub growth_constant: f64,
    /// `max_t int |x|^lambda dm_t`.
    pub max_moment: f64,
    /// `int |x|^lambda dm_T`.
    pub terminal_moment: f64,
    /// Nodes with `|x|` below this never felt the box boundary.
    pub interior_radius: f64,
    pub boundary_influenced: bool,
}

impl ControlsDiagnostics {
    pub fn convex(&self) -> bool {
        self.min_d2u >= -1e-8
    }
}

/// Value function, coupling path and measure path of one solve.
#[derive(Debug, Clone)]
pub struct ControlsState {
    pub grid: ControlsGrid,
    pub horizon: f64,
    pub phi_dim: usize,
    pub times: Vec<f64>,
    pub nodes: Vec<f64>,
    u: Vec<f64>,
    du: Vec<f64>,
    /// `phi(t_k)` from the coupling ODE.
    pub phi: Vec<Vec<f64>>,
    /// `int Phi(t_k, y, Du(t_k, y)) dm_{t_k}` from the particles.
    pub phi_particles: Vec<Vec<f64>>,
    /// `int |x|^lambda dm_{t_k}`.
    pub moments: Vec<f64>,
    pub snapshots: Vec<(f64, ParticleCloud)>,
    pub terminal_cloud: ParticleCloud,
    pub diagnostics: ControlsDiagnostics,
}

impl ControlsState {
    pub fn levels(&self) -> usize {
        self.times.len()
    }

    pub fn u_level(&self, k: usize) -> &[f64] {
        &self.u[k * self.grid.nx..(k + 1) * self.grid.nx]
    }

    pub fn du_level(&self, k: usize) -> &[f64] {
        &self.du[k * self.grid.nx..(k + 1) * self.grid.nx]
    }

    pub fn u_at(&self, k: usize, x: f64) -> f64 {
        interp_cubic(self.u_level(k), -self.grid.radius, self.grid.spacing(), x)
    }

    pub fn du_at(&self, k: usize, x: f64) -> f64 {
        interp_cubic(self.du_level(k), -self.grid.radius, self.grid.spacing(), x)
    }

    /// `sup |u - exact|` over nodes with `|x| <= radius` and all levels.
    pub fn sup_error(&self, exact: impl Fn(f64, f64) -> f64, radius: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for (k, &t) in self.times.iter().enumerate() {
            for (i, &x) in self.nodes.iter().enumerate() {
                if x.abs() <= radius {
                    worst = worst.max((self.u_level(k)[i] - exact(t, x)).abs());
                }
            }
        }
        worst
    }
}

/// `g(m) = int Phi(T, y, D_y G(y, m)) m(dy)`, summed in particle order.
pub fn eval_g_of_m(system: &dyn ControlsSystem, horizon: f64, m: &ParticleCloud) -> Result<Vec<f64>> {
    if m.dim() != 1 {
        return Err(Error::Unsupported("controls games run in d = 1".into()));
    }
    let mo = system.terminal_moments(m);
    let mut acc = vec![0.0; system.phi_dim()];
    for y in m.raw() {
        let f = system.feature(horizon, *y, system.dx_terminal(*y, &mo));
        for (a, v) in acc.iter_mut().zip(&f) {
            *a += v;
        }
    }
    let n = m.len() as f64;
    let g: Vec<f64> = acc.into_iter().map(|a| a / n).collect();
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation {
            what: "g(m)".into(),
            at: Vec::new(),
        });
    }
    Ok(g)
}

/// `-phi' = f(t, phi)`, `phi(T) = phi_t`, by RK4 on the level times.
fn coupling_path(system: &dyn ControlsSystem, phi_t: Vec<f64>, times: &[f64]) -> Result<Vec<Vec<f64>>> {
    let nt = times.len() - 1;
    let mut out = vec![Vec::new(); nt + 1];
    out[nt] = phi_t;
    let rhs = |t: f64, y: &[f64]| -> Vec<f64> { system.drift(t, y).into_iter().map(|v| -v).collect() };
    for k in (0..nt).rev() {
        let (t1, t0) = (times[k + 1], times[k]);
        let h = t0 - t1;
        let y = &out[k + 1];
        let k1 = rhs(t1, y);
        let y2: Vec<f64> = y.iter().zip(&k1).map(|(a, b)| a + 0.5 * h * b).collect();
        let k2 = rhs(t1 + 0.5 * h, &y2);
        let y3: Vec<f64> = y.iter().zip(&k2).map(|(a, b)| a + 0.5 * h * b).collect();
        let k3 = rhs(t1 + 0.5 * h, &y3);
        let y4: Vec<f64> = y.iter().zip(&k3).map(|(a, b)| a + h * b).collect();
        let k4 = rhs(t0, &y4);
        let next: Vec<f64> = (0..y.len())
            .map(|j| y[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                t: t0,
                detail: "coupling path".into(),
            });
        }
        out[k] = next;
    }
    Ok(out)
}

struct Level<'a> {
    u: &'a [f64],
    p: &'a [f64],
    flag: &'a [f64],
}

/// Characteristic `x' = -H_p, p' = H_x` over one step, with the running
/// cost `int (p H_p - H)`. RK4 with the coupling at both ends and midpoint.
fn step_characteristic(sys: &dyn ControlsSystem, x: f64, p: f64, dt: f64, phis: [&[f64]; 3]) -> (f64, f64, f64) {
    let f = |x: f64, p: f64, phi: &[f64]| {
        let hp = sys.dp_h(x, p, phi);
        (-hp, sys.dx_h(x, p, phi), p * hp - sys.hamiltonian(x, p, phi))
    };
    let k1 = f(x, p, phis[0]);
    let k2 = f(x + 0.5 * dt * k1.0, p + 0.5 * dt * k1.1, phis[1]);
    let k3 = f(x + 0.5 * dt * k2.0, p + 0.5 * dt * k2.1, phis[1]);
    let k4 = f(x + dt * k3.0, p + dt * k3.1, phis[2]);
    (
        x + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        p + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        dt / 6.0 * (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2),
    )
}

/// One semi-Lagrangian step of `-u_t + H(x, Du, phi) = 0` from level `k+1`
/// to level `k`. Returns `(u, p, foot, flag)` per node.
fn hj_step(
    sys: &dyn ControlsSystem,
    grid: &ControlsGrid,
    nodes: &[f64],
    next: &Level<'_>,
    dt: f64,
    t: f64,
    phis: [&[f64]; 3],
) -> Result<Vec<(f64, f64, f64, f64)>> {
    let (lo, h, r) = (-grid.radius, grid.spacing(), grid.radius);
    let out: Vec<(f64, f64, f64, f64)> = nodes
        .par_iter()
        .enumerate()
        .map(|(i, &x)| {
            let mut p = next.p[i];
            for _ in 0..MOMENTUM_ITERS {
                let (xe, pe, cost) = step_characteristic(sys, x, p, dt, phis);
                let d = interp_cubic(next.p, lo, h, xe) - pe;
                if d.abs() <= 1e-13 * (1.0 + p.abs()) {
                    let flag = if xe.abs() > r {
                        1.0
                    } else {
                        interp_linear(next.flag, lo, h, xe)
                    };
                    return Ok((interp_cubic(next.u, lo, h, xe) + cost, p, xe, flag));
                }
                p += d;
                if !p.is_finite() {
                    break;
                }
            }
            Err(Error::StepRefused(format!(
                "momentum fixed point failed at t = {t}, x = {x}; reduce dt"
            )))
        })
        .collect::<Result<_>>()?;
    if let Some(i) = (1..out.len()).find(|&i| out[i].2 <= out[i - 1].2) {
        return Err(Error::StepRefused(format!(
            "characteristics cross near x = {} at t = {t}; reduce dt",
            nodes[i]
        )));
    }
    Ok(out)
}

/// `T m_bar`: coupling path, value function, then transport of `m0`.
pub fn apply_t_map(
    model: &ControlsModel,
    m0: &ParticleCloud,
    m_bar: &ParticleCloud,
    horizon: f64,
    grid: &ControlsGrid,
) -> Result<ControlsState> {
    grid.validate()?;
    if !(horizon > 0.0) {
        return Err(Error::Input("horizon must be positive".into()));
    }
    if m0.dim() != 1 || m_bar.dim() != 1 {
        return Err(Error::Unsupported("controls games run in d = 1".into()));
    }
    let sys = model.system.as_ref();
    let nt = grid.steps(horizon);
    let dt = horizon / nt as f64;
    let times: Vec<f64> = (0..=nt).map(|k| k as f64 * dt).collect();
    let nodes = grid.nodes();
    let nx = grid.nx;
    let h = grid.spacing();

    let phi = coupling_path(sys, eval_g_of_m(sys, horizon, m_bar)?, &times)?;

    let mut u = vec![0.0; (nt + 1) * nx];
    let mut du = vec![0.0; (nt + 1) * nx];
    let mut flags = vec![0.0; (nt + 1) * nx];
    let mo = sys.terminal_moments(m_bar);
    for (i, &x) in nodes.iter().enumerate() {
        u[nt * nx + i] = sys.terminal(x, &mo);
        du[nt * nx + i] = sys.dx_terminal(x, &mo);
    }
    for k in (0..nt).rev() {
        let phi_mid: Vec<f64> = phi[k].iter().zip(&phi[k + 1]).map(|(a, b)| 0.5 * (a + b)).collect();
        let (head, tail) = u.split_at_mut((k + 1) * nx);
        let (dhead, dtail) = du.split_at_mut((k + 1) * nx);
        let (fhead, ftail) = flags.split_at_mut((k + 1) * nx);
        let next = Level {
            u: &tail[..nx],
            p: &dtail[..nx],
            flag: &ftail[..nx],
        };
        let step = hj_step(sys, grid, &nodes, &next, dt, times[k], [&phi[k], &phi_mid, &phi[k + 1]])?;
        for (i, (ui, pi, _, fi)) in step.into_iter().enumerate() {
            if !ui.is_finite() || !pi.is_finite() {
                return Err(Error::BlowUp {
                    t: times[k],
                    detail: format!("value function at x = {}", nodes[i]),
                });
            }
            head[k * nx + i] = ui;
            dhead[k * nx + i] = pi;
            fhead[k * nx + i] = fi;
        }
    }

    let q_conj = model.q_conj();
    let mut min_d2u = f64::INFINITY;
    let mut growth: f64 = 0.0;
    let mut interior_radius = grid.radius;
    for k in 0..=nt {
        let p = &du[k * nx..(k + 1) * nx];
        let f = &flags[k * nx..(k + 1) * nx];
        for i in 0..nx {
            if f[i] > 0.5 {
                interior_radius = interior_radius.min(nodes[i].abs());
                continue;
            }
            growth = growth.max(p[i].abs() / (1.0 + nodes[i].abs().powf(q_conj - 1.0)));
            if i > 0 && i + 1 < nx && f[i - 1] <= 0.5 && f[i + 1] <= 0.5 {
                min_d2u = min_d2u.min((p[i + 1] - p[i - 1]) / (2.0 * h));
            }
        }
    }

    // particles
    let lambda = model.lambda;
    let snap_levels: Vec<usize> = (0..grid.snapshots)
        .map(|j| ((j as f64 * nt as f64) / (grid.snapshots - 1) as f64).round() as usize)
        .collect();
    let velocity = |k: usize, y: f64| -> f64 {
        let p = interp_cubic(&du[k * nx..(k + 1) * nx], -grid.radius, h, y);
        -sys.dp_h(y, p, &phi[k])
    };
    let observe = |k: usize, ys: &[f64]| -> (Vec<f64>, f64) {
        let vals: Vec<(Vec<f64>, f64)> = ys
            .par_iter()
            .map(|&y| {
                let p = interp_cubic(&du[k * nx..(k + 1) * nx], -grid.radius, h, y);
                (sys.feature(times[k], y, p), y.abs().powf(lambda))
            })
            .collect();
        let mut acc = vec![0.0; sys.phi_dim()];
        let mut mom = 0.0;
        for (f, m) in &vals {
            for (a, v) in acc.iter_mut().zip(f) {
                *a += v;
            }
            mom += m;
        }
        let n = ys.len() as f64;
        (acc.into_iter().map(|a| a / n).collect(), mom / n)
    };
    let mut ys = m0.raw().to_vec();
    if let Some(i) = ys.iter().position(|y| y.abs() > grid.radius) {
        return Err(Error::BoxTooSmall(format!(
            "initial particle {i} at {} lies outside [-{r}, {r}]",
            ys[i],
            r = grid.radius
        )));
    }
    let mut phi_particles = Vec::with_capacity(nt + 1);
    let mut moment_path = Vec::with_capacity(nt + 1);
    let mut snapshots = Vec::with_capacity(grid.snapshots);
    for k in 0..=nt {
        let (fp, mom) = observe(k, &ys);
        phi_particles.push(fp);
        moment_path.push(mom);
        if snap_levels.contains(&k) && snapshots.last().map(|s: &(f64, ParticleCloud)| s.0) != Some(times[k]) {
            snapshots.push((times[k], ParticleCloud::from_1d(ys.clone())?));
        }
        if k == nt {
            break;
        }
        ys.par_iter_mut().for_each(|y| {
            let v0 = velocity(k, *y);
            let v1 = velocity(k + 1, *y + dt * v0);
            *y += 0.5 * dt * (v0 + v1);
        });
        if let Some(i) = ys.iter().position(|y| !(y.abs() <= grid.radius)) {
            return Err(Error::BoxTooSmall(format!(
                "particle {i} reached {} at t = {}",
                ys[i],
                times[k + 1]
            )));
        }
    }
    let terminal_cloud = ParticleCloud::from_1d(ys)?;
    let diagnostics = ControlsDiagnostics {
        min_d2u,
        growth_constant: growth,
        max_moment: moment_path.iter().cloned().fold(0.0, f64::max),
        terminal_moment: *moment_path.last().expect("at least two levels"),
        interior_radius,
        boundary_influenced: interior_radius < grid.radius,
    };
    Ok(ControlsState {
        grid: *grid,
        horizon,
        phi_dim: sys.phi_dim(),
        times,
        nodes,
        u,
        du,
        phi,
        phi_particles,
        moments: moment_path,
        snapshots,
        terminal_cloud,
        diagnostics,
    })
}

/// Convex combination of quantile functions of two 1D clouds of equal size.
pub fn mix_quantiles(a: &ParticleCloud, b: &ParticleCloud, theta: f64) -> Result<ParticleCloud> {
    if a.len() != b.len() {
        return Err(Error::Input(format!(
            "quantile mixing needs equal sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (sa, sb) = (a.sorted_1d()?, b.sorted_1d()?);
    ParticleCloud::from_1d(sa.iter().zip(&sb).map(|(x, y)| (1.0 - theta) * x + theta * y).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardSpec {
    /// Weight of the new measure in the quantile mix.
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardSpec {
    fn default() -> Self {
        Self {
            damping: 1.0,
            tol: 1e-4,
            max_iter: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub state: ControlsState,
    /// The accepted terminal measure `m_bar`.
    pub accepted: ParticleCloud,
    /// `d_gamma(m_bar_k, T m_bar_k)` per evaluation of the map.
    pub gaps: Vec<f64>,
    pub converged: bool,
    pub gamma: f64,
}

impl FixedPoint {
    /// Mixing updates performed before acceptance.
    pub fn updates(&self) -> usize {
        self.gaps.len().saturating_sub(1)
    }
}

/// Damped Picard iteration on the terminal measure, starting from `m0`.
/// Running out of iterations yields `converged == false` with the full gap
/// history; the last state is returned.
pub fn fixed_point_solve(
    model: &ControlsModel,
    m0: &ParticleCloud,
    horizon: f64,
    grid: &ControlsGrid,
    spec: &PicardSpec,
) -> Result<FixedPoint> {
    if !(spec.damping > 0.0 && spec.damping <= 1.0) || !(spec.tol > 0.0) || spec.max_iter == 0 {
        return Err(Error::Input(
            "picard needs damping in (0, 1], tol > 0 and max_iter >= 1".into(),
        ));
    }
    let gamma = model.gamma().max(1.0);
    let mut m_bar = m0.clone();
    let mut gaps = Vec::new();
    loop {
        let state = apply_t_map(model, m0, &m_bar, horizon, grid)?;
        let gap = wasserstein(&m_bar, &state.terminal_cloud, gamma)?;
        gaps.push(gap);
        let done = gap <= spec.tol;
        if done || gaps.len() > spec.max_iter {
            return Ok(FixedPoint {
                state,
                accepted: m_bar,
                gaps,
                converged: done,
                gamma,
            });
        }
        m_bar = mix_quantiles(&m_bar, &state.terminal_cloud, spec.damping)?;
    }
}

/// `sup_t |phi(t) - int Phi(t, y, Du(t, y)) dm_t(y)|` over all levels.
pub fn equivalence_check(state: &ControlsState, tol: f64) -> CheckReport {
    let mut worst = 0.0;
    let mut at = 0;
    for k in 0..state.levels() {
        for (a, b) in state.phi[k].iter().zip(&state.phi_particles[k]) {
            let e = (a - b).abs();
            if !(e <= worst) {
                worst = e;
                at = k;
            }
        }
    }
    let witness = Witness::new(
        "time",
        vec![
            vec![state.times[at]],
            state.phi[at].clone(),
            state.phi_particles[at].clone(),
        ],
    );
    CheckReport::from_margin("coupling equivalence", -worst, Some(witness), state.levels(), 0, tol)
}
