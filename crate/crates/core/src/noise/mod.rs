//! Grid solvers for the finite-state master equation with a common noise
//! term, its first-order expansion in the noise rate, and the stability
//! estimate under bounded perturbations.


use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finite::{eval_u, log_log_slope};
use crate::ode::{IntegratorSpec, NewtonSpec};
use crate::verify::{CheckReport, Witness};
use crate::zoo::{GridSpec, NoiseModel};

/// Flag level above which a node counts as boundary influenced.
const FLAG_LEVEL: f64 = 0.5;

/// Uniform tensor lattice on `[-R, R]^N`, last coordinate fastest.
#[derive(Debug, Clone)]
struct Lattice {
    dim: usize,
    n: usize,
    lo: f64,
    h: f64,
    strides: Vec<usize>,
}

/// Cell of a point and its local coordinates; coordinates leave `[0, 1]`
/// outside the box, which extrapolates linearly from the boundary cell.
#[derive(Debug, Clone, Copy)]
struct Locus {
    base: usize,
    r: [f64; 3],
    outside: bool,
}

impl Lattice {
    fn new(dim: usize, grid: &GridSpec) -> Self {
        let n = grid.nodes_per_axis;
        let strides = (0..dim).map(|d| n.pow((dim - 1 - d) as u32)).collect();
        Self {
            dim,
            n,
            lo: -grid.half_width,
            h: grid.spacing(),
            strides,
        }
    }

    fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    fn node(&self, k: usize) -> Vec<f64> {
        (0..self.dim)
            .map(|d| self.lo + ((k / self.strides[d]) % self.n) as f64 * self.h)
            .collect()
    }

    fn locate(&self, x: &[f64]) -> Locus {
        let mut loc = Locus {
            base: 0,
            r: [0.0; 3],
            outside: false,
        };
        for d in 0..self.dim {
            let mut s = (x[d] - self.lo) / self.h;
            if (s - s.round()).abs() < 1e-9 {
                s = s.round();
            }
            if s < 0.0 || s > (self.n - 1) as f64 {
                loc.outside = true;
            }
            let j = (s.floor().max(0.0) as usize).min(self.n - 2);
            loc.base += j * self.strides[d];
            loc.r[d] = s - j as f64;
        }
        loc
    }

    fn corners(&self, loc: &Locus) -> impl Iterator<Item = (usize, f64, usize)> + '_ {
        let loc = *loc;
        (0..1usize << self.dim).map(move |mask| {
            let mut idx = loc.base;
            let mut w = 1.0;
            for d in 0..self.dim {
                if mask >> d & 1 == 1 {
                    idx += self.strides[d];
                    w *= loc.r[d];
                } else {
                    w *= 1.0 - loc.r[d];
                }
            }
            (idx, w, mask)
        })
    }

    /// Multilinear interpolation of a field with `c` components per node.
    fn interp(&self, values: &[f64], c: usize, loc: &Locus, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (idx, w, _) in self.corners(loc) {
            if w != 0.0 {
                for (o, v) in out.iter_mut().zip(&values[idx * c..(idx + 1) * c]) {
                    *o += w * v;
                }
            }
        }
    }

    fn interp_scalar(&self, values: &[f64], loc: &Locus) -> f64 {
        let mut out = [0.0];
        self.interp(values, 1, loc, &mut out);
        out[0]
    }

    /// Derivative of the interpolant along `w`.
    fn directional(&self, values: &[f64], c: usize, loc: &Locus, w: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for mask in 0..1usize << self.dim {
            let mut idx = loc.base;
            let mut weight_parts = [0.0; 3];
            let mut slopes = [0.0; 3];
            for d in 0..self.dim {
                if mask >> d & 1 == 1 {
                    idx += self.strides[d];
                    weight_parts[d] = loc.r[d];
                    slopes[d] = 1.0;
                } else {
                    weight_parts[d] = 1.0 - loc.r[d];
                    slopes[d] = -1.0;
                }
            }
            let mut dw = 0.0;
            for d in 0..self.dim {
                let mut term = slopes[d] / self.h * w[d];
                for e in 0..self.dim {
                    if e != d {
                        term *= weight_parts[e];
                    }
                }
                dw += term;
            }
            for (o, v) in out.iter_mut().zip(&values[idx * c..(idx + 1) * c]) {
                *o += dw * v;
            }
        }
    }

    fn is_edge(&self, k: usize) -> bool {
        (0..self.dim).any(|d| {
            let i = (k / self.strides[d]) % self.n;
            i == 0 || i == self.n - 1
        })
    }
}

/// Values of a grid solve at the stored snapshot times.
#[derive(Debug, Clone, Serialize)]
pub struct GridSolution {
    pub dim: usize,
    pub grid: GridSpec,
    pub lambda: f64,
    pub times: Vec<f64>,
    frames: Vec<Vec<f64>>,
    /// Nodes whose values felt the box boundary at some time.
    pub flagged: Vec<bool>,
    /// `max_t ||D_x U(t)||` over interior nodes at the snapshots.
    pub lipschitz: f64,
}

impl GridSolution {
    pub fn node_count(&self) -> usize {
        self.flagged.len()
    }

    pub fn frame(&self, k: usize) -> &[f64] {
        &self.frames[k]
    }

    pub fn value(&self, k: usize, node: usize) -> &[f64] {
        &self.frames[k][node * self.dim..(node + 1) * self.dim]
    }

    pub fn node(&self, node: usize) -> Vec<f64> {
        Lattice::new(self.dim, &self.grid).node(node)
    }

    pub fn boundary_influenced(&self) -> bool {
        self.flagged.iter().any(|f| *f)
    }

    /// Unflagged nodes with `|x|_inf <= radius`.
    pub fn interior_nodes(&self, radius: f64) -> Vec<usize> {
        let lat = Lattice::new(self.dim, &self.grid);
        (0..self.node_count())
            .filter(|&k| !self.flagged[k] && lat.node(k).iter().all(|v| v.abs() <= radius + 1e-12))
            .collect()
    }

    /// `max_{k, nodes} |a - b|` over nodes both solutions leave unflagged.
    pub fn sup_distance(&self, other: &GridSolution) -> Result<f64> {
        if self.frames.len() != other.frames.len() || self.node_count() != other.node_count() {
            return Err(Error::Input("solutions live on different grids".into()));
        }
        let mut worst: f64 = 0.0;
        for (a, b) in self.frames.iter().zip(&other.frames) {
            for k in 0..self.node_count() {
                if self.flagged[k] || other.flagged[k] {
                    continue;
                }
                for c in 0..self.dim {
                    worst = worst.max((a[k * self.dim + c] - b[k * other.dim + c]).abs());
                }
            }
        }
        Ok(worst)
    }
}

/// Bounded perturbation added to the right-hand side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Forcing {
    /// Constant vector `R(t, x) = c`.
    Constant(Vec<f64>),
    /// `R(t, x) = amplitude sin(frequency x_1) e_1`.
    Wave { amplitude: f64, frequency: f64 },
}

impl Forcing {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Forcing::Constant(c) => out.copy_from_slice(c),
            Forcing::Wave { amplitude, frequency } => {
                out.iter_mut().for_each(|v| *v = 0.0);
                out[0] = amplitude * (frequency * x[0]).sin();
            }
        }
    }

    pub fn sup_norm(&self) -> f64 {
        match self {
            Forcing::Constant(c) => c.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Forcing::Wave { amplitude, .. } => amplitude.abs(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        match self {
            Forcing::Constant(c) => Forcing::Constant(c.iter().map(|v| v * s).collect()),
            Forcing::Wave { amplitude, frequency } => Forcing::Wave {
                amplitude: amplitude * s,
                frequency: *frequency,
            },
        }
    }
}

struct Run {
    solution: GridSolution,
    tangent: Option<GridSolution>,
}

fn spectral_lipschitz(lat: &Lattice, values: &[f64]) -> f64 {
    let n = lat.dim;
    (0..lat.len())
        .into_par_iter()
        .filter(|&k| !lat.is_edge(k))
        .map(|k| {
            let mut jac = DMatrix::zeros(n, n);
            for d in 0..n {
                let (kp, km) = (k + lat.strides[d], k - lat.strides[d]);
                for c in 0..n {
                    jac[(c, d)] = (values[kp * n + c] - values[km * n + c]) / (2.0 * lat.h);
                }
            }
            jac.singular_values().max()
        })
        .reduce(|| 0.0, f64::max)
}

/// Explicit semi-Lagrangian stepping of
/// `U_t + (F.grad)U + lambda (U - M^T U(Tx)) = G + R`, optionally with the
/// exact tangent of the scheme in `lambda`.
fn run(model: &NoiseModel, lambda: f64, forcing: Option<&Forcing>, tangent: bool) -> Result<Run> {
    model.validate()?;
    if lambda < 0.0 {
        return Err(Error::Input("noise rate must be nonnegative".into()));
    }
    let grid = model.grid;
    let n = model.core.dim;
    let lat = Lattice::new(n, &grid);
    let size = lat.len();
    let dt = grid.horizon / grid.steps() as f64;
    if lambda * dt > 1.0 {
        return Err(Error::StepRefused(format!("lambda dt = {} exceeds 1", lambda * dt)));
    }
    if let Some(Forcing::Constant(c)) = forcing {
        if c.len() != n {
            return Err(Error::Dimension { expected: n, got: c.len() });
        }
    }
    let nodes: Vec<Vec<f64>> = (0..size).map(|k| lat.node(k)).collect();
    let rearranged: Vec<Locus> = nodes.iter().map(|x| lat.locate(&model.rearrangement.apply(x))).collect();
    let core = &model.core;
    let map = &model.rearrangement;

    let mut u = vec![0.0; size * n];
    for (k, x) in nodes.iter().enumerate() {
        let v = core.try_u0(x)?;
        u[k * n..(k + 1) * n].copy_from_slice(&v);
    }
    let mut v = vec![0.0; if tangent { size * n } else { 0 }];
    let mut flag = vec![0.0; size];
    let mut ever = vec![false; size];
    let steps = grid.steps();
    let every = steps / grid.snapshots;
    let mut times = vec![0.0];
    let mut frames = vec![u.clone()];
    let mut tframes = vec![v.clone()];
    let mut next_u = vec![0.0; size * n];
    let mut next_v = vec![0.0; v.len()];
    let mut next_flag = vec![0.0; size];

    for step in 0..steps {
        let t = step as f64 * dt;
        let speeds: Vec<f64> = next_u
            .par_chunks_mut(n)
            .zip(next_flag.par_iter_mut())
            .enumerate()
            .map(|(k, (out, fl))| {
                let x = &nodes[k];
                let uk = &u[k * n..(k + 1) * n];
                let mut f = vec![0.0; n];
                (core.f)(x, uk, &mut f);
                let foot: Vec<f64> = x.iter().zip(&f).map(|(a, b)| a - dt * b).collect();
                let loc = lat.locate(&foot);
                lat.interp(&u, n, &loc, out);
                let mut g = vec![0.0; n];
                (core.g)(x, uk, &mut g);
                if let Some(r) = forcing {
                    let mut rv = vec![0.0; n];
                    r.eval(x, &mut rv);
                    g.iter_mut().zip(&rv).for_each(|(a, b)| *a += b);
                }
                let mut spread = if loc.outside { 1.0 } else { lat.interp_scalar(&flag, &loc) };
                if lambda > 0.0 {
                    let mut ut = vec![0.0; n];
                    lat.interp(&u, n, &rearranged[k], &mut ut);
                    let back = map.adjoint_apply(&ut);
                    for c in 0..n {
                        g[c] -= lambda * (uk[c] - back[c]);
                    }
                    spread = spread.max(lat.interp_scalar(&flag, &rearranged[k]));
                }
                for c in 0..n {
                    out[c] += dt * g[c];
                }
                *fl = spread;
                f.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
            })
            .collect();
        let worst = speeds.iter().cloned().fold(0.0, f64::max);
        if !(worst * dt <= lat.h) {
            return Err(Error::StepRefused(format!(
                "dt |F| / h = {} exceeds 1 at t = {t}",
                worst * dt / lat.h
            )));
        }
        if tangent {
            next_v.par_chunks_mut(n).enumerate().for_each(|(k, out)| {
                let x = &nodes[k];
                let uk = &u[k * n..(k + 1) * n];
                let vk = &v[k * n..(k + 1) * n];
                let f = core.eval_f(x, uk);
                let foot: Vec<f64> = x.iter().zip(&f).map(|(a, b)| a - dt * b).collect();
                let loc = lat.locate(&foot);
                lat.interp(&v, n, &loc, out);
                let jf = core.jac_u_f(x, uk);
                let shift: Vec<f64> = (0..n)
                    .map(|r| -dt * (0..n).map(|c| jf[r * n + c] * vk[c]).sum::<f64>())
                    .collect();
                let mut du = vec![0.0; n];
                lat.directional(&u, n, &loc, &shift, &mut du);
                let jg = core.jac_u_g(x, uk);
                let mut ut = vec![0.0; n];
                lat.interp(&u, n, &rearranged[k], &mut ut);
                let back = map.adjoint_apply(&ut);
                let mut vt = vec![0.0; n];
                lat.interp(&v, n, &rearranged[k], &mut vt);
                let vback = map.adjoint_apply(&vt);
                for c in 0..n {
                    let gv: f64 = (0..n).map(|j| jg[c * n + j] * vk[j]).sum();
                    out[c] += du[c] + dt * (gv - (uk[c] - back[c]) - lambda * (vk[c] - vback[c]));
                }
            });
            std::mem::swap(&mut v, &mut next_v);
        }
        std::mem::swap(&mut u, &mut next_u);
        std::mem::swap(&mut flag, &mut next_flag);
        if let Some(k) = u.iter().position(|x| !x.is_finite()) {
            return Err(Error::BlowUp {
                t: t + dt,
                detail: format!("node {}", k / n),
            });
        }
        for (e, f) in ever.iter_mut().zip(&flag) {
            *e |= *f > FLAG_LEVEL;
        }
        if (step + 1) % every == 0 {
            times.push((step + 1) as f64 * dt);
            frames.push(u.clone());
            if tangent {
                tframes.push(v.clone());
            }
        }
    }
    let lipschitz = frames.iter().map(|f| spectral_lipschitz(&lat, f)).fold(0.0, f64::max);
    let solution = GridSolution {
        dim: n,
        grid,
        lambda,
        times: times.clone(),
        frames,
        flagged: ever.clone(),
        lipschitz,
    };
    let tangent = tangent.then(|| GridSolution {
        dim: n,
        grid,
        lambda,
        lipschitz: tframes.iter().map(|f| spectral_lipschitz(&lat, f)).fold(0.0, f64::max),
        times,
        frames: tframes,
        flagged: ever,
    });
    Ok(Run { solution, tangent })
}

/// Grid solution of the noisy equation at rate `lambda`.
pub fn solve_noisy(model: &NoiseModel, lambda: f64) -> Result<GridSolution> {
    Ok(run(model, lambda, None, false)?.solution)
}

/// Grid solution with the perturbation `R` added to the right-hand side.
pub fn solve_perturbed(model: &NoiseModel, lambda: f64, forcing: &Forcing) -> Result<GridSolution> {
    Ok(run(model, lambda, Some(forcing), false)?.solution)
}

/// The noiseless solution `U` and the correction `V` with `V(0) = 0`. `V` is
/// the exact derivative in `lambda` at `0` of the discrete scheme, which is a
/// semi-Lagrangian discretization of the linearized equation with frozen
/// drift `F(x, U)`.
pub fn solve_linearized(model: &NoiseModel) -> Result<(GridSolution, GridSolution)> {
    let r = run(model, 0.0, None, true)?;
    Ok((r.solution, r.tangent.expect("tangent requested")))
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionStudy {
    pub eps: Vec<f64>,
    /// `sup |U^eps - (U + eps V)|` over unflagged nodes and snapshots.
    pub errors: Vec<f64>,
    pub slope: Option<f64>,
    pub report: CheckReport,
}

/// Slope window for the quadratic expansion rate.
pub const EXPANSION_SLOPE: (f64, f64) = (1.8, 2.2);

/// Errors of the first-order expansion at each `eps` and their log-log slope.
pub fn expansion_study(model: &NoiseModel, eps: &[f64]) -> Result<ExpansionStudy> {
    if eps.len() < 4 || eps.iter().any(|e| !(*e > 0.0 && *e < 1.0)) || eps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Input(
            "need at least 4 increasing values of eps in (0, 1)".into(),
        ));
    }
    let (base, corr) = solve_linearized(model)?;
    let n = base.dim;
    let mut errors = Vec::with_capacity(eps.len());
    for &e in eps {
        let noisy = solve_noisy(model, e)?;
        let mut worst: f64 = 0.0;
        for k in 0..base.times.len() {
            for node in 0..base.node_count() {
                if base.flagged[node] || noisy.flagged[node] {
                    continue;
                }
                let (a, b, c) = (noisy.value(k, node), base.value(k, node), corr.value(k, node));
                for j in 0..n {
                    worst = worst.max((a[j] - b[j] - e * c[j]).abs());
                }
            }
        }
        errors.push(worst);
    }
    let slope = log_log_slope(eps, &errors);
    let (lo, hi) = EXPANSION_SLOPE;
    let margin = slope.map_or(f64::NEG_INFINITY, |s| (s - lo).min(hi - s));
    let mut report = CheckReport::from_margin(
        "expansion slope",
        margin,
        Some(Witness::new("eps-error", vec![eps.to_vec(), errors.clone()])),
        eps.len(),
        0,
        0.0,
    );
    if errors.windows(2).any(|w| w[1] < w[0]) {
        report.pass = false;
        report.failed.push("errors decrease with eps".into());
    }
    Ok(ExpansionStudy {
        eps: eps.to_vec(),
        errors,
        slope,
        report,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub forcing_norm: f64,
    pub gap: f64,
    pub lipschitz: f64,
    pub bound: f64,
    pub allowance: f64,
    pub report: CheckReport,
}

/// Scheme allowance on the stability bound.
pub const STABILITY_ALLOWANCE: f64 = 0.05;

/// Solves with and without `R` and compares the gap with
/// `sqrt(L0 T / alpha) ||R||` where `L0` is measured from the unperturbed run.
pub fn stability_check(model: &NoiseModel, lambda: f64, forcing: &Forcing) -> Result<StabilityReport> {
    if !(model.alpha > 0.0) {
        return Err(Error::Precondition("strong monotonicity constant must be positive".into()));
    }
    let base = solve_noisy(model, lambda)?;
    let pert = solve_perturbed(model, lambda, forcing)?;
    stability_from(model, &base, &pert, forcing)
}

/// Same as [`stability_check`] with an already computed unperturbed run.
pub fn stability_from(
    model: &NoiseModel,
    base: &GridSolution,
    pert: &GridSolution,
    forcing: &Forcing,
) -> Result<StabilityReport> {
    let gap = base.sup_distance(pert)?;
    let norm = forcing.sup_norm();
    let bound = (base.lipschitz * model.grid.horizon / model.alpha).sqrt() * norm;
    let limit = bound * (1.0 + STABILITY_ALLOWANCE);
    let report = CheckReport::from_margin(
        "stability bound",
        limit - gap,
        Some(Witness::new("gap-bound", vec![vec![gap, bound]])),
        base.node_count(),
        0,
        0.0,
    );
    Ok(StabilityReport {
        forcing_norm: norm,
        gap,
        lipschitz: base.lipschitz,
        bound,
        allowance: STABILITY_ALLOWANCE,
        report,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyStudy {
    pub dts: Vec<f64>,
    pub spacings: Vec<f64>,
    /// `sup |U_grid(T) - U_characteristics(T)|` on interior nodes.
    pub errors: Vec<f64>,
    pub order: Option<f64>,
    pub report: CheckReport,
}

/// Noiseless grid solves on successively refined grids against the
/// characteristics solution at the final time, on unflagged nodes with
/// `|x|_inf <= radius`. The order is fitted against `dt`.
pub fn lambda0_consistency(
    model: &NoiseModel,
    grids: &[GridSpec],
    radius: f64,
    min_order: f64,
) -> Result<ConsistencyStudy> {
    if grids.len() < 2 {
        return Err(Error::Input("need at least two grids".into()));
    }
    let newton = NewtonSpec::default();
    let mut errors = Vec::with_capacity(grids.len());
    for g in grids {
        let m = NoiseModel {
            grid: *g,
            ..model.clone()
        };
        let sol = solve_noisy(&m, 0.0)?;
        let last = sol.times.len() - 1;
        let t = sol.times[last];
        let ode = IntegratorSpec::rk4(1e-3);
        let nodes = sol.interior_nodes(radius);
        let errs: Vec<f64> = nodes
            .par_iter()
            .map(|&k| {
                let x = sol.node(k);
                let exact = eval_u(&m.core, t, &x, &ode, &newton)?;
                Ok(sol
                    .value(last, k)
                    .iter()
                    .zip(&exact.u)
                    .fold(0.0_f64, |w, (a, b)| w.max((a - b).abs())))
            })
            .collect::<Result<_>>()?;
        errors.push(errs.into_iter().fold(0.0, f64::max));
    }
    let dts: Vec<f64> = grids.iter().map(|g| g.horizon / g.steps() as f64).collect();
    let order = log_log_slope(&dts, &errors);
    let report = CheckReport::from_margin(
        "noiseless consistency order",
        order.map_or(f64::NEG_INFINITY, |o| o - min_order),
        Some(Witness::new("dt-error", vec![dts.clone(), errors.clone()])),
        grids.len(),
        0,
        0.0,
    );
    Ok(ConsistencyStudy {
        spacings: grids.iter().map(|g| g.spacing()).collect(),
        dts,
        errors,
        order,
        report,
    })
}
