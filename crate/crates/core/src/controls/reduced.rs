use rayon::prelude::*;
use serde::Serialize;

use super::ControlsState;
use crate::error::{Error, Result};
use crate::ode::{shoot_forward_backward, Fallback, FbProblem, ShootDirection, ShootReport, ShootingSpec};
use crate::verify::{CheckReport, Witness};
use crate::zoo::PowerControlsModel;

/// `sign(x) |x|^e`.
fn spow(x: f64, e: f64) -> f64 {
    x.signum() * x.abs().powf(e)
}

fn sampled_range(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    let n = 200;
    (0..=n)
        .map(|i| f(lo + (hi - lo) * i as f64 / n as f64))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
}

/// A priori band `c0 <= psi, z <= C0` of the reduced system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Band {
    pub lower: f64,
    pub upper: f64,
    pub psi: (f64, f64),
    pub z: (f64, f64),
    /// Bound on `|a|` over the reachable coupling range.
    pub a_bound: f64,
}

impl Band {
    fn contains(&self, v: f64) -> bool {
        let slack = 1e-9 * (1.0 + v.abs());
        v >= self.lower - slack && v <= self.upper + slack
    }
}

/// Lower comparison for `psi`: backward solution of `y' = -y^p/p - A y`
/// from `y(0) = g_lo` over the horizon.
fn psi_lower(g_lo: f64, p: f64, a: f64, horizon: f64) -> f64 {
    let n = 2000;
    let h = horizon / n as f64;
    let f = |y: f64| -y.abs().powf(p) / p - a * y;
    let mut y = g_lo;
    for _ in 0..n {
        let k1 = f(y);
        let k2 = f(y + 0.5 * h * k1);
        let k3 = f(y + 0.5 * h * k2);
        let k4 = f(y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    y
}

/// Band by comparison: `|a| <= A` bounds `z` by `z0 e^{+-...}`, `psi` above
/// by `g_hi e^{AT}` and below by [`psi_lower`]; `A` is then re-read from `a`
/// on the coupling range these bounds allow, until it closes.
pub fn a_priori_band(model: &PowerControlsModel) -> Result<Band> {
    let (p, q, t) = (model.p, model.q, model.horizon);
    let pc = model.p_conj();
    let (z0, alpha0) = (model.z0(), model.alpha0());
    let mut a_bound = model.a.eval(0.0).abs();
    for _ in 0..500 {
        let z_hi = z0 * (a_bound * t).exp();
        let g_hi = sampled_range(|z| model.g.eval(z), 0.0, z_hi).1;
        let psi_hi = g_hi.max(0.0) * (a_bound * t).exp();
        let z_lo = z0 * (-(psi_hi.powf(p - 1.0) + a_bound) * t).exp();
        let g_lo = sampled_range(|z| model.g.eval(z), z_lo, z_hi).0;
        let psi_lo = psi_lower(g_lo, p, a_bound, t);
        let phi_hi = alpha0 * psi_hi.powf(q) * (q / pc * a_bound * t).exp();
        let a_new = sampled_range(|phi| model.a.eval(phi).abs(), 0.0, phi_hi).1;
        if !a_new.is_finite() || a_new > 1e6 {
            break;
        }
        if a_new <= a_bound {
            let lower = psi_lo.min(z_lo);
            if !(lower > 0.0) {
                return Err(Error::Precondition(format!(
                    "a priori band degenerates (psi >= {psi_lo}, z >= {z_lo})"
                )));
            }
            return Ok(Band {
                lower,
                upper: psi_hi.max(z_hi),
                psi: (psi_lo, psi_hi),
                z: (z_lo, z_hi),
                a_bound,
            });
        }
        a_bound = a_new * (1.0 + 1e-6);
    }
    Err(Error::Precondition(
        "no a priori band: the bound on |a| does not close".into(),
    ))
}

/// Solved reduced system with state `[psi, z, phi]`.
#[derive(Debug, Clone, Serialize)]
pub struct ReducedControls {
    pub name: String,
    pub shoot: ShootReport,
    pub band: Option<Band>,
    /// `None` when no band could be computed.
    pub band_holds: Option<bool>,
}

impl ReducedControls {
    pub fn converged(&self) -> bool {
        self.shoot.converged
    }

    pub fn times(&self) -> &[f64] {
        &self.shoot.trajectory.times
    }

    pub fn psi(&self, t: f64) -> f64 {
        self.shoot.trajectory.at(t)[0]
    }

    pub fn z(&self, t: f64) -> f64 {
        self.shoot.trajectory.at(t)[1]
    }

    pub fn phi(&self, t: f64) -> f64 {
        self.shoot.trajectory.at(t)[2]
    }

    pub fn state(&self, i: usize) -> &[f64] {
        self.shoot.trajectory.state(i)
    }
}

/// Forward shooting on `psi(0)` from `g(z0)` with a secant fallback.
pub fn default_shooting(model: &PowerControlsModel) -> ShootingSpec {
    let mut spec = ShootingSpec::new(vec![model.g.eval(model.z0())], ShootDirection::Forward);
    spec.fallback = Fallback::Secant;
    spec
}

fn check_g(model: &PowerControlsModel) -> Result<()> {
    let hi = 10.0 * (1.0 + model.z0());
    let n = 400;
    let mut prev = model.g.eval(0.0);
    for i in 0..=n {
        let z = hi * i as f64 / n as f64;
        let v = model.g.eval(z);
        if !(v >= 0.0) || v < prev - 1e-12 {
            return Err(Error::Precondition(format!(
                "g must be nonnegative and nondecreasing, fails near z = {z}"
            )));
        }
        prev = v;
    }
    Ok(())
}

/// Shoots the reduced power system
/// `psi' = |psi|^p/p - a(phi) psi`, `z' = -z(psi|psi|^{p-2} - a(phi))`,
/// `phi' = -(q/p') a(phi) phi`, with `psi(T) = g(z(T))`, `z(0) = z0`,
/// `phi(0) = alpha0 |psi(0)|^q`.
pub fn solve_reduced_controls(model: &PowerControlsModel, spec: &ShootingSpec) -> Result<ReducedControls> {
    check_g(model)?;
    let band = a_priori_band(model).ok();
    solve_with_band(model, spec, band)
}

fn solve_with_band(model: &PowerControlsModel, spec: &ShootingSpec, band: Option<Band>) -> Result<ReducedControls> {
    let (p, q) = (model.p, model.q);
    let pc = model.p_conj();
    let (z0, alpha0) = (model.z0(), model.alpha0());
    let field = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let a = model.a.eval(y[2]);
        dy[0] = y[0].abs().powf(p) / p - a * y[0];
        dy[1] = -y[1] * (spow(y[0], p - 1.0) - a);
        dy[2] = -q / pc * a * y[2];
    };
    let terminal = |zphi: &[f64]| vec![model.g.eval(zphi[0])];
    let initial = |psi0: &[f64]| vec![z0, alpha0 * psi0[0].abs().powf(q)];
    let problem = FbProblem {
        backward_dim: 1,
        forward_dim: 2,
        horizon: model.horizon,
        field: &field,
        terminal: &terminal,
        initial: &initial,
    };
    let shoot = shoot_forward_backward(&problem, spec)?;
    let band_holds = band.map(|b| {
        (0..shoot.trajectory.len()).all(|i| {
            let s = shoot.trajectory.state(i);
            b.contains(s[0]) && b.contains(s[1])
        })
    });
    Ok(ReducedControls {
        name: model.name.clone(),
        shoot,
        band,
        band_holds,
    })
}

/// Entries of the uniqueness matrix at `(psi, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PqMatrix {
    pub m11: f64,
    pub m12: f64,
    pub m22: f64,
    pub trace: f64,
    pub det: f64,
}

/// With `s = (p'/p) z psi^p` (so that `phi = s` on solutions),
/// `A = psi^p/p - a(s) psi`, `B = psi^{p-1} - a(s)` and
/// `M = [[-z B_psi, (A_psi - B - z B_z)/2], [., A_z]]`.
pub fn pq_matrix(model: &PowerControlsModel, psi: f64, z: f64) -> PqMatrix {
    let p = model.p;
    let kappa = model.p_conj() / p;
    let s = kappa * z * psi.powf(p);
    let (a, da) = (model.a.eval(s), model.a.deriv(s));
    let b = psi.powf(p - 1.0) - a;
    let a_psi = psi.powf(p - 1.0) - a - da * kappa * p * z * psi.powf(p);
    let a_z = -da * kappa * psi.powf(p + 1.0);
    let b_psi = (p - 1.0) * psi.powf(p - 2.0) - da * kappa * p * z * psi.powf(p - 1.0);
    let b_z = -da * kappa * psi.powf(p);
    let m11 = -z * b_psi;
    let m12 = 0.5 * (a_psi - b - z * b_z);
    let m22 = a_z;
    PqMatrix {
        m11,
        m12,
        m22,
        trace: m11 + m22,
        det: m11 * m22 - m12 * m12,
    }
}

/// `count` equally spaced shooting guesses on `[c0/2, 2 C0]`.
pub fn multistart_guesses(band: &Band, count: usize) -> Vec<f64> {
    let (lo, hi) = (0.5 * band.lower, 2.0 * band.upper);
    match count {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..count).map(|j| lo + (hi - lo) * j as f64 / (count - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PqRun {
    pub guess: f64,
    pub converged: bool,
    pub error: Option<String>,
    pub iterations: usize,
    pub times: Vec<f64>,
    pub psi: Vec<f64>,
    pub z: Vec<f64>,
    pub phi: Vec<f64>,
    pub trace: Vec<f64>,
    pub det: Vec<f64>,
    /// `max_t |phi - (p'/p) z |psi|^p|`.
    pub identity_defect: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PqVerdict {
    #[serde(rename = "unique-consistent")]
    UniqueConsistent,
    #[serde(rename = "criterion fails")]
    CriterionFails,
}

#[derive(Debug, Clone, Serialize)]
pub struct PqStudy {
    pub band: Option<Band>,
    pub runs: Vec<PqRun>,
    /// Largest `sup_t max(|psi_i - psi_j|, |z_i - z_j|)` over converged runs.
    pub max_pairwise: f64,
    pub agree: bool,
    pub matrix_negative: bool,
    /// `X = (psi_1 - psi_2)(z_1 - z_2)` nonincreasing for every pair.
    pub dissipative: bool,
    /// Trace threshold `(p-1)/(p C0^{1-1/p})` for the declared `delta1`.
    pub delta_threshold: Option<f64>,
    pub delta_within_threshold: Option<bool>,
    pub verdict: PqVerdict,
    pub reasons: Vec<String>,
}

/// Agreement tolerance between multistart solutions.
pub const PQ_AGREEMENT: f64 = 1e-6;

/// Multistart shooting for `p = q` with the matrix test along every path.
pub fn solve_pq(model: &PowerControlsModel, guesses: &[f64], template: &ShootingSpec) -> Result<PqStudy> {
    let (p, q) = (model.p, model.q);
    if (p - q).abs() > 1e-12 {
        return Err(Error::Input(format!("solve_pq needs p = q, got p={p}, q={q}")));
    }
    if guesses.is_empty() {
        return Err(Error::Input("at least one shooting guess is required".into()));
    }
    check_g(model)?;
    let band = a_priori_band(model).ok();
    let kappa = model.p_conj() / p;
    let runs: Vec<PqRun> = guesses
        .par_iter()
        .map(|&guess| {
            let mut spec = template.clone();
            spec.guess = vec![guess];
            match solve_with_band(model, &spec, band) {
                Ok(sol) => {
                    let tr = &sol.shoot.trajectory;
                    let n = tr.len();
                    let mut run = PqRun {
                        guess,
                        converged: sol.converged(),
                        error: None,
                        iterations: sol.shoot.iterations,
                        times: tr.times.clone(),
                        psi: Vec::with_capacity(n),
                        z: Vec::with_capacity(n),
                        phi: Vec::with_capacity(n),
                        trace: Vec::with_capacity(n),
                        det: Vec::with_capacity(n),
                        identity_defect: 0.0,
                    };
                    for i in 0..n {
                        let s = tr.state(i);
                        let m = pq_matrix(model, s[0], s[1]);
                        run.psi.push(s[0]);
                        run.z.push(s[1]);
                        run.phi.push(s[2]);
                        run.trace.push(m.trace);
                        run.det.push(m.det);
                        let d = (s[2] - kappa * s[1] * s[0].abs().powf(p)).abs();
                        run.identity_defect = run.identity_defect.max(d);
                    }
                    run
                }
                Err(e) => PqRun {
                    guess,
                    converged: false,
                    error: Some(e.to_string()),
                    iterations: 0,
                    times: Vec::new(),
                    psi: Vec::new(),
                    z: Vec::new(),
                    phi: Vec::new(),
                    trace: Vec::new(),
                    det: Vec::new(),
                    identity_defect: f64::NAN,
                },
            }
        })
        .collect();

    let mut reasons = Vec::new();
    let ok: Vec<&PqRun> = runs.iter().filter(|r| r.converged).collect();
    if ok.len() < runs.len() {
        reasons.push(format!("{} of {} runs did not converge", runs.len() - ok.len(), runs.len()));
    }
    let mut max_pairwise: f64 = 0.0;
    let mut dissipative = true;
    for i in 0..ok.len() {
        for j in i + 1..ok.len() {
            let (a, b) = (ok[i], ok[j]);
            let mut prev_x = f64::NAN;
            for k in 0..a.psi.len().min(b.psi.len()) {
                let (dp, dz) = (a.psi[k] - b.psi[k], a.z[k] - b.z[k]);
                max_pairwise = max_pairwise.max(dp.abs().max(dz.abs()));
                let x = dp * dz;
                if x - prev_x > 1e-12 * (1.0 + prev_x.abs()) {
                    dissipative = false;
                }
                prev_x = x;
            }
        }
    }
    let agree = !ok.is_empty() && max_pairwise <= PQ_AGREEMENT;
    if !ok.is_empty() && !agree {
        reasons.push(format!("multistart spread {max_pairwise:e} exceeds {PQ_AGREEMENT:e}"));
    }
    let matrix_negative = !ok.is_empty()
        && ok
            .iter()
            .all(|r| r.trace.iter().all(|&t| t < 0.0) && r.det.iter().all(|&d| d > 0.0));
    if !ok.is_empty() && !matrix_negative {
        let worst_tr = ok.iter().flat_map(|r| r.trace.iter()).cloned().fold(f64::NEG_INFINITY, f64::max);
        let worst_det = ok.iter().flat_map(|r| r.det.iter()).cloned().fold(f64::INFINITY, f64::min);
        reasons.push(format!(
            "matrix not negative along paths (max trace {worst_tr:e}, min det {worst_det:e})"
        ));
    }
    let delta_threshold = band.map(|b| (p - 1.0) / (p * b.upper.powf(1.0 - 1.0 / p)));
    let delta_within_threshold = match (delta_threshold, model.band) {
        (Some(th), Some((_, d1))) => Some(d1 <= th),
        _ => None,
    };
    if band.is_none() {
        reasons.push("no a priori band".into());
    }
    let verdict = if reasons.is_empty() {
        PqVerdict::UniqueConsistent
    } else {
        PqVerdict::CriterionFails
    };
    Ok(PqStudy {
        band,
        runs,
        max_pairwise,
        agree,
        matrix_negative,
        dissipative,
        delta_threshold,
        delta_within_threshold,
        verdict,
        reasons,
    })
}

/// Compares the reduced solution with a full fixed-point state: `phi` at every
/// level and `z = (1/p') int |y|^{p'} dm_t` at every snapshot.
pub fn compare_reduced_full(
    model: &PowerControlsModel,
    reduced: &ReducedControls,
    state: &ControlsState,
    tol: f64,
) -> CheckReport {
    let pc = model.p_conj();
    let mut worst = 0.0;
    let mut at = 0.0;
    for (k, &t) in state.times.iter().enumerate() {
        let e = (state.phi[k][0] - reduced.phi(t)).abs();
        if !(e <= worst) {
            worst = e;
            at = t;
        }
    }
    for (t, cloud) in &state.snapshots {
        let z = cloud.average(|y| y[0].abs().powf(pc) / pc);
        let e = (z - reduced.z(*t)).abs();
        if !(e <= worst) {
            worst = e;
            at = *t;
        }
    }
    CheckReport::from_margin(
        "reduced vs full",
        -worst,
        Some(Witness::new("time", vec![vec![at]])),
        state.times.len() + state.snapshots.len(),
        0,
        tol,
    )
}
