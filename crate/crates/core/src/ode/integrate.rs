use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// States beyond this magnitude count as blow-up.
const BLOW_UP: f64 = 1e150;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Rk4,
    Rk45,
}

/// Integration scheme and its step or tolerances. The direction is implied by
/// the sign of `t1 - t0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSpec {
    pub scheme: Scheme,
    pub dt: f64,
    pub atol: f64,
    pub rtol: f64,
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        Self::rk4(1e-3)
    }
}

impl IntegratorSpec {
    pub fn rk4(dt: f64) -> Self {
        Self {
            scheme: Scheme::Rk4,
            dt,
            atol: 1e-10,
            rtol: 1e-8,
        }
    }

    pub fn rk45(atol: f64, rtol: f64) -> Self {
        Self {
            scheme: Scheme::Rk45,
            dt: 1e-3,
            atol,
            rtol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.atol > 0.0) || !(self.rtol > 0.0) {
            return Err(Error::Input(
                "integrator step and tolerances must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Number of fixed steps used to cover `[t0, t1]`.
    pub fn steps_for(&self, span: f64) -> usize {
        ((span.abs() / self.dt) - 1e-9).ceil().max(1.0) as usize
    }
}

/// Which states an integration keeps.
#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    /// Every internal step; enables dense output anywhere.
    Steps,
    /// Only the given times, obtained by Hermite interpolation.
    Times(Vec<f64>),
    /// Initial and final state only.
    Final,
}

/// Sampled solution of an ODE with slopes for cubic Hermite dense output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub dim: usize,
    pub times: Vec<f64>,
    states: Vec<f64>,
    slopes: Vec<f64>,
}

impl Trajectory {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            times: Vec::new(),
            states: Vec::new(),
            slopes: Vec::new(),
        }
    }

    fn push(&mut self, t: f64, y: &[f64], dy: &[f64]) {
        self.times.push(t);
        self.states.extend_from_slice(y);
        self.slopes.extend_from_slice(dy);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn slope(&self, i: usize) -> &[f64] {
        &self.slopes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn initial_state(&self) -> &[f64] {
        self.state(0)
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn component(&self, k: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.state(i)[k]).collect()
    }

    /// Cubic Hermite dense output; times outside the recorded span clamp.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.at_into(t, &mut out);
        out
    }

    pub fn at_into(&self, t: f64, out: &mut [f64]) {
        let n = self.len();
        if n == 1 {
            out.copy_from_slice(self.state(0));
            return;
        }
        let increasing = self.times[n - 1] >= self.times[0];
        // index of the interval [times[i], times[i+1]] containing t
        let pos = if increasing {
            self.times.partition_point(|&s| s <= t)
        } else {
            self.times.partition_point(|&s| s >= t)
        };
        let i = pos.clamp(1, n - 1) - 1;
        let (ta, tb) = (self.times[i], self.times[i + 1]);
        let h = tb - ta;
        let s = ((t - ta) / h).clamp(0.0, 1.0);
        hermite(
            s,
            h,
            self.state(i),
            self.slope(i),
            self.state(i + 1),
            self.slope(i + 1),
            out,
        );
    }

    /// Reversed copy, so backward solves read in increasing time.
    pub fn reversed(&self) -> Self {
        let mut out = Self::new(self.dim);
        for i in (0..self.len()).rev() {
            out.push(self.times[i], self.state(i), self.slope(i));
        }
        out
    }
}

fn hermite(s: f64, h: f64, ya: &[f64], fa: &[f64], yb: &[f64], fb: &[f64], out: &mut [f64]) {
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    for k in 0..out.len() {
        out[k] = h00 * ya[k] + h10 * h * fa[k] + h01 * yb[k] + h11 * h * fb[k];
    }
}

fn hermite_slope(s: f64, h: f64, ya: &[f64], fa: &[f64], yb: &[f64], fb: &[f64], out: &mut [f64]) {
    let s2 = s * s;
    let d00 = (6.0 * s2 - 6.0 * s) / h;
    let d10 = 3.0 * s2 - 4.0 * s + 1.0;
    let d01 = (-6.0 * s2 + 6.0 * s) / h;
    let d11 = 3.0 * s2 - 2.0 * s;
    for k in 0..out.len() {
        out[k] = d00 * ya[k] + d10 * fa[k] + d01 * yb[k] + d11 * fb[k];
    }
}

struct Recorder {
    record: Record,
    next: usize,
    traj: Trajectory,
}

impl Recorder {
    fn new(dim: usize, record: Record, t0: f64, t1: f64) -> Result<Self> {
        if let Record::Times(ts) = &record {
            let (lo, hi) = (t0.min(t1), t0.max(t1));
            let tol = 1e-12 * (1.0 + hi.abs());
            if ts.iter().any(|&s| s < lo - tol || s > hi + tol) {
                return Err(Error::Input("sample time outside integration span".into()));
            }
            let forward = t1 >= t0;
            let ordered = ts.windows(2).all(|w| {
                if forward {
                    w[1] >= w[0]
                } else {
                    w[1] <= w[0]
                }
            });
            if !ordered {
                return Err(Error::Input(
                    "sample times must follow the integration direction".into(),
                ));
            }
        }
        Ok(Self {
            record,
            next: 0,
            traj: Trajectory::new(dim),
        })
    }

    fn start(&mut self, t: f64, y: &[f64], dy: &[f64]) {
        match &self.record {
            Record::Steps | Record::Final => self.traj.push(t, y, dy),
            Record::Times(ts) => {
                while self.next < ts.len() && ts[self.next] == t {
                    self.traj.push(t, y, dy);
                    self.next += 1;
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn step(&mut self, ta: f64, ya: &[f64], fa: &[f64], tb: f64, yb: &[f64], fb: &[f64], last: bool) {
        match &self.record {
            Record::Steps => self.traj.push(tb, yb, fb),
            Record::Final => {
                if last {
                    self.traj.push(tb, yb, fb);
                }
            }
            Record::Times(ts) => {
                let h = tb - ta;
                let forward = h > 0.0;
                let mut y = vec![0.0; ya.len()];
                let mut dy = vec![0.0; ya.len()];
                while self.next < ts.len() {
                    let s_t = ts[self.next];
                    let inside = if forward { s_t <= tb } else { s_t >= tb };
                    if !inside && !last {
                        break;
                    }
                    if s_t == tb || last && !inside {
                        self.traj.push(tb, yb, fb);
                    } else {
                        let s = (s_t - ta) / h;
                        hermite(s, h, ya, fa, yb, fb, &mut y);
                        hermite_slope(s, h, ya, fa, yb, fb, &mut dy);
                        self.traj.push(s_t, &y, &dy);
                    }
                    self.next += 1;
                }
            }
        }
    }
}

fn check_state(t: f64, y: &[f64]) -> Result<()> {
    if let Some(k) = y.iter().position(|v| !v.is_finite() || v.abs() > BLOW_UP) {
        return Err(Error::BlowUp {
            t,
            detail: format!("component {k} = {}", y[k]),
        });
    }
    Ok(())
}

/// Integrate `y' = f(t, y)` from `t0` to `t1` (either direction).
pub fn integrate<F>(
    mut f: F,
    y0: &[f64],
    t0: f64,
    t1: f64,
    spec: &IntegratorSpec,
    record: Record,
) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    spec.validate()?;
    check_state(t0, y0)?;
    let dim = y0.len();
    let mut rec = Recorder::new(dim, record, t0, t1)?;
    let mut fa = vec![0.0; dim];
    f(t0, y0, &mut fa);
    check_state(t0, &fa)?;
    rec.start(t0, y0, &fa);
    if t1 == t0 {
        return Ok(rec.traj);
    }
    match spec.scheme {
        Scheme::Rk4 => rk4_loop(&mut f, y0, fa, t0, t1, spec, &mut rec)?,
        Scheme::Rk45 => dopri_loop(&mut f, y0, fa, t0, t1, spec, &mut rec)?,
    }
    Ok(rec.traj)
}

fn rk4_loop<F>(
    f: &mut F,
    y0: &[f64],
    mut fa: Vec<f64>,
    t0: f64,
    t1: f64,
    spec: &IntegratorSpec,
    rec: &mut Recorder,
) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let dim = y0.len();
    let n = spec.steps_for(t1 - t0);
    let h = (t1 - t0) / n as f64;
    let mut y = y0.to_vec();
    let mut tmp = vec![0.0; dim];
    let (mut k2, mut k3, mut k4) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    let mut yb = vec![0.0; dim];
    let mut fb = vec![0.0; dim];
    for step in 0..n {
        let ta = t0 + step as f64 * h;
        let tb = if step + 1 == n { t1 } else { t0 + (step + 1) as f64 * h };
        for k in 0..dim {
            tmp[k] = y[k] + 0.5 * h * fa[k];
        }
        f(ta + 0.5 * h, &tmp, &mut k2);
        for k in 0..dim {
            tmp[k] = y[k] + 0.5 * h * k2[k];
        }
        f(ta + 0.5 * h, &tmp, &mut k3);
        for k in 0..dim {
            tmp[k] = y[k] + h * k3[k];
        }
        f(tb, &tmp, &mut k4);
        for k in 0..dim {
            yb[k] = y[k] + h / 6.0 * (fa[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
        }
        check_state(tb, &yb)?;
        f(tb, &yb, &mut fb);
        check_state(tb, &fb)?;
        rec.step(ta, &y, &fa, tb, &yb, &fb, step + 1 == n);
        std::mem::swap(&mut y, &mut yb);
        std::mem::swap(&mut fa, &mut fb);
    }
    Ok(())
}

// Dormand-Prince 5(4) tableau
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn dopri_loop<F>(
    f: &mut F,
    y0: &[f64],
    fa: Vec<f64>,
    t0: f64,
    t1: f64,
    spec: &IntegratorSpec,
    rec: &mut Recorder,
) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let dim = y0.len();
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let mut h = spec.dt.min(span);
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k = vec![vec![0.0; dim]; 7];
    k[0] = fa;
    let mut tmp = vec![0.0; dim];
    let mut rejected = 0usize;
    loop {
        let remaining = (t1 - t).abs();
        if remaining <= 1e-14 * (1.0 + t1.abs()) {
            break;
        }
        let last = h >= remaining;
        let hs = dir * if last { remaining } else { h };
        for s in 1..7 {
            for c in 0..dim {
                let mut acc = y[c];
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += hs * A[s][j] * kj[c];
                }
                tmp[c] = acc;
            }
            f(t + C[s] * hs, &tmp, &mut k[s]);
        }
        // stage 7 is evaluated at the 5th-order solution (FSAL)
        let y_new = tmp.clone();
        let mut err: f64 = 0.0;
        for c in 0..dim {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                e += E[j] * kj[c];
            }
            let sc = spec.atol + spec.rtol * y[c].abs().max(y_new[c].abs());
            err = err.max((hs * e / sc).abs());
        }
        if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
            rejected += 1;
            h *= 0.25;
            if h < 1e-14 * (1.0 + span) || rejected > 1000 {
                return Err(Error::BlowUp {
                    t,
                    detail: "adaptive step underflow".into(),
                });
            }
            continue;
        }
        if err <= 1.0 {
            let tb = if last { t1 } else { t + hs };
            check_state(tb, &y_new)?;
            let fb = k[6].clone();
            rec.step(t, &y, &k[0], tb, &y_new, &fb, last);
            t = tb;
            y = y_new;
            k[0] = fb;
            rejected = 0;
            if last {
                break;
            }
        } else {
            rejected += 1;
            if rejected > 1000 {
                return Err(Error::BlowUp {
                    t,
                    detail: "too many rejected steps".into(),
                });
            }
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
        if h < 1e-14 * (1.0 + span) {
            return Err(Error::BlowUp {
                t,
                detail: "adaptive step underflow".into(),
            });
        }
    }
    Ok(())
}

/// A family of trajectories sharing component labels.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TrajectoryBundle {
    pub labels: Vec<String>,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryBundle {
    pub fn new(labels: Vec<String>) -> Self {
        Self {
            labels,
            trajectories: Vec::new(),
        }
    }

    /// CSV with columns `traj, t, <labels...>`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        let mut header = vec!["traj".to_string(), "t".to_string()];
        header.extend(self.labels.iter().cloned());
        out.write_record(&header)?;
        for (j, tr) in self.trajectories.iter().enumerate() {
            for i in 0..tr.len() {
                let mut row = vec![j.to_string(), fmt_f64(tr.times[i])];
                row.extend(tr.state(i).iter().map(|v| fmt_f64(*v)));
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Shortest round-trip decimal form, so CSV output is bit-faithful.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_field(_: f64, y: &[f64], dy: &mut [f64]) {
        dy[0] = y[0];
    }

    #[test]
    fn constant_field() {
        let tr = integrate(
            |_, _, dy: &mut [f64]| dy[0] = 0.0,
            &[3.0],
            0.0,
            2.0,
            &IntegratorSpec::rk4(0.1),
            Record::Steps,
        )
        .unwrap();
        assert!(tr.component(0).iter().all(|&v| v == 3.0));
        assert_eq!(tr.len(), 21);
    }

    #[test]
    fn exponential_to_e() {
        let tr = integrate(exp_field, &[1.0], 0.0, 1.0, &IntegratorSpec::rk4(1e-3), Record::Final)
            .unwrap();
        assert!((tr.final_state()[0] - 1f64.exp()).abs() < 1e-9);
    }

    #[test]
    fn backward_riccati_closed_form() {
        let (g0, t_end) = (1.5, 1.0);
        let tr = integrate(
            |_, y: &[f64], dy: &mut [f64]| dy[0] = 0.5 * y[0] * y[0],
            &[g0],
            t_end,
            0.0,
            &IntegratorSpec::rk4(1e-3),
            Record::Steps,
        )
        .unwrap();
        for t in [0.0, 0.25, 0.5, 0.9] {
            let exact = g0 / (1.0 + g0 * (t_end - t) / 2.0);
            assert!((tr.at(t)[0] - exact).abs() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn sampled_times_use_dense_output() {
        let ts = vec![0.0, 0.123, 0.5, 0.77, 1.0];
        let tr = integrate(exp_field, &[1.0], 0.0, 1.0, &IntegratorSpec::rk4(1e-2), Record::Times(ts.clone()))
            .unwrap();
        assert_eq!(tr.times, ts);
        for (i, t) in ts.iter().enumerate() {
            assert!((tr.state(i)[0] - t.exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn rk45_meets_tolerance() {
        let tr = integrate(exp_field, &[1.0], 0.0, 2.0, &IntegratorSpec::rk45(1e-12, 1e-10), Record::Steps)
            .unwrap();
        assert!((tr.final_state()[0] - 2f64.exp()).abs() < 1e-8);
        assert!((tr.at(1.3)[0] - 1.3f64.exp()).abs() < 1e-6);
    }

    #[test]
    fn blow_up_is_reported_with_time() {
        let err = integrate(
            |_, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0],
            &[1.0],
            0.0,
            2.0,
            &IntegratorSpec::rk4(1e-3),
            Record::Final,
        )
        .unwrap_err();
        match err {
            Error::BlowUp { t, .. } => assert!(t > 0.9 && t < 1.1, "t = {t}"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn bundle_csv_layout() {
        let tr = integrate(exp_field, &[1.0], 0.0, 0.5, &IntegratorSpec::rk4(0.25), Record::Steps).unwrap();
        let mut b = TrajectoryBundle::new(vec!["y".into()]);
        b.trajectories.push(tr);
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("traj,t,y\n0,0.0,1.0\n0,0.25,"));
        assert_eq!(s.lines().count(), 4);
    }
}
