use rand::Rng;
use serde::Serialize;

use super::{worst_of, CheckReport, SamplingSpec, Witness};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::math::{dot, sub};
use crate::zoo::{PowerMasterModel, QuadraticMasterModel, ReducedHamiltonian};

/// `(lo, hi, points)` of the default `z` grid for [`check_abc`].
pub const DEFAULT_Z_GRID: (f64, f64, usize) = (0.0, 10.0, 201);

/// Momenta used for the pointwise cross-check of `h`.
const U_GRID: (f64, f64, usize) = (-5.0, 5.0, 41);

fn linspace((lo, hi, n): (f64, f64, usize)) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// One coefficient condition evaluated pointwise; `margin(k)` is negative
/// where it fails.
fn grid_condition(
    name: &str,
    violation: &str,
    count: usize,
    tol: f64,
    margin: impl Fn(usize) -> f64,
    point: impl Fn(usize) -> Vec<f64>,
) -> CheckReport {
    let mut worst = (f64::INFINITY, 0);
    for k in 0..count {
        let m = margin(k);
        if m < worst.0 {
            worst = (m, k);
        }
    }
    let label = if worst.0 < -tol { violation } else { name };
    let witness = (count > 0).then(|| Witness::new(label, vec![point(worst.1)]));
    CheckReport::from_margin(name, worst.0, witness, count, 0, tol)
}

/// Coefficient conditions of the power family on `z_grid`:
/// `a > 0`, `a' <= 0`, `c' <= 0`, `a(z) z^{4(q-1)/q}` nondecreasing,
/// `b` constant when `q > 2`, `b'^2 <= 2 a' c'` when `q = 2`, followed by
/// the pointwise conditions `h_z <= 0`, `h_uu >= 0`,
/// `z h_uz^2 <= -4 h_z h_uu` on `z_grid x [-5, 5]`.
///
/// The witness belongs to the first failing condition in that order.
pub fn check_abc(model: &PowerMasterModel, z_grid: &[f64]) -> Result<CheckReport> {
    if model.q < 2.0 {
        return Err(Error::Unsupported(format!("q = {} < 2", model.q)));
    }
    if z_grid.is_empty() || z_grid.iter().any(|z| !(*z >= 0.0) || !z.is_finite()) {
        return Err(Error::Input("z grid must be nonempty and inside [0, inf)".into()));
    }
    let tol = 1e-10;
    let q = model.q;
    let nz = z_grid.len();
    let zp = |k: usize| vec![z_grid[k]];
    let (a, b, c) = (&model.a, &model.b, &model.c);
    let mut parts = vec![
        grid_condition("a > 0", "a not positive", nz, tol, |k| {
            let v = a.eval(z_grid[k]);
            if v > 0.0 { v } else { v - 1.0 }
        }, zp),
        grid_condition("a' <= 0", "a increasing", nz, tol, |k| -a.deriv(z_grid[k]), zp),
        grid_condition("c' <= 0", "c increasing", nz, tol, |k| -c.deriv(z_grid[k]), zp),
    ];
    let e = 4.0 * (q - 1.0) / q;
    let w = |z: f64| a.eval(z) * z.powf(e);
    parts.push(grid_condition(
        "a z^{4(q-1)/q} nondecreasing",
        "a z^{4(q-1)/q} decreasing",
        nz.saturating_sub(1),
        tol,
        |k| w(z_grid[k + 1]) - w(z_grid[k]),
        |k| vec![z_grid[k], z_grid[k + 1]],
    ));
    if q > 2.0 {
        let values: Vec<f64> = z_grid.iter().map(|z| b.eval(*z)).collect();
        let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        let spread = hi - lo;
        let margin = if spread <= 1e-12 { 0.0 } else { -spread };
        let imin = values.iter().position(|v| *v == lo).unwrap_or(0);
        let imax = values.iter().position(|v| *v == hi).unwrap_or(0);
        let label = if margin < -tol { "b not constant" } else { "b constant" };
        parts.push(CheckReport::from_margin(
            "b constant",
            margin,
            Some(Witness::new(label, vec![vec![z_grid[imin]], vec![z_grid[imax]]])),
            nz,
            0,
            tol,
        ));
    } else {
        parts.push(grid_condition("b'^2 <= 2 a' c'", "b'^2 > 2 a' c'", nz, tol, |k| {
            let z = z_grid[k];
            2.0 * a.deriv(z) * c.deriv(z) - b.deriv(z).powi(2)
        }, zp));
    }

    let us = linspace(U_GRID);
    let nu = us.len();
    let zu = |k: usize| vec![z_grid[k / nu], us[k % nu]];
    let at = |k: usize| (z_grid[k / nu], us[k % nu]);
    parts.push(grid_condition("h_z <= 0", "h increasing in z", nz * nu, tol, |k| {
        let (z, u) = at(k);
        -model.h_z(z, u)
    }, zu));
    parts.push(grid_condition("h_uu >= 0", "h not convex in u", nz * nu, tol, |k| {
        let (z, u) = at(k);
        model.h_uu(z, u)
    }, zu));
    parts.push(grid_condition("z h_uz^2 <= -4 h_z h_uu", "z h_uz^2 > -4 h_z h_uu", nz * nu, tol, |k| {
        let (z, u) = at(k);
        -4.0 * model.h_z(z, u) * model.h_uu(z, u) - z * model.h_uz(z, u).powi(2)
    }, zu));
    for p in &parts {
        if !p.worst_margin.is_finite() {
            return Err(Error::Evaluation {
                what: p.name.clone(),
                at: p.witness.as_ref().and_then(|w| w.points.first().cloned()).unwrap_or_default(),
            });
        }
    }
    Ok(CheckReport::combine(format!("abc({})", model.name), &parts))
}

fn draw_pairs(model: &dyn ReducedHamiltonian, spec: &SamplingSpec) -> Vec<Vec<f64>> {
    let set = model.moment_set();
    let m = model.dim();
    let r = spec.half_width;
    let mut rng = spec.rng();
    (0..spec.samples)
        .map(|_| {
            let mut v = Vec::with_capacity(4 * m);
            v.extend(set.sample(&mut rng, r));
            v.extend((0..m).map(|_| rng.random_range(-r..=r)));
            v.extend(set.sample(&mut rng, r));
            v.extend((0..m).map(|_| rng.random_range(-r..=r)));
            v
        })
        .collect()
}

/// `-<h(z,u) - h(w,v), z - w> + <z.h_u(z,u) - w.h_u(w,v), u - v>` for a
/// flat `[z, u, w, v]`.
fn h_pairing(model: &dyn ReducedHamiltonian, s: &[f64]) -> Result<f64> {
    let m = model.dim();
    let (z, u, w, v) = (&s[..m], &s[m..2 * m], &s[2 * m..3 * m], &s[3 * m..]);
    let h1 = model.h(z, u);
    let h2 = model.h(w, v);
    let k1 = model.z_h_u(z, u);
    let k2 = model.z_h_u(w, v);
    for vals in [&h1, &h2, &k1, &k2] {
        check_finite("h", s, vals)?;
    }
    Ok(-dot(&sub(&h1, &h2), &sub(z, w)) + dot(&sub(&k1, &k2), &sub(u, v)))
}

fn sampled(
    name: &str,
    model: &dyn ReducedHamiltonian,
    spec: &SamplingSpec,
    margin: impl Fn(&[f64]) -> Result<f64> + Sync,
) -> Result<CheckReport> {
    spec.validate()?;
    let m = model.dim();
    let set = model.moment_set();
    let mut pairs: Vec<Vec<f64>> = Vec::with_capacity(spec.probes.len() + spec.samples);
    for (a, b) in &spec.probes {
        check_dim(2 * m, a.len())?;
        check_dim(2 * m, b.len())?;
        if !set.contains(&a[..m], 1e-12) || !set.contains(&b[..m], 1e-12) {
            return Err(Error::Geometry(format!("probe moments outside the moment set: {a:?}, {b:?}")));
        }
        pairs.push(a.iter().chain(b).copied().collect());
    }
    pairs.extend(draw_pairs(model, spec));
    let (worst, at) = worst_of(pairs.len(), |i| margin(&pairs[i]))?;
    let witness = pairs.get(at).map(|s| Witness::new("pair", vec![s[..2 * m].to_vec(), s[2 * m..].to_vec()]));
    Ok(CheckReport::from_margin(name, worst, witness, pairs.len(), spec.seed, spec.tol))
}

/// Monotonicity of `(z, u) -> (-h(z, u), z.h_u(z, u))` on `C x R^m`.
/// Witness points are `[z, u]` pairs.
pub fn check_h_monotone(model: &dyn ReducedHamiltonian, spec: &SamplingSpec) -> Result<CheckReport> {
    let name = format!("h-monotone({})", model.name());
    sampled(&name, model, spec, |s| h_pairing(model, s))
}

/// The three quantities behind the monotonicity argument for the
/// quadratic family, with `a = du_1`, `b = du_2`, `P` the pairing of
/// [`check_h_monotone`] and `<df, dz>` the monotone part.
#[derive(Debug, Clone, Serialize)]
pub struct QuadraticChain {
    /// `P >= 0`.
    pub monotone: CheckReport,
    /// `P - <df, dz> >= (a + z1 b)^2/2 + (a + w1 b)^2/2`.
    pub half_form: CheckReport,
    /// `P >= 3a^2/4 + (2 z1 b + a)^2/8 + (2 w1 b + a)^2/8 - <df, dz>`.
    /// Fails for general pairs; kept as a diagnostic.
    pub three_quarter_form: CheckReport,
}

pub fn quadratic_chain(model: &QuadraticMasterModel, spec: &SamplingSpec) -> Result<QuadraticChain> {
    let monotone = sampled("quadratic monotone", model, spec, |s| h_pairing(model, s))?;
    let split = |s: &[f64]| -> Result<(f64, f64, f64, f64)> {
        let p = h_pairing(model, s)?;
        let (z, u, w, v) = (&s[..3], &s[3..6], &s[6..9], &s[9..]);
        let df: Vec<f64> = (model.f)(z).iter().zip((model.f)(w)).map(|(x, y)| x - y).collect();
        let fz = dot(&df, &sub(z, w));
        Ok((p, fz, u[1] - v[1], u[2] - v[2]))
    };
    let half_form = sampled("quadratic chain (1/2 form)", model, spec, |s| {
        let (p, fz, a, b) = split(s)?;
        let (z1, w1) = (s[1], s[7]);
        Ok(p - fz - 0.5 * (a + z1 * b).powi(2) - 0.5 * (a + w1 * b).powi(2))
    })?;
    let three_quarter_form = sampled("quadratic chain (3/4 form)", model, spec, |s| {
        let (p, fz, a, b) = split(s)?;
        let (z1, w1) = (s[1], s[7]);
        Ok(p - (0.75 * a * a + 0.125 * (2.0 * z1 * b + a).powi(2) + 0.125 * (2.0 * w1 * b + a).powi(2) - fz))
    })?;
    Ok(QuadraticChain {
        monotone,
        half_form,
        three_quarter_form,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{FeatureMap, MomentSet};
    use crate::zoo::{demo_power, demo_quadratic, ScalarFn};

    fn grid() -> Vec<f64> {
        linspace(DEFAULT_Z_GRID)
    }

    #[test]
    fn demo_power_satisfies_abc() {
        let r = check_abc(&demo_power(), &grid()).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn nonconstant_b_fails_for_cubic() {
        let mut m = demo_power();
        m.q = 3.0;
        m.b = ScalarFn::affine(0.0, 1.0);
        let r = check_abc(&m, &grid()).unwrap();
        assert!(!r.pass);
        assert_eq!(r.witness.unwrap().label, "b not constant");
        assert_eq!(r.failed[0], "b constant");
    }

    #[test]
    fn decaying_a_fails_monotone_weight() {
        let mut m = demo_power();
        m.a = ScalarFn::exp_decay(1.0, 1.0);
        m.c = ScalarFn::constant(0.0);
        let r = check_abc(&m, &grid()).unwrap();
        assert!(!r.pass);
        let w = r.witness.unwrap();
        assert_eq!(w.label, "a z^{4(q-1)/q} decreasing");
        assert!(w.points[0][0] >= 2.0);
    }

    #[test]
    fn abc_rejects_small_q_and_negative_grid() {
        let mut m = demo_power();
        assert!(check_abc(&m, &[-1.0, 0.0]).is_err());
        m.q = 1.5;
        assert!(check_abc(&m, &grid()).is_err());
    }

    #[test]
    fn demo_models_are_h_monotone() {
        let spec = SamplingSpec::default();
        assert!(check_h_monotone(&demo_power(), &spec).unwrap().pass);
        assert!(check_h_monotone(&demo_quadratic(), &spec).unwrap().pass);
    }

    struct Increasing;
    impl ReducedHamiltonian for Increasing {
        fn name(&self) -> &str {
            "increasing"
        }
        fn dim(&self) -> usize {
            1
        }
        fn moment_set(&self) -> MomentSet {
            MomentSet::HalfLine
        }
        fn feature(&self) -> FeatureMap {
            FeatureMap::power(2.0, 1)
        }
        fn h(&self, z: &[f64], _u: &[f64]) -> Vec<f64> {
            vec![z[0]]
        }
        fn z_h_u(&self, _z: &[f64], _u: &[f64]) -> Vec<f64> {
            vec![0.0]
        }
        fn terminal(&self, z: &[f64]) -> Vec<f64> {
            z.to_vec()
        }
        fn velocity(&self, _x: f64, _z: &[f64], _psi: &[f64]) -> f64 {
            0.0
        }
    }

    #[test]
    fn increasing_h_fails() {
        let r = check_h_monotone(&Increasing, &SamplingSpec::default()).unwrap();
        assert!(!r.pass);
        let w = r.witness.unwrap();
        let dz = w.points[0][0] - w.points[1][0];
        assert!((r.worst_margin + dz * dz).abs() < 1e-9);
    }

    #[test]
    fn quadratic_chain_half_form_holds() {
        let out = quadratic_chain(&demo_quadratic(), &SamplingSpec::default()).unwrap();
        assert!(out.monotone.pass);
        assert!(out.half_form.pass, "{:?}", out.half_form);
        assert!(!out.three_quarter_form.pass);
    }
}
