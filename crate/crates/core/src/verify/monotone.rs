use super::{worst_of, CheckReport, SamplingSpec, Witness};
use crate::error::{check_dim, check_finite, Result};
use crate::math::{dot, sub};
use crate::zoo::FiniteStateModel;

/// Worst sampled `<A(x) - A(y), x - y>` over the box, divided by `|x - y|^2`
/// when `strict` is set (an empirical strictness modulus).
pub fn check_monotone(
    name: &str,
    map: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    dim: usize,
    spec: &SamplingSpec,
    strict: bool,
) -> Result<CheckReport> {
    spec.validate()?;
    for (x, y) in &spec.probes {
        check_dim(dim, x.len())?;
        check_dim(dim, y.len())?;
    }
    let draws = spec.draw(2 * dim);
    let n_probe = spec.probes.len();
    let pair = |i: usize| -> (Vec<f64>, Vec<f64>) {
        if i < n_probe {
            spec.probes[i].clone()
        } else {
            let s = &draws[(i - n_probe) * 2 * dim..(i - n_probe + 1) * 2 * dim];
            (s[..dim].to_vec(), s[dim..].to_vec())
        }
    };
    let total = n_probe + spec.samples;
    let (worst, at) = worst_of(total, |i| {
        let (x, y) = pair(i);
        let ax = map(&x);
        check_finite(name, &x, &ax)?;
        let ay = map(&y);
        check_finite(name, &y, &ay)?;
        let dx = sub(&x, &y);
        let v = dot(&sub(&ax, &ay), &dx);
        if strict {
            let d2 = dot(&dx, &dx);
            Ok(if d2 > 0.0 { v / d2 } else { f64::INFINITY })
        } else {
            Ok(v)
        }
    })?;
    let witness = (total > 0).then(|| {
        let (x, y) = pair(at);
        Witness::new("pair", vec![x, y])
    });
    Ok(CheckReport::from_margin(name, worst, witness, total, spec.seed, spec.tol))
}

/// Monotonicity of `(x, U) -> (G(x, U), F(x, U))` on `R^{2N}`, i.e. the
/// sign of `<G(x,U) - G(y,W), x - y> + <F(x,U) - F(y,W), U - W>`.
pub fn check_pair_monotone(model: &FiniteStateModel, spec: &SamplingSpec, strict: bool) -> Result<CheckReport> {
    let n = model.dim;
    let map = |v: &[f64]| -> Vec<f64> {
        let (x, u) = v.split_at(n);
        let mut out = model.eval_g(x, u);
        out.extend(model.eval_f(x, u));
        out
    };
    let name = format!("monotone({})", model.name);
    check_monotone(&name, &map, 2 * n, spec, strict)
}
