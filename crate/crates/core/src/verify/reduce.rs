use std::sync::Arc;

use super::{check_pair_monotone, worst_of, CheckReport, SamplingSpec, Witness};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::math::{norm, sub, ReductionMap};
use crate::zoo::{FiniteStateModel, ReducedFiniteModel};

/// Map `R^k -> R^k` handed to and returned by the reduction checks.
pub type MapFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type ParamFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    /// `A(x) = L* A~(Lx)`, `A~(y) = (LL*)^{-1} L A(L† y)`.
    Complete,
    /// `L A(x) = A~(Lx)`, `A~(y) = L A(L† y)`.
    Fiber,
}

fn extract(kind: Kind, a: ParamFn, l: ReductionMap) -> ParamFn {
    Arc::new(move |y, u| {
        let la = l.apply_l(&a(&l.apply_right_inverse(y), u));
        match kind {
            Kind::Complete => l.apply_gram_inverse(&la),
            Kind::Fiber => la,
        }
    })
}

/// Residual of the extraction identity at `x` and the fiber defect between
/// `x` and `x2`, both relative to `1 + |A(x)|`.
fn defects(
    kind: Kind,
    name: &str,
    a: &ParamFn,
    reduced: &ParamFn,
    l: &ReductionMap,
    x: &[f64],
    x2: &[f64],
    u: &[f64],
) -> Result<(f64, f64)> {
    let ax = a(x, u);
    check_finite(name, x, &ax)?;
    let ax2 = a(x2, u);
    check_finite(name, x2, &ax2)?;
    let red = reduced(&l.apply_l(x), u);
    check_finite(name, x, &red)?;
    let scale = 1.0 + norm(&ax);
    let (r1, r2) = match kind {
        Kind::Complete => (norm(&sub(&ax, &l.apply_adjoint(&red))), norm(&sub(&ax, &ax2))),
        Kind::Fiber => {
            let lax = l.apply_l(&ax);
            (norm(&sub(&lax, &red)), norm(&sub(&lax, &l.apply_l(&ax2))))
        }
    };
    Ok((r1 / scale, r2 / scale))
}

fn reduce_check(
    kind: Kind,
    name: &str,
    a: ParamFn,
    param_dim: usize,
    l: &ReductionMap,
    spec: &SamplingSpec,
) -> Result<(CheckReport, ParamFn)> {
    spec.validate()?;
    let big_n = l.big_n();
    let k = l.kernel_basis().ncols();
    for (x1, x2) in &spec.probes {
        check_dim(big_n, x1.len())?;
        check_dim(big_n, x2.len())?;
        let gap = norm(&l.apply_l(&sub(x1, x2)));
        if gap > 1e-9 * (1.0 + norm(x1) + norm(x2)) {
            return Err(Error::Input(format!("probe pair {x1:?}, {x2:?} is not on one fiber")));
        }
    }
    let reduced = extract(kind, a.clone(), l.clone());
    let width = big_n + param_dim + k;
    let draws = spec.draw(width);
    let n_probe = spec.probes.len();
    let zero_u = vec![0.0; param_dim];
    let point = |i: usize| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        if i < n_probe {
            let (x1, x2) = &spec.probes[i];
            (x1.clone(), x2.clone(), zero_u.clone())
        } else {
            let s = &draws[(i - n_probe) * width..(i - n_probe + 1) * width];
            let x = s[..big_n].to_vec();
            let u = s[big_n..big_n + param_dim].to_vec();
            let shift = l.kernel_point(&s[big_n + param_dim..]);
            let x2 = x.iter().zip(&shift).map(|(a, b)| a + b).collect();
            (x, x2, u)
        }
    };
    let total = n_probe + spec.samples;
    let (worst, at) = worst_of(total, |i| {
        let (x, x2, u) = point(i);
        let (r1, r2) = defects(kind, name, &a, &reduced, l, &x, &x2, &u)?;
        Ok(-r1.max(r2))
    })?;
    let witness = if total > 0 {
        let (x, x2, u) = point(at);
        let (r1, r2) = defects(kind, name, &a, &reduced, l, &x, &x2, &u)?;
        let mut points = if r2 >= r1 { vec![x, x2] } else { vec![x] };
        if param_dim > 0 {
            points.push(u);
        }
        Some(Witness::new(if r2 >= r1 { "fiber" } else { "residual" }, points))
    } else {
        None
    };
    Ok((
        CheckReport::from_margin(name, worst, witness, total, spec.seed, spec.tol),
        reduced,
    ))
}

fn unparam(a: MapFn) -> ParamFn {
    Arc::new(move |x, _u| a(x))
}

fn param_free(r: ParamFn) -> MapFn {
    Arc::new(move |y| r(y, &[]))
}

/// Checks `A(x) = L* A~(Lx)` and constancy of `A` on fibers of `L`.
/// Margins are relative to `1 + |A(x)|`.
pub fn check_complete_reduce(a: MapFn, l: &ReductionMap, spec: &SamplingSpec) -> Result<(CheckReport, MapFn)> {
    let (report, reduced) = reduce_check(Kind::Complete, "complete-reduce", unparam(a), 0, l, spec)?;
    Ok((report, param_free(reduced)))
}

/// Checks `L A(x) = A~(Lx)` and that `A` maps fibers of `L` into fibers.
pub fn check_fiber_reduce(a: MapFn, l: &ReductionMap, spec: &SamplingSpec) -> Result<(CheckReport, MapFn)> {
    let (report, reduced) = reduce_check(Kind::Fiber, "fiber-reduce", unparam(a), 0, l, spec)?;
    Ok((report, param_free(reduced)))
}

/// Result of [`check_pair_reduction`].
#[derive(Debug, Clone)]
pub struct PairReduction {
    pub report: CheckReport,
    /// `U0` complete, `G(., L*u)` complete, `F(., L*u)` fiber.
    pub parts: Vec<CheckReport>,
    pub reduced: Option<ReducedFiniteModel>,
    /// Monotonicity of the full pair `(G, F)`.
    pub full_monotone: CheckReport,
    /// Monotonicity of the reduced pair, checked when both the reduction and
    /// the full monotonicity passed.
    pub transfer: Option<CheckReport>,
}

/// Verifies that `U0` and `x -> G(x, L*u)` completely reduce and
/// `x -> F(x, L*u)` fiber-reduces, then assembles
/// `F~(y,u) = L F(L†y, L*u)`, `G~(y,u) = (LL*)^{-1} L G(L†y, L*u)`,
/// `U0~(y) = (LL*)^{-1} L U0(L†y)`.
pub fn check_pair_reduction(model: &FiniteStateModel, l: &ReductionMap, spec: &SamplingSpec) -> Result<PairReduction> {
    check_dim(l.big_n(), model.dim)?;
    let n = l.n();
    let lift_arg = |f: crate::zoo::PairFn| -> ParamFn {
        let l = l.clone();
        let dim = model.dim;
        Arc::new(move |x, u| {
            let mut out = vec![0.0; dim];
            f(x, &l.apply_adjoint(u), &mut out);
            out
        })
    };
    let u0: ParamFn = {
        let m = model.clone();
        Arc::new(move |x, _u| m.eval_u0(x))
    };
    let (r_u0, u0_red) = reduce_check(Kind::Complete, "U0 completely reduces", u0, 0, l, spec)?;
    let (r_g, g_red) = reduce_check(Kind::Complete, "G completely reduces", lift_arg(model.g.clone()), n, l, spec)?;
    let (r_f, f_red) = reduce_check(Kind::Fiber, "F fiber-reduces", lift_arg(model.f.clone()), n, l, spec)?;
    let parts = vec![r_u0, r_g, r_f];
    let report = CheckReport::combine(format!("pair-reduction({})", model.name), &parts);

    let reduced = report.pass.then(|| {
        FiniteStateModel::new(
            format!("{}~", model.name),
            n,
            move |y, u, out| out.copy_from_slice(&f_red(y, u)),
            move |y, u, out| out.copy_from_slice(&g_red(y, u)),
            move |y, out| out.copy_from_slice(&u0_red(y, &[])),
        )
        .with_strict(model.strict)
    });

    let unprobed = SamplingSpec {
        probes: Vec::new(),
        samples: spec.samples.max(1),
        ..spec.clone()
    };
    let full_monotone = check_pair_monotone(model, &unprobed, false)?;
    let transfer = match (&reduced, full_monotone.pass) {
        (Some(r), true) => Some(check_pair_monotone(r, &unprobed, false)?),
        _ => None,
    };
    Ok(PairReduction {
        report,
        parts,
        reduced,
        full_monotone,
        transfer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::demo_finite_a;

    fn row_sum() -> ReductionMap {
        ReductionMap::from_rows(&[vec![1.0, 1.0]]).unwrap()
    }

    fn spec() -> SamplingSpec {
        SamplingSpec {
            samples: 500,
            ..SamplingSpec::default()
        }
    }

    #[test]
    fn sum_map_completely_reduces_to_identity() {
        let a: MapFn = Arc::new(|x| vec![x[0] + x[1]; 2]);
        let (r, red) = check_complete_reduce(a, &row_sum(), &spec()).unwrap();
        assert!(r.pass, "{r:?}");
        assert!((red(&[3.5])[0] - 3.5).abs() < 1e-14);
    }

    #[test]
    fn identity_is_not_complete_on_row_sum() {
        let probe = SamplingSpec::probes_only(vec![(vec![1.0, 0.0], vec![0.0, 1.0])]);
        let (r, _) = check_complete_reduce(Arc::new(|x| x.to_vec()), &row_sum(), &probe).unwrap();
        assert!(!r.pass);
        let w = r.witness.unwrap();
        assert_eq!(w.label, "fiber");
        assert_eq!(w.points, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let (r, _) = check_complete_reduce(Arc::new(|x| x.to_vec()), &row_sum(), &spec()).unwrap();
        assert!(!r.pass);
    }

    #[test]
    fn zero_map_reduces() {
        let (r, red) = check_complete_reduce(Arc::new(|_x| vec![0.0; 2]), &row_sum(), &spec()).unwrap();
        assert!(r.pass);
        assert_eq!(red(&[1.0]), vec![0.0]);
    }

    #[test]
    fn identity_fiber_reduces_under_any_map() {
        let l = ReductionMap::from_rows(&[vec![1.0, 2.0, 0.0], vec![0.0, 1.0, -1.0]]).unwrap();
        let (r, red) = check_fiber_reduce(Arc::new(|x| x.to_vec()), &l, &spec()).unwrap();
        assert!(r.pass);
        let y = red(&[0.3, -0.7]);
        assert!((y[0] - 0.3).abs() < 1e-12 && (y[1] + 0.7).abs() < 1e-12);
    }

    #[test]
    fn swap_and_square_fiber_reduces() {
        let l = ReductionMap::from_rows(&[vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let a: MapFn = Arc::new(|x| vec![x[1], x[0], x[2] * x[2]]);
        let (r, red) = check_fiber_reduce(a, &l, &spec()).unwrap();
        assert!(r.pass, "{r:?}");
        let y = red(&[1.5, -2.0]);
        assert!((y[0] - 1.5).abs() < 1e-12 && (y[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn square_first_breaks_fibers() {
        let a: MapFn = Arc::new(|x| vec![x[0] * x[0], x[1]]);
        let probe = SamplingSpec::probes_only(vec![(vec![2.0, 0.0], vec![0.0, 2.0])]);
        let (r, _) = check_fiber_reduce(a.clone(), &row_sum(), &probe).unwrap();
        assert!(!r.pass);
        let w = r.witness.unwrap();
        assert_eq!(w.label, "fiber");
        assert_eq!(w.points[0], vec![2.0, 0.0]);
        // LA = 4 vs 2, relative to 1 + |A(2,0)| = 5
        assert!((r.worst_margin + 2.0 / 5.0).abs() < 1e-12);
        assert!(!check_fiber_reduce(a, &row_sum(), &spec()).unwrap().0.pass);
    }

    #[test]
    fn probes_must_share_a_fiber() {
        let probe = SamplingSpec::probes_only(vec![(vec![1.0, 0.0], vec![0.0, 0.0])]);
        assert!(check_fiber_reduce(Arc::new(|x| x.to_vec()), &row_sum(), &probe).is_err());
    }

    #[test]
    fn demo_finite_a_pair_reduces() {
        let out = check_pair_reduction(&demo_finite_a(), &row_sum(), &spec()).unwrap();
        assert!(out.report.pass, "{:?}", out.report);
        let red = out.reduced.unwrap();
        assert!((red.eval_f(&[1.5], &[0.25])[0] - 2.0).abs() < 1e-12);
        assert!((red.eval_g(&[1.5], &[0.25])[0] - 1.5).abs() < 1e-12);
        assert!((red.eval_u0(&[-0.5])[0] + 0.5).abs() < 1e-12);
        assert!(out.full_monotone.pass);
        assert!(out.transfer.unwrap().pass);
    }

    #[test]
    fn fiber_breaking_drift_is_rejected() {
        let base = demo_finite_a();
        let broken = FiniteStateModel::new(
            "broken",
            2,
            move |x, u, out| {
                (base.f)(x, u, out);
                out[0] += x[0] * x[0];
            },
            |x, _u, out| out.fill(x[0] + x[1]),
            |x, out| out.fill(x[0] + x[1]),
        );
        let out = check_pair_reduction(&broken, &row_sum(), &spec()).unwrap();
        assert!(!out.report.pass);
        assert_eq!(out.report.failed, vec!["F fiber-reduces".to_string()]);
        assert!(out.reduced.is_none());
    }

    #[test]
    fn position_drift_reduces_to_position() {
        let m = FiniteStateModel::new(
            "drift-x",
            2,
            |x, _u, out| out.copy_from_slice(x),
            |_x, _u, out| out.fill(0.0),
            |_x, out| out.fill(0.0),
        );
        let out = check_pair_reduction(&m, &row_sum(), &spec()).unwrap();
        assert!(out.report.pass);
        assert!((out.reduced.unwrap().eval_f(&[0.7], &[9.0])[0] - 0.7).abs() < 1e-12);
    }
}
