use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use super::{worst_of, CheckReport, SamplingSpec, Witness};
use crate::error::{check_finite, Error, Result};
use crate::math::{norm, sub};
use crate::zoo::ControlsModel;

/// Step in the scaling parameter `s` of `Phi((1 + s) p)`.
const SCALE_STEP: f64 = 1e-3;

/// `D Phi(p) . p` as the derivative of `s -> Phi((1 + s) p)` at `0`
/// (five-point stencil).
fn euler_derivative(phi: &(dyn Fn(&[f64]) -> Vec<f64> + Sync), p: &[f64]) -> Vec<f64> {
    let h = SCALE_STEP;
    let at = |s: f64| phi(&p.iter().map(|v| v * (1.0 + s)).collect::<Vec<_>>());
    let (a, b, c, d) = (at(-2.0 * h), at(-h), at(h), at(2.0 * h));
    (0..a.len())
        .map(|i| (a[i] - 8.0 * b[i] + 8.0 * c[i] - d[i]) / (12.0 * h))
        .collect()
}

/// Fitted or supplied matrix `A` with `D Phi(p) . p = A Phi(p)`.
#[derive(Debug, Clone, Serialize)]
pub struct HomogeneityFit {
    pub report: CheckReport,
    /// Row-major `m x m`; `None` when the fit was rank deficient.
    pub matrix: Option<Vec<f64>>,
}

/// Checks `D Phi(p) . p = A Phi(p)` on sampled `p`. Without a candidate,
/// `A` is fitted by least squares first; a rank-deficient fit is reported
/// as indeterminate. Margins are relative to `1 + |D Phi(p) . p|`.
pub fn check_phi_homogeneity(
    phi: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    dim_in: usize,
    candidate: Option<&[f64]>,
    spec: &SamplingSpec,
) -> Result<HomogeneityFit> {
    spec.validate()?;
    if spec.samples == 0 {
        return Err(Error::Input("homogeneity check needs random samples".into()));
    }
    let draws = spec.draw(dim_in);
    let ps: Vec<&[f64]> = draws.chunks(dim_in).collect();
    let values: Vec<Vec<f64>> = ps.iter().map(|p| phi(p)).collect();
    let m = values[0].len();
    let euler: Vec<Vec<f64>> = ps.iter().map(|p| euler_derivative(phi, p)).collect();
    for ((p, v), e) in ps.iter().zip(&values).zip(&euler) {
        check_finite("Phi", p, v)?;
        check_finite("D Phi . p", p, e)?;
    }
    let name = "phi-homogeneity";
    let matrix = match candidate {
        Some(a) => {
            if a.len() != m * m {
                return Err(Error::Dimension {
                    expected: m * m,
                    got: a.len(),
                });
            }
            a.to_vec()
        }
        None => {
            let s = ps.len();
            let design = DMatrix::from_fn(s, m, |i, j| values[i][j]);
            let target = DMatrix::from_fn(s, m, |i, j| euler[i][j]);
            let svd = design.svd(true, true);
            let smax = svd.singular_values.max();
            let smin = svd.singular_values.min();
            if !(smin > 1e-10 * smax) {
                let mut report = CheckReport::from_margin(name, f64::NAN, None, s, spec.seed, spec.tol);
                report.pass = false;
                report.indeterminate = true;
                report.failed = vec!["rank-deficient fit".into()];
                return Ok(HomogeneityFit { report, matrix: None });
            }
            let at = svd.solve(&target, 0.0).map_err(|e| Error::Input(e.to_string()))?;
            // Solved for A^T; store A row-major.
            (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| at[(j, i)]).collect()
        }
    };
    let apply = |v: &[f64]| -> Vec<f64> { (0..m).map(|i| (0..m).map(|j| matrix[i * m + j] * v[j]).sum()).collect() };
    let (worst, at) = worst_of(ps.len(), |i| {
        let r = norm(&sub(&euler[i], &apply(&values[i])));
        Ok(-r / (1.0 + norm(&euler[i])))
    })?;
    let witness = Some(Witness::new("p", vec![ps[at].to_vec()]));
    Ok(HomogeneityFit {
        report: CheckReport::from_margin(name, worst, witness, ps.len(), spec.seed, spec.tol),
        matrix: Some(matrix),
    })
}

/// Worst `|d_t Phi - D_pH D_xPhi + D_xH D_pPhi + A Phi + B|` over sampled
/// `(t, x, p, phi)` with `t in [0, 1]`, `x, p` in the box and `phi` in
/// `[0, half_width]^m`.
pub fn check_control_reduction(model: &ControlsModel, spec: &SamplingSpec) -> Result<CheckReport> {
    spec.validate()?;
    let sys = model.system.as_ref();
    let m = sys.phi_dim();
    let r = spec.half_width;
    let mut rng = spec.rng();
    let samples: Vec<Vec<f64>> = (0..spec.samples)
        .map(|_| {
            let mut s = vec![rng.random_range(0.0..=1.0), rng.random_range(-r..=r), rng.random_range(-r..=r)];
            s.extend((0..m).map(|_| rng.random_range(0.0..=r)));
            s
        })
        .collect();
    let residual = |s: &[f64]| -> Result<f64> {
        let (t, x, p, phi) = (s[0], s[1], s[2], &s[3..]);
        let a = sys.coef_a(t, phi);
        let b = sys.coef_b(t, phi);
        let f = sys.feature(t, x, p);
        let dt = sys.dt_feature(t, x, p);
        let dx = sys.dx_feature(t, x, p);
        let dp = sys.dp_feature(t, x, p);
        let hp = sys.dp_h(x, p, phi);
        let hx = sys.dx_h(x, p, phi);
        let res: Vec<f64> = (0..m)
            .map(|i| dt[i] - hp * dx[i] + hx * dp[i] + (0..m).map(|j| a[i * m + j] * f[j]).sum::<f64>() + b[i])
            .collect();
        check_finite("control reduction residual", s, &res)?;
        Ok(-norm(&res))
    };
    let (worst, at) = worst_of(samples.len(), |i| residual(&samples[i]))?;
    let witness = samples.get(at).map(|s| Witness::new("(t, x, p, phi)", vec![s.clone()]));
    Ok(CheckReport::from_margin(
        format!("control-reduction({})", sys.name()),
        worst,
        witness,
        samples.len(),
        spec.seed,
        spec.tol,
    ))
}
