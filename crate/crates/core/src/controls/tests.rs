use std::sync::Arc;

use super::*;
use crate::zoo::{
    demo_affine_controls, demo_controls_quad, normal_cloud, pq_model, power_controls, standard_normal_cloud,
    AffineDriftControls, QuadControls, ScalarFn,
};

/// `Phi = p^2` on top of the quadratic game.
struct SquareFeature;

impl ControlsSystem for SquareFeature {
    fn name(&self) -> &str {
        "square-feature"
    }
    fn phi_dim(&self) -> usize {
        1
    }
    fn hamiltonian(&self, x: f64, p: f64, phi: &[f64]) -> f64 {
        QuadControls { b_offset: 0.0 }.hamiltonian(x, p, phi)
    }
    fn dp_h(&self, _x: f64, p: f64, _phi: &[f64]) -> f64 {
        p
    }
    fn dx_h(&self, _x: f64, _p: f64, _phi: &[f64]) -> f64 {
        0.0
    }
    fn terminal_moments(&self, _m: &ParticleCloud) -> Vec<f64> {
        Vec::new()
    }
    fn terminal(&self, x: f64, _mo: &[f64]) -> f64 {
        0.5 * x * x
    }
    fn dx_terminal(&self, x: f64, _mo: &[f64]) -> f64 {
        x
    }
    fn feature(&self, _t: f64, _x: f64, p: f64) -> Vec<f64> {
        vec![p * p]
    }
    fn dt_feature(&self, _t: f64, _x: f64, _p: f64) -> Vec<f64> {
        vec![0.0]
    }
    fn dx_feature(&self, _t: f64, _x: f64, _p: f64) -> Vec<f64> {
        vec![0.0]
    }
    fn dp_feature(&self, _t: f64, _x: f64, p: f64) -> Vec<f64> {
        vec![2.0 * p]
    }
    fn coef_a(&self, _t: f64, _phi: &[f64]) -> Vec<f64> {
        vec![0.0]
    }
    fn coef_b(&self, _t: f64, _phi: &[f64]) -> Vec<f64> {
        vec![0.0]
    }
}

fn cloud(v: &[f64]) -> ParticleCloud {
    ParticleCloud::from_1d(v.to_vec()).unwrap()
}

#[test]
fn g_of_m_examples() {
    let quad = QuadControls { b_offset: 0.0 };
    let m = cloud(&[0.5, 1.5, 4.0]);
    assert!((eval_g_of_m(&quad, 1.0, &m).unwrap()[0] - 2.0).abs() < 1e-15);
    assert_eq!(eval_g_of_m(&quad, 1.0, &cloud(&[0.0])).unwrap(), vec![0.0]);
    assert_eq!(eval_g_of_m(&SquareFeature, 1.0, &cloud(&[-1.0, 1.0])).unwrap(), vec![1.0]);
}

#[test]
fn cubic_interpolation_is_exact_on_cubics() {
    let f = |x: f64| 1.0 - 2.0 * x + 0.5 * x * x - 0.3 * x * x * x;
    let (lo, h) = (-1.0, 0.25);
    let v: Vec<f64> = (0..9).map(|i| f(lo + i as f64 * h)).collect();
    for x in [-1.1, -0.93, 0.0, 0.41, 0.99, 1.07] {
        assert!((interp_cubic(&v, lo, h, x) - f(x)).abs() < 1e-12, "{x}");
    }
}

#[test]
fn mixing_interpolates_quantiles() {
    let a = cloud(&[3.0, 1.0]);
    let b = cloud(&[0.0, 10.0]);
    assert_eq!(mix_quantiles(&a, &b, 0.5).unwrap().raw(), &[0.5, 6.5]);
    assert!(mix_quantiles(&a, &cloud(&[1.0]), 0.5).is_err());
}

fn quad_setup() -> (ControlsModel, ParticleCloud, ControlsGrid) {
    (demo_controls_quad(0.0), standard_normal_cloud(10_000), ControlsGrid::default())
}

#[test]
fn quadratic_game_matches_closed_form() {
    let (model, m0, grid) = quad_setup();
    let t = 1.0;
    let s = apply_t_map(&model, &m0, &m0, t, &grid).unwrap();
    let err = s.sup_error(|tt, x| x * x / (2.0 * (1.0 + t - tt)), 4.0);
    assert!(err < 1e-4, "u error {err}");
    assert!(s.diagnostics.convex());
    assert!(!s.diagnostics.boundary_influenced);
    for (tt, c) in &s.snapshots {
        let scale = (1.0 + t - tt) / (1.0 + t);
        for (y, y0) in c.raw().iter().zip(m0.raw()) {
            assert!((y - y0 * scale).abs() < 1e-8, "t={tt}");
        }
    }
    assert_eq!(s.snapshots.len(), grid.snapshots);
    // m_bar only enters through g and G, both independent of it here
    let other = apply_t_map(&model, &m0, &cloud(&[0.0]), t, &grid).unwrap();
    assert_eq!(other.terminal_cloud, s.terminal_cloud);
}

#[test]
fn quadratic_fixed_point_is_immediate() {
    let (model, m0, grid) = quad_setup();
    let fp = fixed_point_solve(&model, &m0, 1.0, &grid, &PicardSpec::default()).unwrap();
    assert!(fp.converged);
    assert_eq!(fp.updates(), 1, "{:?}", fp.gaps);
    let eq = equivalence_check(&fp.state, 5e-3);
    assert!(eq.pass, "{eq:?}");
    assert!(eq.worst_margin > -1e-12);
    let g = eval_g_of_m(model.system.as_ref(), 1.0, &fp.accepted).unwrap();
    assert_eq!(fp.state.phi.last().unwrap(), &g);

    let half = PicardSpec {
        damping: 0.5,
        ..PicardSpec::default()
    };
    let fp2 = fixed_point_solve(&model, &m0, 1.0, &grid, &half).unwrap();
    assert!(fp2.converged);
    assert_eq!(fp2.state.terminal_cloud, fp.state.terminal_cloud);
}

#[test]
fn zero_drift_keeps_coupling_constant() {
    let sys = AffineDriftControls {
        a: ScalarFn::constant(0.0),
        b: ScalarFn::constant(0.0),
        k: 2.0,
        kappa: 0.3,
    };
    let model = ControlsModel::new(Arc::new(sys), 2.0, 2.0, 3.0).unwrap();
    let grid = ControlsGrid {
        nx: 201,
        dt: 1e-2,
        ..ControlsGrid::default()
    };
    let m0 = normal_cloud(0.5, 1.0, 2000);
    let s = apply_t_map(&model, &m0, &m0, 1.0, &grid).unwrap();
    let last = s.phi.last().unwrap()[0];
    assert!(last > 0.0);
    assert!(s.phi.iter().all(|v| v[0] == last));
}

#[test]
fn affine_game_picard_contracts() {
    let model = demo_affine_controls();
    let m0 = normal_cloud(0.5, 1.0, 10_000);
    let fp = fixed_point_solve(&model, &m0, 1.0, &ControlsGrid::default(), &PicardSpec::default()).unwrap();
    assert!(fp.converged, "{:?}", fp.gaps);
    for w in fp.gaps.windows(2) {
        assert!(w[1] < w[0], "{:?}", fp.gaps);
    }
    let eq = equivalence_check(&fp.state, 5e-3);
    assert!(eq.pass, "{eq:?}");
    assert!(fp.state.diagnostics.convex());
    assert!(fp.state.diagnostics.growth_constant.is_finite());
}

#[test]
fn moving_particles_outside_the_box_is_reported() {
    let (model, _, _) = quad_setup();
    let m0 = cloud(&[0.0, 7.0]);
    let err = apply_t_map(&model, &m0, &m0, 1.0, &ControlsGrid::default()).unwrap_err();
    assert!(matches!(err, Error::BoxTooSmall(_)), "{err}");
}

#[test]
fn riccati_closed_form() {
    let model = power_controls("t", ScalarFn::constant(0.0), ScalarFn::constant(1.0), None);
    let sol = solve_reduced_controls(&model, &default_shooting(&model)).unwrap();
    assert!(sol.converged());
    assert!(sol.shoot.terminal_residual <= 1e-10);
    let (z0, alpha0) = (model.z0(), model.alpha0());
    for i in 0..sol.times().len() {
        let t = sol.times()[i];
        let s = sol.state(i);
        assert!((s[0] - 1.0 / (1.0 + 0.5 * (1.0 - t))).abs() < 1e-8, "t={t}");
        assert!((s[1] - z0 * ((3.0 - t) / 3.0).powi(2)).abs() < 1e-8);
        assert!((s[2] - alpha0 * 4.0 / 9.0).abs() < 1e-8);
    }
    let band = sol.band.unwrap();
    assert_eq!(sol.band_holds, Some(true), "{band:?}");
    assert!(band.lower > 0.0 && band.lower < band.upper);
}

#[test]
fn zero_terminal_gives_zero_value() {
    let model = power_controls("t", ScalarFn::constant(0.0), ScalarFn::constant(0.0), None);
    let sol = solve_reduced_controls(&model, &default_shooting(&model)).unwrap();
    assert!(sol.converged());
    for i in 0..sol.times().len() {
        let s = sol.state(i);
        assert!(s[0].abs() < 1e-12 && s[2].abs() < 1e-12);
        assert!((s[1] - model.z0()).abs() < 1e-12);
    }
    assert!(sol.band.is_none());
}

#[test]
fn non_monotone_g_is_refused() {
    let model = power_controls("t", ScalarFn::constant(0.0), ScalarFn::exp_decay(1.0, 1.0), None);
    assert!(matches!(
        solve_reduced_controls(&model, &default_shooting(&model)),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn matrix_entries_follow_the_partials() {
    let model = pq_model("t", 0.05);
    let (psi, z) = (0.7, 0.4);
    let m = pq_matrix(&model, psi, z);
    let a = |s: f64| model.a.eval(s);
    let da = model.a.deriv(z * psi * psi);
    // off-diagonal collapses to -(p-1) z psi^p a' / 2 at p = 2
    assert!((m.m12 + 0.5 * z * psi * psi * da).abs() < 1e-14);
    let big_a = |psi: f64, z: f64| psi * psi / 2.0 - a(z * psi * psi) * psi;
    let big_b = |psi: f64, z: f64| psi - a(z * psi * psi);
    let h = 1e-6;
    let a_z = (big_a(psi, z + h) - big_a(psi, z - h)) / (2.0 * h);
    let b_psi = (big_b(psi + h, z) - big_b(psi - h, z)) / (2.0 * h);
    assert!((m.m22 - a_z).abs() < 1e-8);
    assert!((m.m11 + z * b_psi).abs() < 1e-8);
    let det = da * z * psi.powi(3) * (1.0 - 2.25 * z * psi * da);
    assert!((m.det - det).abs() < 1e-12);
}

#[test]
fn small_delta_is_unique_consistent() {
    let model = pq_model("demo-pq-small", 0.05);
    let band = a_priori_band(&model).unwrap();
    let study = solve_pq(&model, &multistart_guesses(&band, 5), &default_shooting(&model)).unwrap();
    assert_eq!(study.verdict, PqVerdict::UniqueConsistent, "{:?}", study.reasons);
    assert!(study.max_pairwise <= 1e-6);
    assert!(study.dissipative);
    assert_eq!(study.delta_within_threshold, Some(true));
    for r in &study.runs {
        assert!(r.identity_defect <= 1e-10, "{}", r.identity_defect);
    }
}

#[test]
fn large_delta_withholds_the_verdict() {
    let model = pq_model("demo-pq-large", 1.0);
    let guesses = match a_priori_band(&model) {
        Ok(b) => multistart_guesses(&b, 5),
        Err(_) => vec![0.3, 0.5, 0.7, 0.9, 1.1],
    };
    let study = solve_pq(&model, &guesses, &default_shooting(&model)).unwrap();
    assert_eq!(study.verdict, PqVerdict::CriterionFails);
    assert!(!study.reasons.is_empty());
}

#[test]
fn reduced_matches_full_fixed_point() {
    let model = power_controls("t", ScalarFn::tanh(0.1), ScalarFn::affine(1.0, 0.2), None);
    let sol = solve_reduced_controls(&model, &default_shooting(&model)).unwrap();
    assert!(sol.converged());
    let full = model.full_model().unwrap();
    let fp = fixed_point_solve(&full, &model.m0, 1.0, &ControlsGrid::default(), &PicardSpec::default()).unwrap();
    assert!(fp.converged, "{:?}", fp.gaps);
    let rep = compare_reduced_full(&model, &sol, &fp.state, 5e-3);
    assert!(rep.pass, "{rep:?}");
}
