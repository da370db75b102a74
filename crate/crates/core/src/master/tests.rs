use super::*;
use crate::ode::ShootDirection;
use crate::zoo::{demo_power, demo_quadratic, PowerMasterModel, ScalarFn};

fn spec() -> IntegratorSpec {
    IntegratorSpec::default()
}

fn kinetic(g: ScalarFn) -> PowerMasterModel {
    PowerMasterModel {
        name: "kinetic".into(),
        q: 2.0,
        a: ScalarFn::constant(1.0),
        b: ScalarFn::constant(0.0),
        c: ScalarFn::constant(0.0),
        g,
    }
}

#[test]
fn zero_seed_is_a_fixed_fiber() {
    let m = kinetic(ScalarFn::affine(1.0, 1.0));
    let sol = solve_reduced_master(&m, &[vec![0.0]], 1.0, &spec()).unwrap();
    for t in [0.0, 0.4, 1.0] {
        assert_eq!(sol.z_at(0, t), vec![0.0]);
        let exact = 1.0 / (1.0 + 0.5 * (1.0 - t));
        assert!((sol.u_at(0, t)[0] - exact).abs() < 1e-12);
    }
    assert_eq!(sol.boundary.len(), 1);
    let f = &sol.boundary[0].f;
    assert_eq!(f.final_state(), &[1.0]);
    assert!((f.initial_state()[0] - 1.0 / 1.5).abs() < 1e-12);

    let zero = kinetic(ScalarFn::affine(0.0, 1.0));
    let sol = solve_reduced_master(&zero, &[vec![0.0]], 1.0, &spec()).unwrap();
    assert_eq!(sol.u_at(0, 0.0), vec![0.0]);
}

#[test]
fn riccati_along_characteristics() {
    let m = kinetic(ScalarFn::affine(0.0, 1.0));
    let seeds: Vec<Vec<f64>> = (0..5).map(|k| vec![0.5 * k as f64]).collect();
    let sol = solve_reduced_master(&m, &seeds, 1.0, &spec()).unwrap();
    for (i, s) in seeds.iter().enumerate() {
        assert_eq!(sol.u_at(i, 1.0), vec![s[0]]);
        for t in [0.0, 0.5] {
            let exact = s[0] / (1.0 + 0.5 * s[0] * (1.0 - t));
            assert!((sol.u_at(i, t)[0] - exact).abs() < 1e-11);
        }
    }
    assert!(sol.monotonicity_modulus(0.0) > 0.0);
}

#[test]
fn evaluator_inverts_the_flow() {
    let m = demo_power();
    let seeds = vec![vec![0.5], vec![2.0]];
    let sol = solve_reduced_master(&m, &seeds, 1.0, &spec()).unwrap();
    let newton = NewtonSpec::default();
    for i in 0..2 {
        let t = 0.3;
        let z = sol.z_at(i, t);
        let u = eval_reduced_u(&m, t, &z, 1.0, &spec(), &newton).unwrap();
        assert!((u[0] - sol.u_at(i, t)[0]).abs() < 1e-9);
    }
    assert_eq!(eval_reduced_u(&m, 1.0, &[3.0], 1.0, &spec(), &newton).unwrap(), vec![3.0]);
}

#[test]
fn seeds_outside_the_set_are_rejected() {
    assert!(matches!(
        solve_reduced_master(&demo_power(), &[vec![-1.0]], 1.0, &spec()),
        Err(Error::Geometry(_))
    ));
}

#[test]
fn boundary_seeds_stay_on_the_boundary() {
    let r = boundary_invariance_check(&demo_power(), &[vec![0.0], vec![1.0]], 1.0, &spec(), 1e-10).unwrap();
    assert!(r.pass);
    assert_eq!(r.samples, 1);
    let seeds: Vec<Vec<f64>> = [-1.0, -0.5, 0.0, 0.5, 1.0]
        .iter()
        .map(|z1: &f64| vec![1.0, *z1, 0.5 * z1 * z1])
        .collect();
    let r = boundary_invariance_check(&demo_quadratic(), &seeds, 1.0, &spec(), 1e-8).unwrap();
    assert!(r.pass, "{r:?}");
    let vacuous = boundary_invariance_check(&demo_quadratic(), &[vec![1.0, 0.0, 1.0]], 1.0, &spec(), 1e-8).unwrap();
    assert_eq!(vacuous.samples, 0);
}

#[test]
fn reconstruction_sees_only_moments() {
    let m = demo_power();
    let u = |t: f64, z: &[f64]| eval_reduced_u(&m, t, z, 1.0, &spec(), &NewtonSpec::default());
    let cloud = ParticleCloud::from_1d(vec![-1.0, 0.5, 2.0]).unwrap();
    let z = moments(&cloud, &m.feature()).unwrap();
    let at_t = reconstruct_master_value(&m, &u, 1.0, &[1.5], &cloud).unwrap();
    assert!((at_t - 1.125 * m.g.eval(z[0])).abs() < 1e-12);
    let dirac = ParticleCloud::dirac(&[0.0]).unwrap();
    let v = reconstruct_master_value(&m, &u, 0.5, &[2.0], &dirac).unwrap();
    assert!((v - 2.0 * u(0.5, &[0.0]).unwrap()[0]).abs() < 1e-12);
    let a = ParticleCloud::from_1d(vec![-1.0, 1.0]).unwrap();
    let b = ParticleCloud::from_1d(vec![1.0, 1.0]).unwrap();
    let va = reconstruct_master_value(&m, &u, 0.5, &[0.7], &a).unwrap();
    let vb = reconstruct_master_value(&m, &u, 0.5, &[0.7], &b).unwrap();
    assert_eq!(va, vb);
}

fn shooting(guess: f64) -> ShootingSpec {
    ShootingSpec::new(vec![guess], ShootDirection::Backward)
}

#[test]
fn fb_from_zero_mass() {
    let sol = solve_fb_reduced(&demo_power(), &[0.0], 1.0, &shooting(0.0)).unwrap();
    assert!(sol.converged());
    for t in [0.0, 0.5, 1.0] {
        assert_eq!(sol.z(t), vec![0.0]);
        assert!(sol.psi(t)[0].abs() < 1e-12);
    }
}

#[test]
fn fb_with_constant_terminal_is_decoupled() {
    let m = kinetic(ScalarFn::constant(2.0));
    let sol = solve_fb_reduced(&m, &[1.0], 1.0, &shooting(1.0)).unwrap();
    assert!(sol.converged());
    assert!(sol.shoot.iterations <= 1);
    assert!((sol.psi(0.0)[0] - 2.0 / 2.0).abs() < 1e-10);
}

#[test]
fn fb_demo_power_converges_and_refines() {
    let coarse = solve_fb_reduced(&demo_power(), &[1.0], 1.0, &shooting(1.0)).unwrap();
    assert!(coarse.converged());
    assert!(coarse.shoot.initial_residual <= 1e-10);
    let mut fine_spec = shooting(1.0);
    fine_spec.integrator = IntegratorSpec::rk4(5e-4);
    let fine = solve_fb_reduced(&demo_power(), &[1.0], 1.0, &fine_spec).unwrap();
    assert!((coarse.psi(0.0)[0] - fine.psi(0.0)[0]).abs() < 1e-10);
    assert!((coarse.z(1.0)[0] - fine.z(1.0)[0]).abs() < 1e-10);
}

#[test]
fn transport_closed_forms() {
    let m0 = ParticleCloud::uniform_quantiles(-1.0, 1.0, 50).unwrap();
    let still = transport_particles(&|_t, _y| 0.0, &m0, 1.0, &[1.0], &spec()).unwrap();
    assert_eq!(still[0], m0);
    let times = [0.5, 1.0];
    let out = transport_particles(&|_t, y| -y, &m0, 1.0, &times, &spec()).unwrap();
    let second = |c: &ParticleCloud| c.average(|y| y[0] * y[0]);
    for (c, t) in out.iter().zip(times) {
        assert!((second(c) - second(&m0) * (-2.0 * t).exp()).abs() < 1e-12);
    }
    let out = transport_particles(&|t, y| -y / (2.0 - t), &m0, 1.0, &[1.0], &spec()).unwrap();
    for (a, b) in out[0].raw().iter().zip(m0.raw()) {
        assert!((a - b / 2.0).abs() < 1e-12);
    }
}

#[test]
fn particle_moments_follow_the_reduced_flow() {
    let m = demo_power();
    let sol = solve_fb_reduced(&m, &[1.0 / 6.0], 1.0, &shooting(0.2)).unwrap();
    let m0 = ParticleCloud::uniform_quantiles(0.0, 1.0, 2000).unwrap();
    let times: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
    let c = verify_moment_consistency(&m, &sol, &m0, &times, &spec(), 1e-3).unwrap();
    assert!(c.report.pass, "{:?}", c.report);
    assert!(c.errors[0] < 1e-7);
}
