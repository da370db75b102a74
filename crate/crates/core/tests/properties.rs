use approx::assert_relative_eq;
use proptest::prelude::*;

use mfred_core::finite::{box_grid, solve_characteristics};
use mfred_core::ode::{integrate, IntegratorSpec, Record};
use mfred_core::verify::{check_monotone, SamplingSpec};
use mfred_core::zoo::{demo_finite_a, ScalarFn};
use mfred_core::{moments, wasserstein, FeatureMap, ParticleCloud, ReductionMap};

fn cloud() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, 1..40)
}

fn sampling(seed: u64) -> SamplingSpec {
    SamplingSpec {
        samples: 500,
        seed,
        half_width: 5.0,
        tol: 1e-10,
        probes: Vec::new(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wasserstein_is_a_metric_in_one_dimension(a in cloud(), shift in -3.0..3.0f64, q in 1.0..3.0f64) {
        let m = a.len();
        let ca = ParticleCloud::from_1d(a.clone()).unwrap();
        let cb = ParticleCloud::from_1d(a.iter().map(|x| x + shift).collect()).unwrap();
        let mut rev = a.clone();
        rev.reverse();
        let cr = ParticleCloud::from_1d(rev).unwrap();
        prop_assert!(wasserstein(&ca, &cr, q).unwrap() <= 1e-12);
        // A rigid shift moves every particle by |shift|.
        assert_relative_eq!(wasserstein(&ca, &cb, q).unwrap(), shift.abs(), epsilon = 1e-9, max_relative = 1e-9);
        let cc = ParticleCloud::from_1d((0..m).map(|i| i as f64 * 0.1).collect()).unwrap();
        let (ab, bc, ac) = (
            wasserstein(&ca, &cb, q).unwrap(),
            wasserstein(&cb, &cc, q).unwrap(),
            wasserstein(&ca, &cc, q).unwrap(),
        );
        prop_assert!(ac <= ab + bc + 1e-9);
        assert_relative_eq!(ab, wasserstein(&cb, &ca, q).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn kernel_points_reduce_to_zero(rows in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 4), 1..3),
                                    coords in prop::collection::vec(-5.0..5.0f64, 3)) {
        let Ok(l) = ReductionMap::from_rows(&rows) else { return Ok(()) };
        prop_assume!(l.condition_number() < 1e6);
        let k = l.kernel_point(&coords);
        let lk = l.reduce(&k).unwrap();
        prop_assert!(lk.iter().all(|v| v.abs() <= 1e-9), "{lk:?}");
        // <L x, u> = <x, L* u>
        let x: Vec<f64> = coords.iter().chain(&[1.0]).copied().collect();
        let u: Vec<f64> = (0..l.n()).map(|i| 1.0 + i as f64).collect();
        let lhs: f64 = l.reduce(&x).unwrap().iter().zip(&u).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(l.lift(&u).unwrap()).map(|(a, b)| a * b).sum();
        assert_relative_eq!(lhs, rhs, epsilon = 1e-9, max_relative = 1e-12);
    }

    #[test]
    fn moments_are_averages_of_the_feature(points in cloud(), k in 1.0..4.0f64) {
        let c = ParticleCloud::from_1d(points.clone()).unwrap();
        let z = moments(&c, &FeatureMap::power(k, 1)).unwrap();
        let direct = c.average(|y| FeatureMap::power(k, 1).eval(y)[0]);
        assert_relative_eq!(z[0], direct, epsilon = 1e-12, max_relative = 1e-12);
    }

    #[test]
    fn quantile_clouds_match_the_uniform_mean(a in -5.0..5.0f64, w in 0.1..5.0f64, m in 1usize..500) {
        let c = ParticleCloud::uniform_quantiles(a, a + w, m).unwrap();
        prop_assert_eq!(c.len(), m);
        assert_relative_eq!(c.average(|y| y[0]), a + 0.5 * w, epsilon = 1e-12, max_relative = 1e-12);
        prop_assert!(c.points().all(|y| y[0] > a && y[0] < a + w));
    }

    #[test]
    fn rk4_recovers_linear_growth(rate in -2.0..2.0f64, y0 in -3.0..3.0f64, horizon in 0.1..2.0f64) {
        let traj = integrate(|_t, y, dy| dy[0] = rate * y[0], &[y0], 0.0, horizon, &IntegratorSpec::rk4(1e-3), Record::Steps).unwrap();
        let exact = y0 * (rate * horizon).exp();
        prop_assert!((traj.final_state()[0] - exact).abs() <= 1e-10 * (1.0 + exact.abs()));
        // dense output reproduces recorded states
        for i in (0..traj.len()).step_by(97) {
            prop_assert_eq!(traj.at(traj.times[i])[0], traj.state(i)[0]);
        }
    }

    #[test]
    fn monotone_linear_maps_pass(diag in prop::collection::vec(0.0..3.0f64, 3), skew in -2.0..2.0f64, seed in any::<u64>()) {
        // symmetric part diag >= 0 plus a skew block: monotone
        let map = move |v: &[f64]| vec![
            diag[0] * v[0] + skew * v[1],
            diag[1] * v[1] - skew * v[0],
            diag[2] * v[2],
        ];
        let rep = check_monotone("linear", &map, 3, &sampling(seed), false).unwrap();
        prop_assert!(rep.pass, "{rep:?}");
        let neg = move |v: &[f64]| vec![-v[0], -v[1], -v[2]];
        prop_assert!(!check_monotone("anti", &neg, 3, &sampling(seed), false).unwrap().pass);
    }

    #[test]
    fn scalar_derivatives_match_differences(z in 0.1..8.0f64, s in 0.2..3.0f64) {
        for f in [ScalarFn::affine(0.5, s), ScalarFn::exp_decay(s, 0.7), ScalarFn::tanh(s)] {
            let h = 1e-5;
            let fd = (f.eval(z + h) - f.eval(z - h)) / (2.0 * h);
            prop_assert!((f.deriv(z) - fd).abs() <= 1e-7 * (1.0 + fd.abs()), "{}", f.label);
        }
    }
}

#[test]
fn demo_a_characteristics_keep_fibers_aligned() {
    // x and x + (t, -t) share a fiber of L = [1 1]; their L X(t) agree.
    let seeds: Vec<Vec<f64>> = box_grid(-1.0, 1.0, 3, 2)
        .into_iter()
        .flat_map(|x| [x.clone(), vec![x[0] + 0.7, x[1] - 0.7]])
        .collect();
    let field = solve_characteristics(&demo_finite_a(), &seeds, 1.0, &IntegratorSpec::rk4(1e-2)).unwrap();
    for pair in 0..seeds.len() / 2 {
        for t in [0.25, 0.5, 1.0] {
            let (a, b) = (field.x_at(2 * pair, t), field.x_at(2 * pair + 1, t));
            assert!((a[0] + a[1] - b[0] - b[1]).abs() < 1e-12);
        }
    }
}
