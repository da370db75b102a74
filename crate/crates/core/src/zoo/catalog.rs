use std::collections::BTreeMap;
use std::sync::Arc;

use statrs::distribution::Normal;

use super::{
    AffineDriftControls, AffineMap, ControlsModel, FiniteStateModel, GridSpec, NoiseModel, PowerControlsModel,
    PowerMasterModel, QuadControls, QuadraticMasterModel, ScalarFn, StrictFlags,
};
use crate::math::{ParticleCloud, ReductionMap};

/// A named model of any family.
#[derive(Debug, Clone)]
pub enum ModelSpec {
    Finite {
        model: FiniteStateModel,
        reduction: Option<ReductionMap>,
    },
    PowerMaster(PowerMasterModel),
    QuadraticMaster(QuadraticMasterModel),
    Controls {
        model: ControlsModel,
        m0: ParticleCloud,
        horizon: f64,
    },
    PowerControls(PowerControlsModel),
    Noise(NoiseModel),
}

impl ModelSpec {
    pub fn family(&self) -> &'static str {
        match self {
            ModelSpec::Finite { .. } => "finite",
            ModelSpec::PowerMaster(_) => "power-master",
            ModelSpec::QuadraticMaster(_) => "quadratic-master",
            ModelSpec::Controls { .. } => "controls",
            ModelSpec::PowerControls(_) => "power-controls",
            ModelSpec::Noise(_) => "noise",
        }
    }

    /// State dimension where meaningful (`N` for finite and noisy models).
    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Finite { model, .. } => model.dim,
            ModelSpec::PowerMaster(_) => 1,
            ModelSpec::QuadraticMaster(_) => 3,
            ModelSpec::Controls { .. } | ModelSpec::PowerControls(_) => 1,
            ModelSpec::Noise(m) => m.core.dim,
        }
    }
}

/// Immutable registry of named models.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    models: BTreeMap<String, ModelSpec>,
}

impl Catalog {
    pub fn insert(&mut self, name: &str, spec: ModelSpec) {
        self.models.insert(name.to_string(), spec);
    }

    pub fn lookup(&self, name: &str) -> Option<&ModelSpec> {
        self.models.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }
}

/// Particle count of the shipped initial measures.
pub const DEMO_PARTICLES: usize = 10_000;

pub fn build_demo_models() -> Catalog {
    let mut c = Catalog::default();
    c.insert(
        "demo-finite-A",
        ModelSpec::Finite {
            model: demo_finite_a(),
            reduction: Some(ReductionMap::from_rows(&[vec![1.0, 1.0]]).expect("row-sum map")),
        },
    );
    c.insert(
        "demo-finite-sym",
        ModelSpec::Finite {
            model: demo_finite_sym(2),
            reduction: None,
        },
    );
    c.insert("demo-power", ModelSpec::PowerMaster(demo_power()));
    c.insert("demo-quadratic", ModelSpec::QuadraticMaster(demo_quadratic()));
    c.insert(
        "demo-controls-quad",
        ModelSpec::Controls {
            model: demo_controls_quad(0.0),
            m0: standard_normal_cloud(DEMO_PARTICLES),
            horizon: 1.0,
        },
    );
    c.insert(
        "demo-affine-controls",
        ModelSpec::Controls {
            model: demo_affine_controls(),
            m0: normal_cloud(0.5, 1.0, DEMO_PARTICLES),
            horizon: 1.0,
        },
    );
    c.insert(
        "demo-power-controls",
        ModelSpec::PowerControls(power_controls(
            "demo-power-controls",
            ScalarFn::tanh(0.1),
            ScalarFn::affine(1.0, 0.2),
            None,
        )),
    );
    c.insert(
        "demo-power-controls-a0",
        ModelSpec::PowerControls(power_controls(
            "demo-power-controls-a0",
            ScalarFn::constant(0.0),
            ScalarFn::constant(1.0),
            None,
        )),
    );
    c.insert("demo-pq-small", ModelSpec::PowerControls(pq_model("demo-pq-small", 0.05)));
    c.insert("demo-pq-large", ModelSpec::PowerControls(pq_model("demo-pq-large", 1.0)));
    c.insert("demo-noise", ModelSpec::Noise(demo_noise(0.5)));
    c
}

/// `N = 2`, `F = ((sum x + sum U)/2)(1,1)`, `G = (sum x)(1,1)`,
/// `U0 = (sum x)(1,1)`.
pub fn demo_finite_a() -> FiniteStateModel {
    FiniteStateModel::new(
        "demo-finite-A",
        2,
        |x, u, out| {
            let s = 0.5 * (x[0] + x[1] + u[0] + u[1]);
            out[0] = s;
            out[1] = s;
        },
        |x, _u, out| {
            let s = x[0] + x[1];
            out[0] = s;
            out[1] = s;
        },
        |x, out| {
            let s = x[0] + x[1];
            out[0] = s;
            out[1] = s;
        },
    )
    .with_jacobians(
        Arc::new(|_x, _u, out: &mut [f64]| out.fill(0.5)),
        Arc::new(|_x, _u, out: &mut [f64]| out.fill(0.0)),
    )
}

/// `F(x, U) = U`, `G(x, U) = x`, `U0 = id`; `U(t, x) = x` is stationary.
pub fn demo_finite_sym(n: usize) -> FiniteStateModel {
    FiniteStateModel::new(
        "demo-finite-sym",
        n,
        |_x, u, out| out.copy_from_slice(u),
        |x, _u, out| out.copy_from_slice(x),
        |x, out| out.copy_from_slice(x),
    )
    .with_jacobians(
        Arc::new(move |_x, _u, out: &mut [f64]| identity_into(out)),
        Arc::new(|_x, _u, out: &mut [f64]| out.fill(0.0)),
    )
    .with_strict(StrictFlags { g: false, f: true })
}

fn identity_into(out: &mut [f64]) {
    let n = (out.len() as f64).sqrt() as usize;
    out.fill(0.0);
    for i in 0..n {
        out[i * n + i] = 1.0;
    }
}

/// `q = 2`, `a = 1`, `b = 0`, `c(z) = -z`, `g(z) = z`.
pub fn demo_power() -> PowerMasterModel {
    PowerMasterModel {
        name: "demo-power".into(),
        q: 2.0,
        a: ScalarFn::constant(1.0),
        b: ScalarFn::constant(0.0),
        c: ScalarFn::affine(0.0, -1.0),
        g: ScalarFn::affine(0.0, 1.0),
    }
}

/// `f(z) = z`, `g(z) = z`.
pub fn demo_quadratic() -> QuadraticMasterModel {
    QuadraticMasterModel::identity("demo-quadratic")
}

/// `H = p^2/2`, `G = x^2/2`, `Phi = p`, `A = 0`, `B = b_offset`.
pub fn demo_controls_quad(b_offset: f64) -> ControlsModel {
    ControlsModel::new(Arc::new(QuadControls { b_offset }), 2.0, 2.0, 3.0).expect("valid exponents")
}

/// Affine drift `a(phi) x` with `a(phi) = 0.2/(1 + phi)`, `Phi = p^2/2`
/// and a weak mean coupling `0.3 x mean(m)` in the terminal cost.
pub fn demo_affine_controls() -> ControlsModel {
    let a = ScalarFn::custom(
        "0.2/(1+phi)",
        |phi| 0.2 / (1.0 + phi.max(0.0)),
        |phi| -0.2 / (1.0 + phi.max(0.0)).powi(2),
    );
    ControlsModel::new(
        Arc::new(AffineDriftControls {
            a,
            b: ScalarFn::constant(0.0),
            k: 2.0,
            kappa: 0.3,
        }),
        2.0,
        2.0,
        3.0,
    )
    .expect("valid exponents")
}

pub fn power_controls(name: &str, a: ScalarFn, g: ScalarFn, band: Option<(f64, f64)>) -> PowerControlsModel {
    PowerControlsModel {
        name: name.into(),
        p: 2.0,
        q: 2.0,
        a,
        g,
        m0: standard_normal_cloud(DEMO_PARTICLES),
        horizon: 1.0,
        band,
    }
}

/// `p = q = 2` with `a(phi) = 2 delta sqrt(phi)`, so `phi^{1/2} a' = delta`,
/// and `g(z) = 0.5 + 0.5 z`.
pub fn pq_model(name: &str, delta: f64) -> PowerControlsModel {
    power_controls(
        name,
        ScalarFn::root_family(delta, 2.0),
        ScalarFn::affine(0.5, 0.5),
        Some((0.5 * delta, delta)),
    )
}

/// `N = 2`, `F(x, U) = U/2`, `G(x, U) = x`, `U0 = x + tanh(x)/4`,
/// rearrangement `0.5 Rot(pi/6)`.
pub fn demo_noise(lambda: f64) -> NoiseModel {
    let core = FiniteStateModel::new(
        "demo-noise",
        2,
        |_x, u, out| {
            out[0] = 0.5 * u[0];
            out[1] = 0.5 * u[1];
        },
        |x, _u, out| out.copy_from_slice(x),
        |x, out| {
            out[0] = x[0] + 0.25 * x[0].tanh();
            out[1] = x[1] + 0.25 * x[1].tanh();
        },
    )
    .with_jacobians(
        Arc::new(|_x, _u, out: &mut [f64]| {
            out.copy_from_slice(&[0.5, 0.0, 0.0, 0.5]);
        }),
        Arc::new(|_x, _u, out: &mut [f64]| out.fill(0.0)),
    )
    .with_strict(StrictFlags { g: true, f: true });
    NoiseModel {
        core,
        rearrangement: AffineMap::rotation_contraction(2, 0.5, std::f64::consts::FRAC_PI_6),
        lambda,
        alpha: 1.0,
        grid: GridSpec::default(),
    }
}

pub fn standard_normal_cloud(m: usize) -> ParticleCloud {
    normal_cloud(0.0, 1.0, m)
}

pub fn normal_cloud(mean: f64, sd: f64, m: usize) -> ParticleCloud {
    let law = Normal::new(mean, sd).expect("valid normal law");
    ParticleCloud::quantiles_of(&law, m).expect("positive particle count")
}
