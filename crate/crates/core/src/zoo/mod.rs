//! Parameterized model families and the demo catalog.

mod catalog;
mod controls;
mod finite;
mod master;
mod noise;
mod scalar;

pub use catalog::{
    build_demo_models, demo_affine_controls, demo_controls_quad, demo_finite_a, demo_finite_sym, demo_noise,
    demo_power, demo_quadratic, normal_cloud, power_controls, pq_model, standard_normal_cloud, Catalog, ModelSpec,
    DEMO_PARTICLES,
};
pub use controls::{
    AffineDriftControls, ControlsModel, ControlsSystem, PowerControlsModel, PowerControlsSystem, QuadControls,
};
pub use finite::{fd_jac_u, FiniteStateModel, PairFn, PairJac, ReducedFiniteModel, StrictFlags, VecFn};
pub use master::{PowerMasterModel, QuadraticMasterModel, ReducedHamiltonian, Vec3Fn};
pub use noise::{AffineMap, GridSpec, NoiseModel};
pub use scalar::ScalarFn;
