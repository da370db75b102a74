//! Time integration, root finding and forward-backward shooting.

mod integrate;
mod nonlinear;
mod shooting;

pub use integrate::{fmt_f64, integrate, IntegratorSpec, Record, Scheme, Trajectory, TrajectoryBundle};
pub use nonlinear::{newton_invert, solve_root, Fallback, NewtonSpec, RootReport};
pub use shooting::{shoot_forward_backward, FbProblem, ShootDirection, ShootReport, ShootingSpec};

pub(crate) use nonlinear::FD_STEP;
