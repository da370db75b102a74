use std::fmt;
use std::sync::Arc;

type Fun = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Scalar coefficient function with its derivative.
#[derive(Clone)]
pub struct ScalarFn {
    pub label: String,
    f: Fun,
    df: Fun,
}

impl fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarFn({})", self.label)
    }
}

impl ScalarFn {
    pub fn custom(
        label: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            f: Arc::new(f),
            df: Arc::new(df),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::custom(format!("{c}"), move |_| c, |_| 0.0)
    }

    /// `intercept + slope * z`.
    pub fn affine(intercept: f64, slope: f64) -> Self {
        Self::custom(
            format!("{intercept} + {slope} z"),
            move |z| intercept + slope * z,
            move |_| slope,
        )
    }

    /// `scale * exp(-rate * z)`.
    pub fn exp_decay(scale: f64, rate: f64) -> Self {
        Self::custom(
            format!("{scale} exp(-{rate} z)"),
            move |z| scale * (-rate * z).exp(),
            move |z| -rate * scale * (-rate * z).exp(),
        )
    }

    /// `delta * p' * phi^{1/p'}` on `phi >= 0`, for which
    /// `phi^{1/p} a'(phi) = delta`.
    pub fn root_family(delta: f64, p: f64) -> Self {
        let pc = p / (p - 1.0);
        Self::custom(
            format!("{delta} p' phi^(1/p')"),
            move |phi| delta * pc * phi.max(0.0).powf(1.0 / pc),
            move |phi| {
                if phi > 0.0 {
                    delta * phi.powf(-1.0 / p)
                } else {
                    f64::INFINITY
                }
            },
        )
    }

    /// `scale * tanh(z)`.
    pub fn tanh(scale: f64) -> Self {
        Self::custom(
            format!("{scale} tanh(z)"),
            move |z| scale * z.tanh(),
            move |z| scale / z.cosh().powi(2),
        )
    }

    pub fn eval(&self, z: f64) -> f64 {
        (self.f)(z)
    }

    pub fn deriv(&self, z: f64) -> f64 {
        (self.df)(z)
    }
}
