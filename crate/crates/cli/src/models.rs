//! Catalog lookup with config overrides applied.

use mfred_core::zoo::{build_demo_models, pq_model, ModelSpec};

use crate::config::ScenarioConfig;
use crate::Failure;

fn not_applicable(key: &str, family: &str) -> Failure {
    Failure::Config(format!("`{key}` does not apply to {family} models"))
}

/// Looks up `name` and applies the model overrides of `cfg`.
pub fn resolve(name: &str, cfg: &ScenarioConfig) -> Result<ModelSpec, Failure> {
    let catalog = build_demo_models();
    let Some(spec) = catalog.lookup(name) else {
        let known: Vec<&str> = catalog.names().collect();
        return Err(Failure::Usage(format!(
            "unknown model `{name}` (known: {})",
            known.join(", ")
        )));
    };
    let mut spec = spec.clone();
    let family = spec.family();
    let build = |s: &crate::config::ScalarSpec| s.build().map_err(Failure::Config);
    match &mut spec {
        ModelSpec::PowerMaster(m) => {
            for key in cfg.model_overrides() {
                match key {
                    "q" => m.q = cfg.q.unwrap_or(m.q),
                    "a" => m.a = build(cfg.a.as_ref().unwrap())?,
                    "b" => m.b = build(cfg.b.as_ref().unwrap())?,
                    "c" => m.c = build(cfg.c.as_ref().unwrap())?,
                    "g" => m.g = build(cfg.g.as_ref().unwrap())?,
                    other => return Err(not_applicable(other, family)),
                }
            }
        }
        ModelSpec::PowerControls(m) => {
            for key in cfg.model_overrides() {
                match key {
                    "delta" => {
                        let horizon = m.horizon;
                        *m = pq_model(&m.name, cfg.delta.unwrap());
                        m.horizon = horizon;
                    }
                    "a" | "g" => {}
                    other => return Err(not_applicable(other, family)),
                }
            }
            // Coefficients after `delta`, which rebuilds the model.
            if let Some(a) = &cfg.a {
                if cfg.delta.is_some() {
                    return Err(Failure::Config("`a` and `delta` both set the drift coefficient".into()));
                }
                m.a = build(a)?;
                m.band = None;
            }
            if let Some(g) = &cfg.g {
                m.g = build(g)?;
            }
            if let Some(t) = cfg.horizon {
                m.horizon = t;
            }
        }
        ModelSpec::Noise(m) => {
            for key in cfg.model_overrides() {
                match key {
                    "lambda" => m.lambda = cfg.lambda.unwrap(),
                    other => return Err(not_applicable(other, family)),
                }
            }
        }
        ModelSpec::Controls { horizon, .. } => {
            if let Some(key) = cfg.model_overrides().first() {
                return Err(not_applicable(key, family));
            }
            if let Some(t) = cfg.horizon {
                *horizon = t;
            }
        }
        ModelSpec::Finite { .. } | ModelSpec::QuadraticMaster(_) => {
            if let Some(key) = cfg.model_overrides().first() {
                return Err(not_applicable(key, family));
            }
        }
    }
    Ok(spec)
}
