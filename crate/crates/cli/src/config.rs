//! Scenario configuration: one flat JSON object, unknown keys rejected.
//!
//! Command-line `key=value` pairs are merged into the object before it is
//! parsed, so a scenario file and an ad-hoc invocation share one schema.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use mfred_core::zoo::ScalarFn;

/// Coefficient override. A bare number is a constant; the named forms are
/// `"z"` (alias `"nonconstant"`) and `"exp-decay"` (`e^{-z}`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarSpec {
    Constant(f64),
    Named(String),
    Family(ScalarFamily),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarFamily {
    Affine { intercept: f64, slope: f64 },
    ExpDecay { scale: f64, rate: f64 },
    Tanh { scale: f64 },
}

impl ScalarSpec {
    pub fn build(&self) -> Result<ScalarFn, String> {
        Ok(match self {
            ScalarSpec::Constant(c) => ScalarFn::constant(*c),
            ScalarSpec::Named(name) => match name.as_str() {
                "z" | "nonconstant" => ScalarFn::affine(0.0, 1.0),
                "exp-decay" => ScalarFn::exp_decay(1.0, 1.0),
                other => return Err(format!("unknown coefficient `{other}` (expected z, nonconstant or exp-decay)")),
            },
            ScalarSpec::Family(ScalarFamily::Affine { intercept, slope }) => ScalarFn::affine(*intercept, *slope),
            ScalarSpec::Family(ScalarFamily::ExpDecay { scale, rate }) => ScalarFn::exp_decay(*scale, *rate),
            ScalarSpec::Family(ScalarFamily::Tanh { scale }) => ScalarFn::tanh(*scale),
        })
    }
}

/// Every key a scenario may set. Which ones matter depends on the task;
/// model overrides that do not apply to the chosen family are errors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub task: Option<String>,
    pub model: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,

    // model overrides
    pub q: Option<f64>,
    pub a: Option<ScalarSpec>,
    pub b: Option<ScalarSpec>,
    pub c: Option<ScalarSpec>,
    pub g: Option<ScalarSpec>,
    pub delta: Option<f64>,
    pub lambda: Option<f64>,
    pub horizon: Option<f64>,

    // numerics
    pub dt: Option<f64>,
    pub grid_points: Option<usize>,
    pub half_width: Option<f64>,
    pub times: Option<usize>,
    pub samples: Option<usize>,
    pub pairs: Option<usize>,
    pub particles: Option<usize>,
    pub refinements: Option<usize>,
    /// First step of a refinement ladder when it should not start at `dt`.
    pub refine_from: Option<f64>,
    pub min_order: Option<f64>,
    pub nx: Option<usize>,
    pub radius: Option<f64>,
    pub snapshots: Option<usize>,
    pub nodes: Option<usize>,
    pub eps: Option<Vec<f64>>,
    pub forcing: Option<Vec<f64>>,
    pub tol: Option<f64>,
    pub damping: Option<f64>,
    pub picard_tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub max_updates: Option<usize>,
    pub multistarts: Option<usize>,
    pub seeds: Option<Vec<Vec<f64>>>,
    pub z0: Option<Vec<f64>>,
    pub support: Option<[f64; 2]>,
    pub reduced: Option<bool>,
    pub compare_full: Option<bool>,
}

/// Splits `key=value`; the value is read as JSON when it parses, otherwise
/// as a bare string.
pub fn parse_override(arg: &str) -> Result<(String, Value), String> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got `{arg}`"))?;
    if key.is_empty() {
        return Err(format!("empty key in `{arg}`"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

/// Reads the config file (if any), applies overrides and parses.
pub fn load(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<ScenarioConfig, String> {
    let mut object = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            // Parsing the file on its own first gives line/column diagnostics.
            serde_json::from_str::<ScenarioConfig>(&text).map_err(|e| format!("{}: {e}", p.display()))?;
            match serde_json::from_str::<Value>(&text).map_err(|e| format!("{}: {e}", p.display()))? {
                Value::Object(m) => m,
                _ => return Err(format!("{}: top level must be an object", p.display())),
            }
        }
        None => Map::new(),
    };
    for (k, v) in overrides {
        object.insert(k.clone(), v.clone());
    }
    let cfg: ScenarioConfig = serde_json::from_value(Value::Object(object)).map_err(|e| e.to_string())?;
    cfg.validate()?;
    Ok(cfg)
}

fn positive(name: &str, v: Option<f64>) -> Result<(), String> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(format!("`{name}` must be positive, got {x}")),
        _ => Ok(()),
    }
}

fn nonzero(name: &str, v: Option<usize>) -> Result<(), String> {
    match v {
        Some(0) => Err(format!("`{name}` must be at least 1")),
        _ => Ok(()),
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("dt", self.dt),
            ("refine_from", self.refine_from),
            ("horizon", self.horizon),
            ("half_width", self.half_width),
            ("radius", self.radius),
            ("tol", self.tol),
            ("damping", self.damping),
            ("picard_tol", self.picard_tol),
            ("q", self.q),
            ("delta", self.delta),
        ] {
            positive(name, v)?;
        }
        for (name, v) in [
            ("grid_points", self.grid_points),
            ("times", self.times),
            ("samples", self.samples),
            ("pairs", self.pairs),
            ("particles", self.particles),
            ("nx", self.nx),
            ("snapshots", self.snapshots),
            ("nodes", self.nodes),
            ("max_iter", self.max_iter),
            ("multistarts", self.multistarts),
        ] {
            nonzero(name, v)?;
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(format!("`lambda` must be nonnegative, got {l}"));
            }
        }
        if let Some(d) = self.damping {
            if d > 1.0 {
                return Err(format!("`damping` must lie in (0, 1], got {d}"));
            }
        }
        if let Some(eps) = &self.eps {
            if eps.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
                return Err("`eps` values must lie in (0, 1)".into());
            }
        }
        if let Some(f) = &self.forcing {
            if f.iter().any(|c| !c.is_finite()) {
                return Err("`forcing` magnitudes must be finite".into());
            }
        }
        if let Some([lo, hi]) = self.support {
            if !(lo < hi) {
                return Err(format!("`support` must satisfy lo < hi, got [{lo}, {hi}]"));
            }
        }
        for spec in [&self.a, &self.b, &self.c, &self.g].into_iter().flatten() {
            spec.build()?;
        }
        Ok(())
    }

    /// Model override keys that are set, for applicability checks.
    pub fn model_overrides(&self) -> Vec<&'static str> {
        let mut keys = Vec::new();
        let flags = [
            ("q", self.q.is_some()),
            ("a", self.a.is_some()),
            ("b", self.b.is_some()),
            ("c", self.c.is_some()),
            ("g", self.g.is_some()),
            ("delta", self.delta.is_some()),
            ("lambda", self.lambda.is_some()),
        ];
        for (k, set) in flags {
            if set {
                keys.push(k);
            }
        }
        keys
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_json_or_string() {
        assert_eq!(parse_override("q=3").unwrap(), ("q".into(), Value::from(3)));
        assert_eq!(
            parse_override("b=nonconstant").unwrap(),
            ("b".into(), Value::String("nonconstant".into()))
        );
        assert_eq!(
            parse_override("eps=[0.1,0.2]").unwrap().1,
            serde_json::json!([0.1, 0.2])
        );
        assert!(parse_override("novalue").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = load(None, &[("bogus".into(), Value::from(1))]).unwrap_err();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn scalar_forms() {
        let cfg = load(
            None,
            &[
                ("b".into(), Value::String("nonconstant".into())),
                ("a".into(), serde_json::json!({"exp_decay": {"scale": 1.0, "rate": 2.0}})),
                ("c".into(), Value::from(-1.5)),
            ],
        )
        .unwrap();
        assert_eq!(cfg.b.unwrap().build().unwrap().eval(2.0), 2.0);
        assert!((cfg.a.unwrap().build().unwrap().eval(1.0) - (-2.0f64).exp()).abs() < 1e-15);
        assert_eq!(cfg.c.unwrap().build().unwrap().eval(7.0), -1.5);
        assert!(load(None, &[("g".into(), Value::String("sin".into()))]).is_err());
    }

    #[test]
    fn nonpositive_numbers_are_rejected() {
        assert!(load(None, &[("dt".into(), Value::from(0.0))]).is_err());
        assert!(load(None, &[("samples".into(), Value::from(0))]).is_err());
        assert!(load(None, &[("eps".into(), serde_json::json!([0.5, 1.5]))]).is_err());
    }

    #[test]
    fn file_errors_carry_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        std::fs::write(&p, "{\n  \"model\": \"demo-power\",\n  \"smaples\": 3\n}\n").unwrap();
        let err = load(Some(&p), &[]).unwrap_err();
        assert!(err.contains("smaples") && err.contains("line 3"), "{err}");
        std::fs::write(&p, "{\n  \"model\": \"demo-power\",\n").unwrap();
        let err = load(Some(&p), &[]).unwrap_err();
        assert!(err.contains("line"), "{err}");
    }
}
