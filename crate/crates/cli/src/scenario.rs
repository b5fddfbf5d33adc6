//! Scenario files and command-line overrides.

use std::path::{Path, PathBuf};

use prelog_core::info_metrics::Frontend;
use prelog_core::BlockSpec;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub spec: BlockSpec,
    #[serde(default)]
    pub rho_grid_db: Vec<f64>,
    #[serde(default)]
    pub validate: ValidateOptions,
    #[serde(default)]
    pub jacobian_mc: JacobianMcOptions,
    #[serde(default)]
    pub identify: IdentifyOptions,
    #[serde(default)]
    pub mi_sweep: MiSweepOptions,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateOptions {
    pub draws: usize,
    pub tol: f64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self { draws: 100, tol: 1e-8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JacobianMcOptions {
    pub trials: usize,
    pub witness_draws: usize,
    pub log_det_batches: usize,
}

impl Default for JacobianMcOptions {
    fn default() -> Self {
        Self { trials: 10_000, witness_draws: 100, log_det_batches: 10 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentifyOptions {
    /// `None` runs noiseless at unit SNR.
    pub rho_db: Option<f64>,
    pub n_blocks: usize,
    pub n_starts: usize,
    /// Adds a start at the true parameters (diagnostic runs only).
    pub truth_seeded: bool,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        Self { rho_db: None, n_blocks: 20, n_starts: 20, truth_seeded: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepEstimator {
    DirectMixture,
    BoundChain,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiSweepOptions {
    pub estimator: SweepEstimator,
    pub frontends: Vec<Frontend>,
    pub n_outer: usize,
    pub n_inner: usize,
    /// Samples for the bound chain.
    pub n_samples: usize,
    pub knn_k: usize,
}

impl Default for MiSweepOptions {
    fn default() -> Self {
        Self {
            estimator: SweepEstimator::DirectMixture,
            frontends: vec![Frontend::SymbolRate, Frontend::Oversampled],
            n_outer: 128,
            n_inner: 10_000,
            n_samples: 100_000,
            knn_k: 4,
        }
    }
}

/// Sets `path` (dot separated) inside `root`, creating objects on the way.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("invalid override path `{path}`")));
    }
    for (i, part) in parts.iter().enumerate() {
        let obj = match cur {
            Value::Object(map) => map,
            Value::Null => {
                *cur = Value::Object(Default::default());
                cur.as_object_mut().expect("just created")
            }
            _ => {
                return Err(CliError::Config(format!(
                    "cannot set `{path}`: `{}` is not an object",
                    parts[..i].join(".")
                )))
            }
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("path has at least one part")
}

/// `path=value`, with `value` read as JSON when it parses and as a string
/// otherwise.
pub fn parse_assignment(s: &str) -> Result<(String, Value), CliError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{s}` is not of the form path=value")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

pub fn read_config(path: Option<&Path>) -> Result<(String, Value), CliError> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            let value = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            Ok((text, value))
        }
        None => Ok(("{}".into(), Value::Object(Default::default()))),
    }
}

/// Deserializes the scenario; parses the original text when no override
/// was applied so diagnostics keep line and column.
pub fn build_scenario(text: &str, value: &Value, overridden: bool) -> Result<Scenario, CliError> {
    let parsed = if overridden {
        serde_json::from_value(value.clone())
    } else {
        serde_json::from_str(text)
    };
    parsed.map_err(|e| CliError::Config(format!("invalid scenario: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overrides_create_nested_objects() {
        let mut v = json!({"seed": 1});
        set_path(&mut v, "spec.n", json!(8)).unwrap();
        set_path(&mut v, "mi_sweep.n_outer", json!(4)).unwrap();
        assert_eq!(v, json!({"seed": 1, "spec": {"n": 8}, "mi_sweep": {"n_outer": 4}}));
        assert!(set_path(&mut v, "seed.x", json!(1)).is_err());
        assert!(set_path(&mut v, "a..b", json!(1)).is_err());
    }

    #[test]
    fn assignments() {
        assert_eq!(parse_assignment("a.b=3").unwrap(), ("a.b".into(), json!(3)));
        assert_eq!(parse_assignment("f=[\"oversampled\"]").unwrap().1, json!(["oversampled"]));
        assert_eq!(parse_assignment("name=abc").unwrap().1, json!("abc"));
        assert!(parse_assignment("novalue").is_err());
    }

    #[test]
    fn missing_field_is_named() {
        let text = r#"{"seed": 1, "spec": {"t_s": 0.001, "n": 8}}"#;
        let v: Value = serde_json::from_str(text).unwrap();
        let err = build_scenario(text, &v, false).unwrap_err().to_string();
        assert!(err.contains("nu_max"), "{err}");
        let err = build_scenario(text, &v, true).unwrap_err().to_string();
        assert!(err.contains("nu_max"), "{err}");
    }

    #[test]
    fn seed_is_mandatory() {
        let text = r#"{"spec": {"t_s": 0.001, "n": 8, "nu_max": 100}}"#;
        let v: Value = serde_json::from_str(text).unwrap();
        assert!(build_scenario(text, &v, false).unwrap_err().to_string().contains("seed"));
    }
}
