//! Refinement hyperparameters and their JSON form.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Graph size (number of nodes) from which the automatic solver choice and
/// the Laplacian storage switch to the sparse/iterative path.
pub const LARGE_GRAPH_NODES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverChoice {
    /// Dense below [`LARGE_GRAPH_NODES`], CG otherwise.
    Auto,
    Dense,
    Cg,
}

impl SolverChoice {
    pub fn resolve(self, nodes: usize) -> SolverChoice {
        match self {
            SolverChoice::Auto if nodes < LARGE_GRAPH_NODES => SolverChoice::Dense,
            SolverChoice::Auto => SolverChoice::Cg,
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    /// Sharpness of the sigmoid confidence weights.
    pub alpha: f64,
    /// Weight of the Laplacian smoothness term.
    pub lambda: f64,
    /// Mask threshold applied to the fused refined map.
    pub delta: f64,
    /// Upsampling factor from attention resolution to graph resolution.
    pub gamma: usize,
    /// Percentile of |offset| used as the pruning threshold.
    pub tau_percentile: f64,
    pub solver: SolverChoice,
    pub cg_tol: f64,
    /// `None` means `10 * nodes`.
    pub cg_max_iter: Option<usize>,
    pub ablation_uniform_weights: bool,
    pub ablation_no_symmetrize: bool,
    /// Lower bound on every confidence weight.
    pub lambda_floor: f64,
    /// Drop affinities below 1e-6 of their row maximum when building the Laplacian.
    pub sparsify: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            lambda: 0.1,
            delta: 0.3,
            gamma: 2,
            tau_percentile: 80.0,
            solver: SolverChoice::Auto,
            cg_tol: 1e-8,
            cg_max_iter: None,
            ablation_uniform_weights: false,
            ablation_no_symmetrize: false,
            lambda_floor: 1e-8,
            sparsify: false,
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "alpha",
    "lambda",
    "delta",
    "gamma",
    "tau_percentile",
    "solver",
    "cg_tol",
    "cg_max_iter",
    "ablation_uniform_weights",
    "ablation_no_symmetrize",
    "lambda_floor",
    "sparsify",
];

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::validation("alpha", "must be > 0"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::validation("lambda", "must be ≥ 0"));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::validation("delta", "must be in [0, 1]"));
        }
        if self.gamma < 1 {
            return Err(Error::validation("gamma", "must be ≥ 1"));
        }
        if !(0.0..=100.0).contains(&self.tau_percentile) {
            return Err(Error::validation("tau_percentile", "must be in [0, 100]"));
        }
        if !(self.cg_tol.is_finite() && self.cg_tol > 0.0) {
            return Err(Error::validation("cg_tol", "must be > 0"));
        }
        if self.cg_max_iter == Some(0) {
            return Err(Error::validation("cg_max_iter", "must be ≥ 1"));
        }
        if !(self.lambda_floor > 0.0 && self.lambda_floor <= 1.0) {
            return Err(Error::validation("lambda_floor", "must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn cg_max_iter_for(&self, nodes: usize) -> usize {
        self.cg_max_iter.unwrap_or(10 * nodes).max(1)
    }

    /// Parses a flat JSON object. Missing keys take defaults, unknown keys are
    /// logged and ignored.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::validation("<document>", format!("is not valid JSON: {e}")))?;
        let Value::Object(map) = value else {
            return Err(Error::validation("<document>", "must be a JSON object"));
        };
        Self::from_json_map(&map)
    }

    pub fn from_json_map(map: &Map<String, Value>) -> Result<Self> {
        let mut cfg = RefineConfig::default();
        for (key, value) in map {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                log::warn!("ignoring unknown config key '{key}'");
                continue;
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &Value) -> Result<()> {
        let real = |v: &Value| {
            v.as_f64()
                .ok_or_else(|| Error::validation(key, "must be a number"))
        };
        let count = |v: &Value| {
            v.as_u64()
                .map(|n| n as usize)
                .ok_or_else(|| Error::validation(key, "must be a non-negative integer"))
        };
        let flag = |v: &Value| {
            v.as_bool()
                .ok_or_else(|| Error::validation(key, "must be true or false"))
        };
        match key {
            "alpha" => self.alpha = real(value)?,
            "lambda" => self.lambda = real(value)?,
            "delta" => self.delta = real(value)?,
            "gamma" => self.gamma = count(value)?,
            "tau_percentile" => self.tau_percentile = real(value)?,
            "solver" => {
                self.solver = match value.as_str() {
                    Some("auto") => SolverChoice::Auto,
                    Some("dense") => SolverChoice::Dense,
                    Some("cg") => SolverChoice::Cg,
                    _ => return Err(Error::validation(key, "must be \"dense\", \"cg\" or \"auto\"")),
                }
            }
            "cg_tol" => self.cg_tol = real(value)?,
            "cg_max_iter" => {
                self.cg_max_iter = if value.is_null() { None } else { Some(count(value)?) }
            }
            "ablation_uniform_weights" => self.ablation_uniform_weights = flag(value)?,
            "ablation_no_symmetrize" => self.ablation_no_symmetrize = flag(value)?,
            "lambda_floor" => self.lambda_floor = real(value)?,
            "sparsify" => self.sparsify = flag(value)?,
            _ => unreachable!("filtered by KNOWN_KEYS"),
        }
        Ok(())
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RefineConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RefineConfig::from_json_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_document_fills_defaults() {
        let cfg =
            RefineConfig::from_json_str(r#"{"alpha":1.0,"lambda":0.1,"delta":0.3,"gamma":2}"#)
                .unwrap();
        assert_eq!(cfg, RefineConfig::default());
        let cfg = RefineConfig::from_json_str(r#"{"alpha":4,"gamma":3}"#).unwrap();
        assert_eq!(cfg.alpha, 4.0);
        assert_eq!(cfg.gamma, 3);
        assert_eq!(cfg.lambda, 0.1);
    }

    #[test]
    fn empty_document_is_default() {
        let cfg = RefineConfig::from_json_str("{}").unwrap();
        assert_eq!(cfg, RefineConfig::default());
        assert_eq!(cfg.tau_percentile, 80.0);
        assert_eq!(cfg.cg_tol, 1e-8);
        assert_eq!(cfg.lambda_floor, 1e-8);
        assert_eq!(cfg.cg_max_iter_for(64), 640);
        assert_eq!(cfg.solver.resolve(4095), SolverChoice::Dense);
        assert_eq!(cfg.solver.resolve(4096), SolverChoice::Cg);
    }

    #[test]
    fn negative_lambda_names_field() {
        let err = RefineConfig::from_json_str(r#"{"lambda":-1}"#).unwrap_err();
        assert!(matches!(&err, Error::Validation { field, .. } if field == "lambda"));
        assert_eq!(err.to_string(), "invalid config: lambda must be ≥ 0");
    }

    #[test]
    fn every_range_is_enforced() {
        let bad = [
            r#"{"alpha":0}"#,
            r#"{"alpha":-2}"#,
            r#"{"delta":1.5}"#,
            r#"{"delta":-0.1}"#,
            r#"{"gamma":0}"#,
            r#"{"gamma":1.5}"#,
            r#"{"tau_percentile":101}"#,
            r#"{"tau_percentile":-1}"#,
            r#"{"solver":"lu"}"#,
            r#"{"cg_tol":0}"#,
            r#"{"cg_max_iter":0}"#,
            r#"{"lambda_floor":0}"#,
            r#"{"lambda_floor":2}"#,
            r#"{"ablation_uniform_weights":"yes"}"#,
            r#"{"alpha":"big"}"#,
        ];
        for doc in bad {
            let err = RefineConfig::from_json_str(doc).unwrap_err();
            let key = doc.split('"').nth(1).unwrap();
            assert!(
                matches!(&err, Error::Validation { field, .. } if field == key),
                "{doc}: {err}"
            );
        }
    }

    #[test]
    fn unknown_keys_are_tolerated() {
        let cfg = RefineConfig::from_json_str(r#"{"pipeline":"sd15","lambda":2}"#).unwrap();
        assert_eq!(cfg.lambda, 2.0);
    }

    #[test]
    fn non_object_rejected() {
        assert!(RefineConfig::from_json_str("[1,2]").is_err());
        assert!(RefineConfig::from_json_str("{").is_err());
    }

    #[test]
    fn serializes_with_field_names() {
        let v = serde_json::to_value(RefineConfig::default()).unwrap();
        let obj = v.as_object().unwrap();
        for key in KNOWN_KEYS {
            assert!(obj.contains_key(*key), "{key}");
        }
        let back = RefineConfig::from_json_map(obj).unwrap();
        assert_eq!(back, RefineConfig::default());
    }
}
