//! Experiment configurations.
//!
//! Every field has a default, so an empty JSON object (or no file at all) gives the
//! reference setup. Unknown keys are rejected.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use soc_icnn::inference::InferenceConfig;
use soc_icnn::model::{Architecture, DegeneracySpec, DEFAULT_TAU};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub input_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub quad_modules: usize,
    pub cone_modules: usize,
    pub module_dim: usize,
}

impl ArchConfig {
    pub fn architecture(&self) -> Architecture {
        Architecture::uniform(
            self.input_dim,
            self.width,
            self.depth,
            self.quad_modules,
            self.cone_modules,
            self.module_dim,
        )
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.input_dim == 0 || self.width == 0 || self.depth == 0 || self.module_dim == 0 {
            return Err(CliError::Config(
                "architecture dimensions must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Exp1Config {
    pub seed: u64,
    pub samples: usize,
    pub arch: ArchConfig,
    /// Standard deviation of the Gaussian inputs.
    pub input_scale: f64,
    pub fd_step: f64,
    pub tau: f64,
}

impl Default for Exp1Config {
    fn default() -> Self {
        Exp1Config {
            seed: 0,
            samples: 250,
            arch: ArchConfig {
                input_dim: 20,
                width: 64,
                depth: 4,
                quad_modules: 2,
                cone_modules: 2,
                module_dim: 20,
            },
            input_scale: 1.0,
            fd_step: 1e-6,
            tau: DEFAULT_TAU,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Exp2Config {
    pub seed: u64,
    /// Number of retained points for the formula comparison.
    pub samples: usize,
    /// Cap on candidate draws when filling `samples`.
    pub max_attempts: usize,
    /// Retained points need every ReLU margin and conic norm at least this large, so the
    /// finite-difference stencil stays on one branch.
    pub min_margin: f64,
    pub arch: ArchConfig,
    pub input_scale: f64,
    pub fd_gradient_step: f64,
    pub fd_hessian_step: f64,
    pub radii: Vec<f64>,
    pub perturbations: usize,
    /// Margin required of the quadratic-model anchor.
    pub anchor_margin: f64,
    pub tau: f64,
}

impl Default for Exp2Config {
    fn default() -> Self {
        Exp2Config {
            seed: 0,
            samples: 100,
            max_attempts: 100_000,
            min_margin: 1e-3,
            arch: ArchConfig {
                input_dim: 10,
                width: 32,
                depth: 3,
                quad_modules: 2,
                cone_modules: 2,
                module_dim: 10,
            },
            input_scale: 1.0,
            fd_gradient_step: 1e-6,
            fd_hessian_step: 1e-5,
            radii: vec![1e-4, 3e-4, 1e-3],
            perturbations: 500,
            anchor_margin: 1e-2,
            tau: DEFAULT_TAU,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegeneracyConfig {
    pub layer: usize,
    pub coord: usize,
    pub cone_module: usize,
}

impl Default for DegeneracyConfig {
    fn default() -> Self {
        let s = DegeneracySpec::default();
        DegeneracyConfig {
            layer: s.layer,
            coord: s.coord,
            cone_module: s.cone_module,
        }
    }
}

impl From<DegeneracyConfig> for DegeneracySpec {
    fn from(c: DegeneracyConfig) -> Self {
        DegeneracySpec {
            layer: c.layer,
            coord: c.coord,
            cone_module: c.cone_module,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Exp3Config {
    pub seed: u64,
    pub directions: usize,
    pub branches: usize,
    pub probes: usize,
    pub fd_step: f64,
    /// Standard deviation of the support probes around the degenerate point.
    pub probe_scale: f64,
    /// Conic sphere design size for the directional maximum.
    pub branch_budget: usize,
    pub degeneracy: DegeneracyConfig,
    pub tau: f64,
}

impl Default for Exp3Config {
    fn default() -> Self {
        Exp3Config {
            seed: 0,
            directions: 1000,
            branches: 5000,
            probes: 5000,
            fd_step: 1e-7,
            probe_scale: 1.0,
            branch_budget: 64,
            degeneracy: DegeneracyConfig::default(),
            tau: DEFAULT_TAU,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Exp4Config {
    pub seed: u64,
    pub queries: usize,
    pub arch: ArchConfig,
    pub query_scale: f64,
    pub inference: InferenceConfig,
}

impl Default for Exp4Config {
    fn default() -> Self {
        Exp4Config {
            seed: 0,
            queries: 30,
            arch: ArchConfig {
                input_dim: 10,
                width: 32,
                depth: 3,
                quad_modules: 1,
                cone_modules: 2,
                module_dim: 8,
            },
            query_scale: 1.0,
            inference: InferenceConfig::default(),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

fn nonnegative(name: &str, v: f64) -> Result<(), CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "{name} must be nonnegative, got {v}"
        )))
    }
}

/// Shared by all experiment configs.
pub trait ExperimentConfig: DeserializeOwned + Default {
    fn set_seed(&mut self, seed: u64);
    fn validate(&self) -> Result<(), CliError>;
}

impl ExperimentConfig for Exp1Config {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    fn validate(&self) -> Result<(), CliError> {
        self.arch.validate()?;
        positive("input_scale", self.input_scale)?;
        positive("fd_step", self.fd_step)?;
        nonnegative("tau", self.tau)
    }
}

impl ExperimentConfig for Exp2Config {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    fn validate(&self) -> Result<(), CliError> {
        self.arch.validate()?;
        positive("input_scale", self.input_scale)?;
        positive("fd_gradient_step", self.fd_gradient_step)?;
        positive("fd_hessian_step", self.fd_hessian_step)?;
        nonnegative("min_margin", self.min_margin)?;
        nonnegative("anchor_margin", self.anchor_margin)?;
        nonnegative("tau", self.tau)?;
        for &r in &self.radii {
            positive("radius", r)?;
        }
        Ok(())
    }
}

impl ExperimentConfig for Exp3Config {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    fn validate(&self) -> Result<(), CliError> {
        positive("fd_step", self.fd_step)?;
        positive("probe_scale", self.probe_scale)?;
        nonnegative("tau", self.tau)?;
        let d = self.degeneracy;
        if d.layer > 1 || d.coord > 1 || d.cone_module > 1 {
            return Err(CliError::Config(
                "degeneracy layer, coord and cone_module must each be 0 or 1".into(),
            ));
        }
        Ok(())
    }
}

impl ExperimentConfig for Exp4Config {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    fn validate(&self) -> Result<(), CliError> {
        self.arch.validate()?;
        positive("query_scale", self.query_scale)?;
        self.inference
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))
    }
}

fn from_json_object<T: DeserializeOwned>(text: &str) -> Result<T, CliError> {
    // serde also accepts a positional array for structs; configs must be keyed objects.
    if !text.trim_start().starts_with('{') {
        return Err(CliError::Config("config must be a JSON object".into()));
    }
    serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

/// Parses a config from JSON text.
pub fn parse_config<T: ExperimentConfig>(text: &str) -> Result<T, CliError> {
    let cfg: T = from_json_object(text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads the config file if given, then applies the seed override.
pub fn load_config<T: ExperimentConfig>(
    path: Option<&Path>,
    seed: Option<u64>,
) -> Result<T, CliError> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            from_json_object(&text)?
        }
        None => T::default(),
    };
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        let c: Exp1Config = parse_config("{}").unwrap();
        assert_eq!(c, Exp1Config::default());
        let c: Exp4Config = parse_config("{}").unwrap();
        assert_eq!(c.inference.beta, 10.0);
    }

    #[test]
    fn partial_override() {
        let c: Exp3Config =
            parse_config(r#"{"directions": 5, "degeneracy": {"layer": 1}}"#).unwrap();
        assert_eq!(c.directions, 5);
        assert_eq!(c.degeneracy.layer, 1);
        assert_eq!(c.degeneracy.coord, 1);
        assert_eq!(c.branches, 5000);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(
            parse_config::<Exp1Config>(r#"{"sample": 3}"#),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            parse_config::<Exp2Config>(r#"{"radii": [0.0]}"#),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            parse_config::<Exp4Config>(r#"{"inference": {"beta": -1}}"#),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            parse_config::<Exp3Config>(r#"{"degeneracy": {"layer": 2}}"#),
            Err(CliError::Config(_))
        ));
    }
}
