//! TOML experiment configuration: schema, validation, and conversion to the
//! runtime objects the harness consumes.
//!
//! A config declares one scenario, plus three grid axes (topologies, solver
//! cells, noise models); the harness runs their cross product. See
//! `configs/` in the repository for annotated examples.

use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::network::TopologyKind;
use crate::problems::SparseRegressionParams;
use crate::solvers::{Algorithm, NoiseModel, NoiseSource, SolverError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_runs() -> usize {
    100
}
fn default_dim() -> usize {
    8
}
fn default_tol() -> f64 {
    1e-10
}

/// Top-level experiment description.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    #[serde(default = "default_runs")]
    pub monte_carlo_runs: usize,
    #[serde(default)]
    pub out_dir: Option<String>,
    /// Reuse one scenario for every replicate (noise still varies per
    /// replicate). Default regenerates the scenario per replicate.
    #[serde(default)]
    pub shared_scenario: bool,
    pub scenario: ScenarioConfig,
    pub topology: Vec<TopologyConfig>,
    pub solver: Vec<SolverCellConfig>,
    pub noise: Vec<NoiseConfig>,
    #[serde(default)]
    pub oracle: OracleConfig,
}

/// Sparse regression scenario parameters.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub nodes: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Rows of each regression matrix; defaults to `2 * dim`.
    #[serde(default)]
    pub rows_per_node: Option<usize>,
    pub horizon: usize,
    #[serde(default = "ScenarioConfig::default_lambda1")]
    pub lambda1: f64,
    #[serde(default = "ScenarioConfig::default_noise_var")]
    pub measurement_noise_var: f64,
    #[serde(default = "ScenarioConfig::default_cond")]
    pub condition_number: f64,
    #[serde(default = "ScenarioConfig::default_omega")]
    pub omega: f64,
    #[serde(default = "ScenarioConfig::default_ts")]
    pub ts: f64,
    #[serde(default = "ScenarioConfig::default_sigma_max")]
    pub sigma_max: f64,
}

impl ScenarioConfig {
    fn default_lambda1() -> f64 {
        0.01
    }
    fn default_noise_var() -> f64 {
        1e-3
    }
    fn default_cond() -> f64 {
        100.0
    }
    fn default_omega() -> f64 {
        0.5
    }
    fn default_ts() -> f64 {
        0.01
    }
    fn default_sigma_max() -> f64 {
        1.0
    }

    pub fn rows(&self) -> usize {
        self.rows_per_node.unwrap_or(2 * self.dim)
    }

    pub fn params(&self) -> SparseRegressionParams {
        SparseRegressionParams {
            lambda1: self.lambda1,
            measurement_noise_var: self.measurement_noise_var,
            condition_number: self.condition_number,
            omega: self.omega,
            ts: self.ts,
            sigma_max: self.sigma_max,
        }
    }

    /// Aggregate constants of the generated costs, exact by construction.
    pub fn constants(&self) -> (f64, f64, f64) {
        let lf = self.sigma_max * self.sigma_max;
        let smin = self.sigma_max / self.condition_number;
        let mf = smin * smin;
        let lg = self.lambda1 * (self.dim as f64).sqrt();
        (lf, mf, lg)
    }
}

/// One topology grid entry.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    /// `star`, `circle`, `circulant`, `complete`, or `random`.
    pub kind: String,
    /// Circulant neighbourhood radius.
    #[serde(default)]
    pub degree: Option<usize>,
    /// Random graph edge target.
    #[serde(default)]
    pub edges: Option<usize>,
    /// Random graph edge probability (alternative to `edges`).
    #[serde(default)]
    pub probability: Option<f64>,
}

impl TopologyConfig {
    pub fn resolve(&self) -> Result<TopologyKind, ConfigError> {
        match self.kind.as_str() {
            "star" => Ok(TopologyKind::Star),
            "circle" => Ok(TopologyKind::Circle),
            "complete" => Ok(TopologyKind::Complete),
            "circulant" => {
                let d = self.degree.ok_or_else(|| {
                    ConfigError::Invalid("topology.degree is required for kind = \"circulant\"".into())
                })?;
                Ok(TopologyKind::Circulant(d))
            }
            "random" => match (self.edges, self.probability) {
                (Some(m), None) => Ok(TopologyKind::RandomEdges(m)),
                (None, Some(p)) => Ok(TopologyKind::RandomProb(p)),
                _ => Err(ConfigError::Invalid(
                    "topology kind = \"random\" takes exactly one of `edges` or `probability`"
                        .into(),
                )),
            },
            other => Err(ConfigError::Invalid(format!(
                "unknown topology kind {other:?} (expected star, circle, circulant, complete, random)"
            ))),
        }
    }

    pub fn label(&self) -> String {
        match self.kind.as_str() {
            "circulant" => format!("circulant-{}", self.degree.unwrap_or(0)),
            "random" => match (self.edges, self.probability) {
                (Some(m), _) => format!("random-{m}"),
                (_, Some(p)) => format!("random-p{p}"),
                _ => "random".into(),
            },
            other => other.to_string(),
        }
    }
}

/// One solver grid entry.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverCellConfig {
    /// `dpgm`, `pg-extra`, or `nids`.
    pub algorithm: String,
    /// Step size; omitted means 0.9 times the stability bound of the cell's
    /// topology.
    #[serde(default)]
    pub alpha: Option<f64>,
    pub inner_steps: usize,
    /// Reset the baseline auxiliary memory at every interval boundary.
    #[serde(default)]
    pub reset_baseline_memory: bool,
    /// Fail instead of warn when the DPGM step size violates the bound.
    #[serde(default)]
    pub enforce_step_size: bool,
}

impl SolverCellConfig {
    pub fn resolve_algorithm(&self) -> Result<Algorithm, ConfigError> {
        match self.algorithm.as_str() {
            "dpgm" => Ok(Algorithm::Dpgm),
            "pg-extra" | "pg_extra" | "pgextra" => Ok(Algorithm::PgExtra),
            "nids" => Ok(Algorithm::Nids),
            other => Err(ConfigError::Invalid(format!(
                "unknown algorithm {other:?} (expected dpgm, pg-extra, nids)"
            ))),
        }
    }
}

/// One noise grid entry: zero-mean Gaussian variances per source, zero
/// variance meaning the source is exact.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub id: String,
    #[serde(default)]
    pub state_variance: f64,
    #[serde(default)]
    pub gradient_variance: f64,
    #[serde(default)]
    pub prox_variance: f64,
}

impl NoiseConfig {
    pub fn model(&self, stacked_dim: usize) -> Result<NoiseModel, SolverError> {
        let source = |variance: f64| -> Result<Option<NoiseSource>, SolverError> {
            if variance == 0.0 {
                Ok(None)
            } else {
                Ok(Some(NoiseSource::iid(stacked_dim, 0.0, variance)?))
            }
        };
        Ok(NoiseModel {
            state: source(self.state_variance)?,
            gradient: source(self.gradient_variance)?,
            prox: source(self.prox_variance)?,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Compute relaxed optima and emit per-step error vectors and bound
    /// recursions alongside the tracking error.
    #[serde(default)]
    pub track_bounds: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { tol: default_tol(), track_bounds: false }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if self.monte_carlo_runs == 0 {
            return invalid("monte_carlo_runs must be at least 1".into());
        }
        if self.topology.is_empty() {
            return invalid("at least one [[topology]] entry is required".into());
        }
        if self.solver.is_empty() {
            return invalid("at least one [[solver]] entry is required".into());
        }
        if self.noise.is_empty() {
            return invalid("at least one [[noise]] entry is required".into());
        }
        let s = &self.scenario;
        if s.nodes == 0 {
            return invalid("scenario.nodes must be positive".into());
        }
        if s.dim == 0 {
            return invalid("scenario.dim must be positive".into());
        }
        if s.horizon == 0 {
            return invalid("scenario.horizon must be positive".into());
        }
        if s.rows() < s.dim {
            return invalid(format!(
                "scenario.rows_per_node ({}) must be at least scenario.dim ({})",
                s.rows(),
                s.dim
            ));
        }
        if !s.condition_number.is_finite() || s.condition_number < 1.0 {
            return invalid("scenario.condition_number must be >= 1".into());
        }
        if !s.ts.is_finite() || s.ts <= 0.0 {
            return invalid("scenario.ts must be positive".into());
        }
        for t in &self.topology {
            t.resolve()?;
        }
        for (i, cell) in self.solver.iter().enumerate() {
            cell.resolve_algorithm()?;
            if cell.inner_steps == 0 {
                return invalid(format!("solver[{i}].inner_steps must be at least 1"));
            }
            if let Some(a) = cell.alpha {
                if !a.is_finite() || a <= 0.0 {
                    return invalid(format!("solver[{i}].alpha must be positive, got {a}"));
                }
            }
        }
        for (i, n) in self.noise.iter().enumerate() {
            for (name, v) in [
                ("state_variance", n.state_variance),
                ("gradient_variance", n.gradient_variance),
                ("prox_variance", n.prox_variance),
            ] {
                if v < 0.0 {
                    return invalid(format!("noise[{i}].{name} must be nonnegative, got {v}"));
                }
            }
        }
        if !self.oracle.tol.is_finite() || self.oracle.tol <= 0.0 {
            return invalid("oracle.tol must be positive".into());
        }
        Ok(())
    }
}
