//! Experiment configuration: one TOML file describes the model, the
//! initial condition, the time grid, and the sample sizes, and every
//! output embeds the resolved configuration so a result file is
//! self-describing. Validation failures always name the offending
//! field (`params.beta`, `grid.times`, ...) so a bad config is a
//! one-line fix.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use kac_core::oracles::classic_kac_params;
use kac_core::simulators::{InitialCondition, ReservoirParams, ThermostatParams};

use crate::CliError;

/// Which interaction model an experiment runs.
///
/// `classic-kac` is the reservoir model with its channel rates pinned to
/// the substitution that reproduces the classical momentum-conserving
/// gas; only `d`, `n`, `m`, and `beta` may be given for it.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Thermostat,
    Reservoir,
    ClassicKac,
}

/// Raw model parameters as written in the config file. Which fields are
/// required or forbidden depends on `model`; see [`ExperimentConfig::resolve_model`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub d: usize,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    pub beta: f64,
}

/// Initial law of the tagged system (reservoir particles always start
/// in equilibrium at `params.beta`).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialConfig {
    /// Every particle starts at exactly `velocity` (length `d`).
    PointMass { velocity: Vec<f64> },
    /// Independent centered Gaussians with covariance `(1/beta0) I`.
    IsotropicGaussian { beta0: f64 },
    /// Uniform on the sphere of fixed total kinetic `energy`.
    EnergySphere { energy: f64 },
}

/// Recording grid. Either an explicit ascending `times` list, or a
/// uniform grid of `points` instants on `[0, t_max]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "GridConfig::default_t_max")]
    pub t_max: f64,
    #[serde(default = "GridConfig::default_points")]
    pub points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
}

impl GridConfig {
    fn default_t_max() -> f64 {
        2.0
    }

    fn default_points() -> usize {
        9
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            t_max: Self::default_t_max(),
            points: Self::default_points(),
            times: None,
        }
    }
}

/// Sample sizes. Each subcommand reads the one it needs: ensemble
/// simulations use `trajectories`, the covariance-sum estimator uses
/// `histories`, and the functional-decay commands evolve
/// `mixture_histories` Gaussian components and integrate them with
/// `mc_samples` Monte Carlo points.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    #[serde(default = "SampleConfig::default_trajectories")]
    pub trajectories: usize,
    #[serde(default = "SampleConfig::default_histories")]
    pub histories: usize,
    #[serde(default = "SampleConfig::default_mixture_histories")]
    pub mixture_histories: usize,
    #[serde(default = "SampleConfig::default_mc_samples")]
    pub mc_samples: usize,
}

impl SampleConfig {
    fn default_trajectories() -> usize {
        10_000
    }

    fn default_histories() -> usize {
        100_000
    }

    fn default_mixture_histories() -> usize {
        2_000
    }

    fn default_mc_samples() -> usize {
        20_000
    }
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            trajectories: Self::default_trajectories(),
            histories: Self::default_histories(),
            mixture_histories: Self::default_mixture_histories(),
            mc_samples: Self::default_mc_samples(),
        }
    }
}

/// Settings for the `verify` battery: a global scale on sample counts
/// and per-check threshold overrides keyed by check name.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "VerifyConfig::default_scale")]
    pub scale: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<String, f64>,
}

impl VerifyConfig {
    fn default_scale() -> f64 {
        1.0
    }
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            scale: Self::default_scale(),
            overrides: BTreeMap::new(),
        }
    }
}

/// A full experiment description. The struct round-trips through TOML;
/// the serialized form (minus the output path) is echoed verbatim into
/// every result file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub params: ParamsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialConfig>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub samples: SampleConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Output path; the `--out` flag takes precedence. Never echoed, so
    /// the payload does not depend on where it is written.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    /// Restricts `verify` to this subset of check names.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checks: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "is_default_verify")]
    pub verify: VerifyConfig,
}

fn default_seed() -> u64 {
    0x6b6163
}

fn is_default_verify(v: &VerifyConfig) -> bool {
    v.scale == VerifyConfig::default_scale() && v.overrides.is_empty()
}

/// A config's model resolved to concrete simulator parameters.
#[derive(Clone, Debug)]
pub enum ResolvedModel {
    Thermostat(ThermostatParams),
    Reservoir(ReservoirParams),
}

fn bad(field: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

fn require<T: Copy>(value: Option<T>, field: &str, model: &str) -> Result<T, CliError> {
    value.ok_or_else(|| bad(field, format!("required for the {model} model")))
}

fn forbid<T>(value: &Option<T>, field: &str, reason: &str) -> Result<(), CliError> {
    if value.is_some() {
        Err(bad(field, reason))
    } else {
        Ok(())
    }
}

fn nonneg_rate(value: f64, field: &str) -> Result<f64, CliError> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(bad(field, "must be a finite rate >= 0"))
    }
}

impl ExperimentConfig {
    /// Parses and validates a TOML config file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| CliError::Config {
            field: "<config file>".to_string(),
            // toml's message already names the field and position.
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Structural validation shared by every subcommand. Model-specific
    /// parameter rules live in [`Self::resolve_model`], which is also
    /// called here so an invalid file is rejected even by commands that
    /// never simulate.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.params.d == 0 {
            return Err(bad("params.d", "dimension must be at least 1"));
        }
        if self.params.n == 0 {
            return Err(bad("params.n", "need at least one system particle"));
        }
        if !(self.params.beta.is_finite() && self.params.beta > 0.0) {
            return Err(bad("params.beta", "inverse temperature must be finite and > 0"));
        }
        self.resolve_model()?;

        if let Some(initial) = &self.initial {
            match initial {
                InitialConfig::PointMass { velocity } => {
                    if velocity.len() != self.params.d {
                        return Err(bad(
                            "initial.velocity",
                            format!(
                                "expected d = {} components, got {}",
                                self.params.d,
                                velocity.len()
                            ),
                        ));
                    }
                    if velocity.iter().any(|v| !v.is_finite()) {
                        return Err(bad("initial.velocity", "components must be finite"));
                    }
                }
                InitialConfig::IsotropicGaussian { beta0 } => {
                    if !(beta0.is_finite() && *beta0 > 0.0) {
                        return Err(bad("initial.beta0", "must be finite and > 0"));
                    }
                }
                InitialConfig::EnergySphere { energy } => {
                    if !(energy.is_finite() && *energy > 0.0) {
                        return Err(bad("initial.energy", "must be finite and > 0"));
                    }
                }
            }
        }

        match &self.grid.times {
            Some(times) => {
                if times.is_empty() {
                    return Err(bad("grid.times", "must contain at least one instant"));
                }
                let ascending = times.windows(2).all(|w| w[0] < w[1]);
                if !ascending || times[0] < 0.0 || times.iter().any(|t| !t.is_finite()) {
                    return Err(bad(
                        "grid.times",
                        "must be finite, nonnegative, and strictly ascending",
                    ));
                }
            }
            None => {
                if self.grid.points < 2 {
                    return Err(bad("grid.points", "a uniform grid needs at least 2 points"));
                }
                if !(self.grid.t_max.is_finite() && self.grid.t_max > 0.0) {
                    return Err(bad("grid.t_max", "must be finite and > 0"));
                }
            }
        }

        for (value, field) in [
            (self.samples.trajectories, "samples.trajectories"),
            (self.samples.histories, "samples.histories"),
            (self.samples.mixture_histories, "samples.mixture_histories"),
            (self.samples.mc_samples, "samples.mc_samples"),
        ] {
            if value == 0 {
                return Err(bad(field, "sample count must be at least 1"));
            }
        }

        if !(self.verify.scale.is_finite() && self.verify.scale > 0.0) {
            return Err(bad("verify.scale", "must be finite and > 0"));
        }
        for (name, threshold) in &self.verify.overrides {
            if !threshold.is_finite() {
                return Err(bad(
                    &format!("verify.overrides.{name}"),
                    "threshold must be finite",
                ));
            }
        }
        Ok(())
    }

    /// Applies the per-model parameter rules and builds the simulator
    /// parameter struct.
    pub fn resolve_model(&self) -> Result<ResolvedModel, CliError> {
        let p = &self.params;
        match self.model {
            ModelKind::Thermostat => {
                forbid(&p.m, "params.m", "not a thermostat parameter")?;
                forbid(&p.lambda_s, "params.lambda_s", "not a thermostat parameter")?;
                forbid(&p.lambda_r, "params.lambda_r", "not a thermostat parameter")?;
                let lambda = nonneg_rate(require(p.lambda, "params.lambda", "thermostat")?, "params.lambda")?;
                let mu = nonneg_rate(require(p.mu, "params.mu", "thermostat")?, "params.mu")?;
                Ok(ResolvedModel::Thermostat(ThermostatParams {
                    d: p.d,
                    n: p.n,
                    lambda,
                    mu,
                    beta: p.beta,
                }))
            }
            ModelKind::Reservoir => {
                forbid(&p.lambda, "params.lambda", "not a reservoir parameter (use lambda_s/lambda_r)")?;
                let m = require(p.m, "params.m", "reservoir")?;
                if m == 0 {
                    return Err(bad("params.m", "need at least one reservoir particle"));
                }
                let lambda_s = nonneg_rate(require(p.lambda_s, "params.lambda_s", "reservoir")?, "params.lambda_s")?;
                let lambda_r = nonneg_rate(require(p.lambda_r, "params.lambda_r", "reservoir")?, "params.lambda_r")?;
                let mu = nonneg_rate(require(p.mu, "params.mu", "reservoir")?, "params.mu")?;
                Ok(ResolvedModel::Reservoir(ReservoirParams {
                    d: p.d,
                    n: p.n,
                    m,
                    lambda_s,
                    lambda_r,
                    mu,
                    beta: p.beta,
                }))
            }
            ModelKind::ClassicKac => {
                for (opt, field) in [
                    (&p.lambda, "params.lambda"),
                    (&p.lambda_s, "params.lambda_s"),
                    (&p.lambda_r, "params.lambda_r"),
                    (&p.mu, "params.mu"),
                ] {
                    forbid(opt, field, "derived by the classic-kac substitution; remove it")?;
                }
                let m = require(p.m, "params.m", "classic-kac")?;
                if m == 0 {
                    return Err(bad("params.m", "need at least one reservoir particle"));
                }
                let params = classic_kac_params(p.d, p.n, m, p.beta)
                    .map_err(|e| bad("params", e.to_string()))?;
                Ok(ResolvedModel::Reservoir(params))
            }
        }
    }

    /// The recording instants, resolved from either form of `grid`.
    pub fn grid_times(&self) -> Vec<f64> {
        match &self.grid.times {
            Some(times) => times.clone(),
            None => {
                let k = self.grid.points;
                (0..k)
                    .map(|i| self.grid.t_max * i as f64 / (k - 1) as f64)
                    .collect()
            }
        }
    }

    /// The initial condition, required by the curve subcommands.
    pub fn initial_condition(&self) -> Result<InitialCondition, CliError> {
        match self.initial.as_ref().ok_or_else(|| {
            bad("initial", "this subcommand needs an [initial] section")
        })? {
            InitialConfig::PointMass { velocity } => Ok(InitialCondition::PointMass {
                velocity: velocity.clone(),
            }),
            InitialConfig::IsotropicGaussian { beta0 } => {
                Ok(InitialCondition::IsotropicGaussian { beta0: *beta0 })
            }
            InitialConfig::EnergySphere { energy } => {
                Ok(InitialCondition::EnergySphere { energy: *energy })
            }
        }
    }

    /// The config as TOML, as embedded in result files.
    pub fn echo_toml(&self) -> String {
        toml::to_string(self).expect("a validated config serializes")
    }
}
