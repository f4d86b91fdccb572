use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::asyncsim::{ComputeTime, DelayModel, ScriptedEvent};
use crate::certify::{Gammas, DEFAULT_SLACK};
use crate::error::{Error, Result};
use crate::feddr::{AccuracySchedule, ProxMode, SamplingScheme};
use crate::harness::data::{ModelSpec, QuadraticSpec, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Feddr,
    Asyncfeddr,
    Fedavg,
    Fedprox,
    /// FedDR with `alpha = 2`, full participation and `g = 0`.
    Fedsplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemConfig {
    Quadratic {
        n: usize,
        dim: usize,
        /// Standard deviation of the centers.
        #[serde(default = "one")]
        spread: f64,
        /// Per-coordinate curvature range; identity Hessians when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        curvature: Option<(f64, f64)>,
        #[serde(default)]
        lambda: f64,
        /// Seed of the instance, independent of the run seeds.
        #[serde(default)]
        instance_seed: u64,
    },
    Synthetic {
        data: SyntheticSpec,
        #[serde(default)]
        model: ModelSpec,
        #[serde(default)]
        lambda: f64,
    },
    /// A dataset written by `gen-data`; relative paths resolve against the
    /// config file.
    Dataset {
        path: PathBuf,
        #[serde(default)]
        model: ModelSpec,
        #[serde(default)]
        lambda: f64,
    },
}

impl ProblemConfig {
    pub fn quadratic_spec(&self) -> Option<QuadraticSpec> {
        match *self {
            ProblemConfig::Quadratic {
                n,
                dim,
                spread,
                curvature,
                ..
            } => Some(QuadraticSpec {
                n,
                dim,
                spread,
                curvature,
            }),
            _ => None,
        }
    }

    pub fn lambda(&self) -> f64 {
        match self {
            ProblemConfig::Quadratic { lambda, .. }
            | ProblemConfig::Synthetic { lambda, .. }
            | ProblemConfig::Dataset { lambda, .. } => *lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperConfig {
    /// Absolute prox step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Prox step as a multiple of `1/L`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_times_l: Option<f64>,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "exact")]
    pub accuracy: AccuracySchedule<f64>,
    #[serde(default = "full")]
    pub sampling: SamplingScheme,
    #[serde(default)]
    pub prox: ProxMode<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gammas: Option<Gammas>,
    #[serde(default = "yes")]
    pub enforce_stepsizes: bool,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn exact() -> AccuracySchedule<f64> {
    AccuracySchedule::Exact
}
fn full() -> SamplingScheme {
    SamplingScheme::Full
}

impl Default for HyperConfig {
    fn default() -> Self {
        Self {
            eta: None,
            eta_times_l: Some(0.5),
            alpha: 1.0,
            accuracy: exact(),
            sampling: full(),
            prox: ProxMode::default(),
            gammas: None,
            enforce_stepsizes: true,
        }
    }
}

impl HyperConfig {
    pub fn resolve_eta(&self, lipschitz: f64) -> Result<f64> {
        match (self.eta, self.eta_times_l) {
            (Some(e), None) => Ok(e),
            (None, Some(m)) => Ok(m / lipschitz),
            _ => Err(Error::Config(
                "hyper: set exactly one of `eta` and `eta_times_l`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsyncConfig {
    pub tau: usize,
    #[serde(default)]
    pub compute: ComputeTime,
    /// Per-user duration multipliers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Vec<f64>>,
    /// Fixed event order replacing the simulator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<Vec<ScriptedEvent>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineOptions {
    pub local_epochs: usize,
    pub local_lr: f64,
    #[serde(default = "ten")]
    pub batch_size: usize,
    #[serde(default)]
    pub mu: f64,
}

impl AsyncConfig {
    pub fn delay_model(&self) -> DelayModel {
        DelayModel {
            compute: self.compute,
            scale: self.scale.clone(),
            tau: self.tau,
        }
    }
}

fn ten() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceOptions {
    /// Keep per-round user states in the written trace.
    #[serde(default)]
    pub full_states: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyOptions {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_slack")]
    pub slack: f64,
}

fn default_slack() -> f64 {
    DEFAULT_SLACK
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            enabled: true,
            slack: DEFAULT_SLACK,
        }
    }
}

/// One experiment file: a problem, an algorithm and the seeds to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    /// Rounds for synchronous methods, server events for asyncfeddr.
    pub rounds: usize,
    pub seeds: Vec<u64>,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub hyper: HyperConfig,
    #[serde(default, rename = "async", skip_serializing_if = "Option::is_none")]
    pub async_: Option<AsyncConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineOptions>,
    #[serde(default)]
    pub trace: TraceOptions,
    #[serde(default)]
    pub certify: CertifyOptions,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.seeds.is_empty() {
            return bad("seeds: at least one seed is required");
        }
        if self.hyper.eta.is_some() == self.hyper.eta_times_l.is_some() {
            return bad("hyper: set exactly one of `eta` and `eta_times_l`");
        }
        if self.problem.lambda() < 0.0 {
            return bad("problem.lambda: must be nonnegative");
        }
        match self.algorithm {
            Algorithm::Asyncfeddr if self.async_.is_none() => {
                bad("algorithm = asyncfeddr needs an [async] section")
            }
            Algorithm::Fedavg | Algorithm::Fedprox if self.baseline.is_none() => {
                bad("baseline algorithms need a [baseline] section")
            }
            Algorithm::Fedavg | Algorithm::Fedprox if self.problem.lambda() != 0.0 => {
                bad("problem.lambda: baselines only handle g = 0")
            }
            Algorithm::Fedsplit if self.problem.lambda() != 0.0 => {
                bad("problem.lambda: fedsplit requires g = 0")
            }
            _ => Ok(()),
        }
    }
}
