use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::signals::signal_registry;
use crate::datagen::{BoxDomain, SamplingSpec, SignalSampler, TrajectorySpec};
use crate::dynamics::{step_count, ModelKind, Plant};
use crate::error::{Error, Result};
use crate::fml::{MlpArchitecture, TrainConfig};
use crate::localparam::BasisSpec;

/// How one-step training pairs are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "sampling", rename_all = "kebab-case")]
pub enum DataSpec {
    /// Independent `(s, p)` draws, uniform in `omega_s x omega_p`.
    Uniform {
        omega_s: BoxDomain,
        omega_p: BoxDomain,
        n_pairs: usize,
    },
    /// Pairs picked from trajectories under random cosine controls.
    Trajectories {
        sampler: SignalSampler,
        trajectories: TrajectorySpec,
    },
}

impl DataSpec {
    fn validate(&self, plant: &Plant, basis: &BasisSpec) -> Result<()> {
        match self {
            DataSpec::Uniform { omega_s, omega_p, n_pairs } => {
                omega_s.validate()?;
                omega_p.validate()?;
                if omega_s.dim() != plant.kind().state_dim() || omega_p.dim() != basis.n_par() {
                    return Err(Error::Config("uniform sampling boxes do not match plant and basis".into()));
                }
                if *n_pairs == 0 {
                    return Err(Error::Config("n_pairs must be at least 1".into()));
                }
            }
            DataSpec::Trajectories { sampler, trajectories } => {
                sampler.validate()?;
                if trajectories.s0.len() != plant.kind().state_dim() {
                    return Err(Error::Config("trajectory initial state does not match the plant".into()));
                }
                if trajectories.n_traj == 0 || trajectories.pairs_per_traj == 0 {
                    return Err(Error::Config("trajectory counts must be at least 1".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub train: TrainConfig,
}

impl NetConfig {
    pub fn architecture(&self, n_s: usize, n_par: usize) -> MlpArchitecture {
        MlpArchitecture {
            n_s,
            n_par,
            hidden_layers: self.hidden_layers,
            width: self.width,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    /// Weight groups `W[0..freeze]` are kept from the prior.
    pub freeze: usize,
    pub train: TrainConfig,
}

/// A recorded run drawn from the slip-based plant when no real file exists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticExperiment {
    pub plant: Plant,
    pub s0: Vec<f64>,
    pub n_rows: usize,
    /// Half-width of uniform noise on every recorded channel.
    #[serde(default)]
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSource {
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticExperiment>,
    /// Moving-average width (odd).
    pub window: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case")]
pub enum CaseConfig {
    #[serde(rename = "I-drips")]
    Drips {
        truth: Plant,
        sampling: SamplingSpec,
        #[serde(default)]
        rank: Option<usize>,
    },
    #[serde(rename = "I-fml")]
    Fml { truth: Plant, data: DataSpec, net: NetConfig },
    #[serde(rename = "II-correct")]
    Correct {
        truth: Plant,
        prior: Plant,
        prior_data: DataSpec,
        hf_data: DataSpec,
        net: NetConfig,
        transfer: TransferConfig,
    },
    #[serde(rename = "III-ingest")]
    Ingest {
        prior: Plant,
        prior_data: DataSpec,
        experiment: ExperimentSource,
        net: NetConfig,
        transfer: TransferConfig,
    },
}

impl CaseConfig {
    pub fn tag(&self) -> &'static str {
        match self {
            CaseConfig::Drips { .. } => "I-drips",
            CaseConfig::Fml { .. } => "I-fml",
            CaseConfig::Correct { .. } => "II-correct",
            CaseConfig::Ingest { .. } => "III-ingest",
        }
    }

    /// Model family whose states are predicted.
    pub fn model(&self) -> ModelKind {
        match self {
            CaseConfig::Drips { truth, .. } | CaseConfig::Fml { truth, .. } | CaseConfig::Correct { truth, .. } => {
                truth.kind()
            }
            CaseConfig::Ingest { prior, .. } => prior.kind(),
        }
    }
}

fn quadratic_nodes() -> BasisSpec {
    BasisSpec::quadratic_nodes()
}

/// One experiment, read from a JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub case: CaseConfig,
    pub dt: f64,
    #[serde(default = "quadratic_nodes")]
    pub basis: BasisSpec,
    /// Test-signal ids.
    pub signals: Vec<String>,
    /// Initial state of every test rollout; defaults per model family.
    #[serde(default)]
    pub s0: Option<Vec<f64>>,
    /// Every random stream of the run derives from this.
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; a relative experiment file path is taken relative to
    /// the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
        if let CaseConfig::Ingest { experiment, .. } = &mut cfg.case {
            if let Some(f) = experiment.file.as_mut().filter(|f| f.is_relative()) {
                *f = path.parent().unwrap_or(Path::new(".")).join(&*f);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn initial_state(&self) -> Vec<f64> {
        if let Some(s0) = &self.s0 {
            return s0.clone();
        }
        match self.case.model() {
            ModelKind::Slip => vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0],
            kind => vec![0.0; kind.state_dim()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        self.basis.validate()?;
        let model = self.case.model();
        if self.signals.is_empty() {
            return Err(Error::Config("at least one test signal is required".into()));
        }
        for id in &self.signals {
            let sig = signal_registry(id)?;
            if sig.model != model {
                return Err(Error::Config(format!("signal {id} drives {} plants, case predicts {model}", sig.model)));
            }
            step_count(sig.horizon, self.dt)?;
        }
        if let Some(s0) = &self.s0 {
            if s0.len() != model.state_dim() || s0.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("s0 must hold {} finite values", model.state_dim())));
            }
        }
        let check_net = |net: &NetConfig| -> Result<()> {
            net.architecture(model.state_dim(), self.basis.n_par()).validate()?;
            net.train.validate()
        };
        match &self.case {
            CaseConfig::Drips { truth, sampling, .. } => {
                truth.validate()?;
                sampling.omega_s.validate()?;
                sampling.omega_p.validate()?;
                if sampling.omega_s.dim() != truth.kind().state_dim() || sampling.omega_p.dim() != self.basis.n_par() {
                    return Err(Error::Config("sampling boxes do not match plant and basis".into()));
                }
            }
            CaseConfig::Fml { truth, data, net } => {
                truth.validate()?;
                data.validate(truth, &self.basis)?;
                check_net(net)?;
            }
            CaseConfig::Correct {
                truth,
                prior,
                prior_data,
                hf_data,
                net,
                transfer,
            } => {
                truth.validate()?;
                prior.validate()?;
                if truth == prior {
                    return Err(Error::Config("correction needs different true and prior parameters".into()));
                }
                if truth.kind() != prior.kind() {
                    return Err(Error::Config("true and prior plants must be the same family".into()));
                }
                prior_data.validate(prior, &self.basis)?;
                hf_data.validate(truth, &self.basis)?;
                check_net(net)?;
                check_transfer(transfer, net)?;
            }
            CaseConfig::Ingest {
                prior,
                prior_data,
                experiment,
                net,
                transfer,
            } => {
                prior.validate()?;
                if self.signals.len() != 1 {
                    return Err(Error::Config("ingestion cases take exactly one signal, the recorded control".into()));
                }
                if prior.kind() != ModelKind::ExperimentalPrior {
                    return Err(Error::Config("ingestion cases use the experimental prior model".into()));
                }
                prior_data.validate(prior, &self.basis)?;
                check_net(net)?;
                check_transfer(transfer, net)?;
                match (&experiment.file, &experiment.synthetic) {
                    (Some(f), None) => {
                        if !f.exists() {
                            return Err(Error::Config(format!("experiment file {} does not exist", f.display())));
                        }
                    }
                    (None, Some(syn)) => {
                        syn.plant.validate()?;
                        if syn.plant.kind() != ModelKind::Slip || syn.s0.len() != 6 {
                            return Err(Error::Config("synthetic experiments need a slip-based plant and 6 states".into()));
                        }
                        if syn.n_rows < 2 {
                            return Err(Error::Config("synthetic experiments need at least 2 rows".into()));
                        }
                    }
                    _ => {
                        return Err(Error::Config(
                            "experiment needs exactly one of 'file' or 'synthetic'".into(),
                        ))
                    }
                }
                if experiment.window % 2 == 0 {
                    return Err(Error::Config("moving-average window must be odd".into()));
                }
            }
        }
        Ok(())
    }
}

fn check_transfer(transfer: &TransferConfig, net: &NetConfig) -> Result<()> {
    if transfer.freeze > net.hidden_layers {
        return Err(Error::Config(format!(
            "freeze index {} exceeds the number of hidden layers {}",
            transfer.freeze, net.hidden_layers
        )));
    }
    transfer.train.validate()
}
