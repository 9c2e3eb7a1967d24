//! Experiment orchestration: configs and profiles, baseline training,
//! seeded sweeps with aggregation, comparison tables, and plots.
//!
//! The CLI binary is a thin wrapper over the `cmd_*` functions here, so
//! integration tests can drive the whole pipeline in-process.

mod plot;
mod report;
mod sweep;
mod train;

pub use plot::{cmd_plot, PlotInputs};
pub use report::{aggregate, cmd_compare, AggregateReport, AlgoStats, CompareRow, CompareTable};
pub use sweep::{cmd_unlearn, SweepArtifacts};
pub use train::{cmd_train, train_classifier, train_vae, Adam, TrainingSummary};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::models::DecoderHead;
use crate::rules::{Algorithm, UnlearnConfig};

/// Built-in default sets. Desk scale is small enough for a laptop CPU;
/// the paper profile mirrors the full-scale benchmark settings (data
/// size, epochs, step counts) without claiming architectural fidelity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Config(format!("unknown profile {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataConfig {
    pub images: PathBuf,
    pub labels: PathBuf,
    /// Desk-scale subsetting: first n samples after a seeded shuffle.
    pub subset: Option<usize>,
    pub forget_labels: Vec<u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub head: DecoderHead,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Fraction of samples held out for accuracy reporting.
    pub holdout_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnlearnSection {
    pub algorithms: Vec<Algorithm>,
    pub eta: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub beta_o_times_b: f64,
    pub beta_h_times_b: f64,
    pub alpha: f64,
    pub threshold: f64,
    pub n_monitor: usize,
    /// Generated samples per guided step; the protocol uses N_g = B.
    pub n_generate: Option<usize>,
    pub repeats: usize,
    #[serde(default)]
    pub stop_at_threshold: bool,
    #[serde(default)]
    pub stop_grad_forget: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Samples per side of the Fréchet-distance computation.
    pub n_fid: usize,
}

/// Everything one experiment needs, mirroring the config file schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub data: DataConfig,
    pub vae: VaeConfig,
    pub classifier: ClassifierConfig,
    pub unlearn: UnlearnSection,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        let base_data = DataConfig {
            images: PathBuf::from("data/mnist/train-images-idx3-ubyte"),
            labels: PathBuf::from("data/mnist/train-labels-idx1-ubyte"),
            subset: Some(10_000),
            forget_labels: vec![1],
        };
        match profile {
            Profile::Desk => ExperimentConfig {
                master_seed: 1234,
                data: base_data,
                vae: VaeConfig {
                    latent_dim: 2,
                    hidden_dim: 32,
                    head: DecoderHead::Bernoulli,
                    epochs: 40,
                    learning_rate: 1e-3,
                    batch_size: 128,
                },
                classifier: ClassifierConfig {
                    hidden_dim: 64,
                    epochs: 10,
                    learning_rate: 1e-3,
                    batch_size: 128,
                    holdout_fraction: 0.1,
                },
                unlearn: UnlearnSection {
                    algorithms: Algorithm::ALL.to_vec(),
                    eta: 1e-3,
                    steps: 530,
                    batch_size: 128,
                    beta_o_times_b: 1e3,
                    beta_h_times_b: 1e3,
                    alpha: 1e-8,
                    threshold: 0.02,
                    n_monitor: 500,
                    n_generate: None,
                    repeats: 10,
                    stop_at_threshold: false,
                    stop_grad_forget: false,
                },
                eval: EvalConfig { n_fid: 2000 },
            },
            Profile::Paper => ExperimentConfig {
                master_seed: 1234,
                data: DataConfig {
                    subset: None,
                    ..base_data
                },
                vae: VaeConfig {
                    latent_dim: 2,
                    hidden_dim: 512,
                    head: DecoderHead::Bernoulli,
                    epochs: 200,
                    learning_rate: 1e-3,
                    batch_size: 128,
                },
                classifier: ClassifierConfig {
                    hidden_dim: 256,
                    epochs: 10,
                    learning_rate: 1e-3,
                    batch_size: 128,
                    holdout_fraction: 0.1,
                },
                unlearn: UnlearnSection {
                    algorithms: Algorithm::ALL.to_vec(),
                    eta: 1e-3,
                    steps: 530,
                    batch_size: 128,
                    beta_o_times_b: 1e3,
                    beta_h_times_b: 1e3,
                    alpha: 1e-8,
                    threshold: 0.02,
                    n_monitor: 500,
                    n_generate: None,
                    repeats: 10,
                    stop_at_threshold: false,
                    stop_grad_forget: false,
                },
                eval: EvalConfig { n_fid: 25_000 },
            },
        }
    }

    /// Profile defaults with a config file deep-merged on top: any key the
    /// file sets wins, everything else keeps the profile value.
    pub fn load(profile: Profile, config_path: Option<&Path>) -> Result<Self> {
        let defaults = Self::profile(profile);
        let Some(path) = config_path else {
            return Ok(defaults);
        };
        let text = std::fs::read_to_string(path)?;
        let user: toml::Value = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut base = toml::Value::try_from(&defaults)
            .map_err(|e| Error::Config(format!("default serialization: {e}")))?;
        merge_toml(&mut base, user);
        base.try_into()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn n_generate(&self) -> usize {
        self.unlearn.n_generate.unwrap_or(self.unlearn.batch_size)
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            beta_o_times_b: self.unlearn.beta_o_times_b,
            beta_h_times_b: self.unlearn.beta_h_times_b,
            alpha: self.unlearn.alpha,
            batch_size: self.unlearn.batch_size,
            n_generate: self.n_generate(),
            stop_grad_forget: self.unlearn.stop_grad_forget,
        }
    }

    /// Per-run seeds derive from (master seed, algorithm id, run index).
    pub fn run_seed(&self, algorithm: Algorithm, run_index: usize) -> u64 {
        let algo_id = Algorithm::ALL
            .iter()
            .position(|a| *a == algorithm)
            .expect("algorithm in canonical list") as u64;
        crate::rules::mix_seed(
            crate::rules::mix_seed(self.master_seed, 0x5eed_a160 + algo_id),
            run_index as u64,
        )
    }

    pub fn unlearn_config(&self, algorithm: Algorithm, run_index: usize) -> UnlearnConfig {
        UnlearnConfig {
            algorithm,
            eta: self.unlearn.eta,
            steps: self.unlearn.steps,
            threshold: self.unlearn.threshold,
            n_monitor: self.unlearn.n_monitor,
            stop_at_threshold: self.unlearn.stop_at_threshold,
            loss: self.loss_config(),
            seed: self.run_seed(algorithm, run_index),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.unlearn.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.unlearn.algorithms.is_empty() {
            return Err(Error::Config("no algorithms configured".into()));
        }
        if !(self.classifier.holdout_fraction > 0.0 && self.classifier.holdout_fraction < 0.5) {
            return Err(Error::Config(
                "classifier holdout fraction must lie in (0, 0.5)".into(),
            ));
        }
        self.unlearn_config(self.unlearn.algorithms[0], 0).validate()
    }
}

fn merge_toml(base: &mut toml::Value, user: toml::Value) {
    match (base, user) {
        (toml::Value::Table(b), toml::Value::Table(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) => merge_toml(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_defaults_validate() {
        ExperimentConfig::profile(Profile::Desk).validate().unwrap();
        ExperimentConfig::profile(Profile::Paper).validate().unwrap();
    }

    #[test]
    fn desk_profile_pins_the_benchmark_hyperparameters() {
        let c = ExperimentConfig::profile(Profile::Desk);
        assert_eq!(c.unlearn.eta, 1e-3);
        assert_eq!(c.unlearn.steps, 530);
        assert_eq!(c.unlearn.batch_size, 128);
        assert_eq!(c.unlearn.beta_o_times_b, 1e3);
        assert_eq!(c.unlearn.beta_h_times_b, 1e3);
        assert_eq!(c.unlearn.alpha, 1e-8);
        assert_eq!(c.unlearn.threshold, 0.02);
        assert_eq!(c.unlearn.repeats, 10);
        assert_eq!(c.n_generate(), 128);
        assert_eq!(c.vae.latent_dim, 2);
    }

    #[test]
    fn config_file_overrides_profile_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(
            &path,
            r#"
master_seed = 99

[unlearn]
algorithms = ["UNO", "S"]
steps = 25
"#,
        )
        .unwrap();
        let c = ExperimentConfig::load(Profile::Desk, Some(&path)).unwrap();
        assert_eq!(c.master_seed, 99);
        assert_eq!(c.unlearn.steps, 25);
        assert_eq!(
            c.unlearn.algorithms,
            vec![Algorithm::Uno, Algorithm::Surgery]
        );
        // untouched keys keep profile defaults
        assert_eq!(c.unlearn.eta, 1e-3);
        assert_eq!(c.eval.n_fid, 2000);
    }

    #[test]
    fn run_seeds_differ_across_algorithms_and_runs() {
        let c = ExperimentConfig::profile(Profile::Desk);
        let a = c.run_seed(Algorithm::Uno, 0);
        let b = c.run_seed(Algorithm::Uno, 1);
        let d = c.run_seed(Algorithm::Surgery, 0);
        assert_ne!(a, b);
        assert_ne!(a, d);
        assert_eq!(a, c.run_seed(Algorithm::Uno, 0));
    }
}
