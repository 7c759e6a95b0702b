//! The single TOML configuration file behind every command.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{SynthConfig, DEFAULT_TITLE_LEN};
use crate::dp::{Activation, NoiseKind, PrivacyParams};
use crate::error::{Error, Result};
use crate::fed::{FedConfig, TrainMode};
use crate::serving::ServingMode;

use super::audit::AuditMechanism;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synth,
    Tsv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub news_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub behaviors_path: Option<PathBuf>,
    /// Title length `L` for TSV input; synthetic titles use `synth.title_len`.
    pub title_len: usize,
    pub valid_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synth,
            news_path: None,
            behaviors_path: None,
            title_len: DEFAULT_TITLE_LEN,
            valid_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub token_dim: usize,
    pub dim: usize,
    pub num_basis: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            token_dim: 64,
            dim: 64,
            num_basis: 5,
        }
    }
}

/// Serving budget used by `serve-eval`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub mode: ServingMode,
    #[serde(with = "crate::floatfmt")]
    pub epsilon: f64,
    pub delta: f64,
    pub pad_prob: f64,
    /// θ of the private attention vector.
    pub clip_norm: f64,
    /// θ of the embedding-perturbation baseline.
    pub vdp_clip_norm: f64,
    pub activation: Activation,
    /// Independent noise draws per validation log.
    pub repeats: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            mode: ServingMode::PrivateRec,
            epsilon: 10.0,
            delta: 1e-5,
            pad_prob: 0.5,
            clip_norm: 1.0,
            vdp_clip_norm: 0.001,
            activation: Activation::Softplus,
            repeats: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub modes: Vec<TrainMode>,
    #[serde(with = "crate::floatfmt::vec")]
    pub epsilon_t: Vec<f64>,
    #[serde(with = "crate::floatfmt::vec")]
    pub epsilon_s: Vec<f64>,
    pub pad_prob: Vec<f64>,
    pub num_basis: Vec<usize>,
    /// Noise families; Laplace runs use δ = 0, Gaussian runs the configured δ.
    pub noise: Vec<NoiseKind>,
    pub seeds: Vec<u64>,
    /// Worker threads; 0 uses every available core.
    pub parallelism: usize,
    /// Points `p = k / n` for `k < n` of the analytic σ-vs-p table.
    pub sigma_grid: usize,
    /// Checkpoints of trained cells are reused from here when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            modes: TrainMode::ALL.to_vec(),
            epsilon_t: vec![1.0, 5.0, 10.0, 20.0, f64::INFINITY],
            epsilon_s: vec![f64::INFINITY, 10.0, 5.0, 1.0],
            pad_prob: vec![0.5],
            num_basis: vec![5],
            noise: vec![NoiseKind::Laplace, NoiseKind::Gaussian],
            seeds: vec![0, 1, 2, 3, 4],
            parallelism: 0,
            sigma_grid: 20,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub mechanisms: Vec<AuditMechanism>,
    pub epsilons: Vec<f64>,
    pub pad_probs: Vec<f64>,
    pub delta: f64,
    pub clip_norm: f64,
    pub trials: usize,
    pub samples_per_bin: usize,
    pub min_bin_count: f64,
    pub confidence: f64,
    /// Noise multiplier of the negative controls, which must be detected.
    pub control_factor: f64,
    pub control_mechanisms: Vec<AuditMechanism>,
    pub control_epsilons: Vec<f64>,
    pub control_pad_probs: Vec<f64>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            mechanisms: vec![AuditMechanism::Attention, AuditMechanism::Vdp, AuditMechanism::Labels],
            epsilons: vec![0.5, 1.0, 10.0],
            pad_probs: vec![0.0, 0.5],
            delta: 1e-5,
            clip_norm: 1.0,
            trials: 1_000_000,
            samples_per_bin: 10_000,
            min_bin_count: 1_000.0,
            confidence: 0.99,
            control_factor: 0.5,
            control_mechanisms: vec![AuditMechanism::Attention, AuditMechanism::Vdp],
            control_epsilons: vec![0.5, 1.0],
            control_pad_probs: vec![0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Training mode of `train` (overridden by `--mode`).
    pub mode: TrainMode,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: FedConfig,
    pub serve: ServeConfig,
    pub sweep: SweepConfig,
    pub audit: AuditConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            mode: TrainMode::PrivateRec,
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            train: FedConfig::default(),
            serve: ServeConfig::default(),
            sweep: SweepConfig::default(),
            audit: AuditConfig::default(),
        }
    }
}

fn field(name: &'static str) -> impl Fn(Error) -> Error {
    move |e| Error::Config(format!("{name}: {e}"))
}

fn check(ok: bool, field: &str, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{field}: {msg}")))
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        check(d.title_len >= 1, "data.title_len", "must be >= 1")?;
        check(
            d.valid_fraction > 0.0 && d.valid_fraction < 1.0,
            "data.valid_fraction",
            "must be in (0, 1)",
        )?;
        if d.source == DataSource::Tsv {
            check(
                d.news_path.is_some() && d.behaviors_path.is_some(),
                "data",
                "source = \"tsv\" needs news_path and behaviors_path",
            )?;
        }
        self.synth.validate().map_err(field("synth"))?;
        let m = &self.model;
        check(m.token_dim >= 1 && m.dim >= 1, "model", "dimensions must be >= 1")?;
        check(m.num_basis >= 1, "model.num_basis", "must be >= 1")?;
        self.train.validate().map_err(field("train"))?;

        let s = &self.serve;
        self.serve_privacy().validate().map_err(field("serve"))?;
        PrivacyParams { clip_norm: s.vdp_clip_norm, ..self.serve_privacy() }
            .validate()
            .map_err(field("serve.vdp_clip_norm"))?;
        check(s.repeats >= 1, "serve.repeats", "must be >= 1")?;

        let w = &self.sweep;
        check(!w.modes.is_empty(), "sweep.modes", "must not be empty")?;
        check(!w.seeds.is_empty(), "sweep.seeds", "must not be empty")?;
        check(
            w.epsilon_t.iter().chain(&w.epsilon_s).all(|e| *e > 0.0),
            "sweep.epsilon_t/epsilon_s",
            "budgets must be > 0",
        )?;
        check(!w.epsilon_s.is_empty(), "sweep.epsilon_s", "must not be empty")?;
        check(
            w.pad_prob.iter().all(|p| (0.0..1.0).contains(p)),
            "sweep.pad_prob",
            "entries must be in [0, 1)",
        )?;
        check(w.num_basis.iter().all(|&b| b >= 1), "sweep.num_basis", "entries must be >= 1")?;
        check(!w.noise.is_empty(), "sweep.noise", "must not be empty")?;
        if w.noise.contains(&NoiseKind::Gaussian) {
            check(
                self.train.train_privacy.delta > 0.0 && s.delta > 0.0,
                "sweep.noise",
                "gaussian runs need train.train_privacy.delta and serve.delta > 0",
            )?;
        }
        if w.modes.contains(&TrainMode::PrivateRec) || w.modes.contains(&TrainMode::DpFedRec) {
            check(!w.epsilon_t.is_empty(), "sweep.epsilon_t", "must not be empty")?;
        }
        if w.modes.contains(&TrainMode::PrivateRec) {
            check(!w.pad_prob.is_empty(), "sweep.pad_prob", "must not be empty")?;
            check(!w.num_basis.is_empty(), "sweep.num_basis", "must not be empty")?;
        }

        let a = &self.audit;
        check(a.trials >= 100_000, "audit.trials", "must be >= 100000")?;
        check(
            a.confidence > 0.0 && a.confidence < 1.0,
            "audit.confidence",
            "must be in (0, 1)",
        )?;
        check(
            a.control_factor > 0.0 && a.control_factor < 1.0,
            "audit.control_factor",
            "must be in (0, 1)",
        )?;
        check(
            !a.control_mechanisms.contains(&AuditMechanism::Labels),
            "audit.control_mechanisms",
            "the label mechanism has no noise scale to shrink",
        )?;
        for &eps in a.epsilons.iter().chain(&a.control_epsilons) {
            for &p in a.pad_probs.iter().chain(&a.control_pad_probs) {
                PrivacyParams::new(eps, a.delta, p, a.clip_norm).map_err(field("audit"))?;
            }
        }
        Ok(())
    }

    pub fn serve_privacy(&self) -> PrivacyParams {
        let s = &self.serve;
        let clip_norm = match s.mode {
            ServingMode::PrivateRec => s.clip_norm,
            ServingMode::Vdp => s.vdp_clip_norm,
        };
        PrivacyParams {
            epsilon: s.epsilon,
            delta: s.delta,
            pad_prob: s.pad_prob,
            clip_norm,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = Config::default();
        let text = cfg.to_toml();
        assert!(text.contains("[train.train_privacy]"));
        assert_eq!(Config::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let cfg = Config::from_toml("seed = 7\n[train]\nnum_rounds = 3\n[sweep]\nepsilon_t = [1.0, inf]\n")
            .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.num_rounds, 3);
        assert_eq!(cfg.train.sample_ratio, 0.05);
        assert_eq!(cfg.sweep.epsilon_t, vec![1.0, f64::INFINITY]);
    }

    #[test]
    fn unknown_field_is_reported_with_its_line() {
        let err = Config::from_toml("seed = 1\n\n[model]\ndims = 3\n").unwrap_err().to_string();
        assert!(err.contains("dims"), "{err}");
        assert!(err.contains("line 4"), "{err}");
    }

    #[test]
    fn invalid_value_names_the_field() {
        let err = Config::from_toml("[data]\nvalid_fraction = 1.5\n").unwrap_err().to_string();
        assert!(err.contains("data.valid_fraction"), "{err}");
        let err = Config::from_toml("[serve]\nepsilon = -1.0\n").unwrap_err().to_string();
        assert!(err.contains("serve"), "{err}");
        let err = Config::from_toml("[data]\nsource = \"tsv\"\n").unwrap_err().to_string();
        assert!(err.contains("news_path"), "{err}");
    }
}
