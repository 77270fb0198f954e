//! JSON experiment configuration: dataset, member models, loss, optimizer,
//! schedule, corruption list, consensus kinds, output directory. Every seed
//! is explicit and the whole structure round-trips through serde.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

use divlab::consensus::ConsensusKind;
use divlab::corrupt::{CorruptionKind, CorruptionSpec};
use divlab::losses::{CurvatureMode, LossKind};
use divlab::nn::{ArchKind, ModelSpec};
use divlab::optim::{OptimConfig, OptimKind};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub members: Vec<MemberConfig>,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub corruptions: Vec<CorruptionConfig>,
    #[serde(default = "default_consensus")]
    pub consensus: Vec<String>,
    pub output_dir: String,
}

fn default_consensus() -> Vec<String> {
    vec!["average".into()]
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetConfig {
    pub samples: usize,
    pub classes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

fn default_val_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "arch", rename_all = "kebab-case")]
pub enum MemberConfig {
    Mlp { hidden: Vec<usize>, seed: u64 },
    Cnn { channels: Vec<usize>, kernel: usize, seed: u64 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LossConfig {
    /// independent | gncl | gncl-masked | balanced | attribution-div
    pub kind: String,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// mse-identity | ce-softmax-hessian (GNCL variants only)
    #[serde(default = "default_curvature")]
    pub curvature: String,
}

fn default_lambda() -> f64 {
    0.2
}

fn default_curvature() -> String {
    "mse-identity".into()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OptimizerConfig {
    /// adabelief | sgd
    pub kind: String,
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_decay_factor")]
    pub decay_factor: f64,
    #[serde(default = "default_decay_every")]
    pub decay_every_epochs: usize,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_decay_factor() -> f64 {
    0.9
}
fn default_decay_every() -> usize {
    30
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CorruptionConfig {
    pub kind: String,
    pub strength: f64,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).context("parsing config JSON")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            bail!("config needs at least one member model");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            bail!("epochs and batch_size must be positive");
        }
        self.loss_kind()?;
        self.optimizer()?.validate()?;
        for c in &self.corruptions {
            c.spec()?.validate()?;
        }
        for kind in &self.consensus {
            ConsensusKind::parse(kind)?;
        }
        Ok(())
    }

    pub fn model_specs(&self) -> Vec<ModelSpec> {
        let input = (self.dataset.channels, self.dataset.height, self.dataset.width);
        self.members
            .iter()
            .map(|m| match m {
                MemberConfig::Mlp { hidden, seed } => ModelSpec {
                    arch: ArchKind::Mlp { hidden: hidden.clone() },
                    input,
                    classes: self.dataset.classes,
                    seed: *seed,
                },
                MemberConfig::Cnn { channels, kernel, seed } => ModelSpec {
                    arch: ArchKind::Cnn { channels: channels.clone(), kernel: *kernel },
                    input,
                    classes: self.dataset.classes,
                    seed: *seed,
                },
            })
            .collect()
    }

    pub fn loss_kind(&self) -> Result<LossKind> {
        let curvature = match self.loss.curvature.as_str() {
            "mse-identity" => CurvatureMode::MseIdentity,
            "ce-softmax-hessian" => CurvatureMode::CeSoftmaxHessian,
            other => bail!("unknown curvature mode `{other}`"),
        };
        Ok(match self.loss.kind.as_str() {
            "independent" => LossKind::Independent,
            "gncl" => LossKind::Gncl { lambda: self.loss.lambda, curvature },
            "gncl-masked" => LossKind::GnclMasked { lambda: self.loss.lambda, curvature },
            "balanced" => LossKind::Balanced { lambda: self.loss.lambda },
            "attribution-div" => LossKind::AttributionDiv { lambda: self.loss.lambda },
            other => bail!("unknown loss kind `{other}`"),
        })
    }

    pub fn optimizer(&self) -> Result<OptimConfig> {
        let kind = match self.optimizer.kind.as_str() {
            "adabelief" => OptimKind::AdaBelief,
            "sgd" => OptimKind::Sgd,
            other => bail!("unknown optimizer `{other}`"),
        };
        Ok(OptimConfig {
            kind,
            lr: self.optimizer.lr,
            beta1: self.optimizer.beta1,
            beta2: self.optimizer.beta2,
            epsilon: self.optimizer.epsilon,
            momentum: self.optimizer.momentum,
            decay_factor: self.optimizer.decay_factor,
            decay_every_epochs: self.optimizer.decay_every_epochs,
        })
    }

    pub fn consensus_kinds(&self) -> Result<Vec<ConsensusKind>> {
        self.consensus
            .iter()
            .map(|s| ConsensusKind::parse(s).map_err(Into::into))
            .collect()
    }

    pub fn corruption_specs(&self) -> Result<Vec<CorruptionSpec>> {
        self.corruptions.iter().map(|c| c.spec()).collect()
    }
}

impl CorruptionConfig {
    pub fn spec(&self) -> Result<CorruptionSpec> {
        Ok(CorruptionSpec {
            kind: CorruptionKind::parse(&self.kind)?,
            strength: self.strength,
            seed: self.seed,
        })
    }
}

/// Parse the CLI corruption flag form `kind=lines,strength=1.6,seed=3`.
pub fn parse_corrupt_flag(s: &str) -> Result<CorruptionSpec> {
    let mut kind = None;
    let mut strength = None;
    let mut seed = 0u64;
    for part in s.split(',') {
        let (k, v) = part
            .split_once('=')
            .with_context(|| format!("malformed corruption field `{part}`"))?;
        match k {
            "kind" => kind = Some(CorruptionKind::parse(v)?),
            "strength" => strength = Some(v.parse::<f64>().context("parsing strength")?),
            "seed" => seed = v.parse::<u64>().context("parsing seed")?,
            other => bail!("unknown corruption field `{other}`"),
        }
    }
    let spec = CorruptionSpec {
        kind: kind.context("corruption flag needs kind=")?,
        strength: strength.context("corruption flag needs strength=")?,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn sample_config() -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetConfig {
                samples: 240,
                classes: 8,
                channels: 3,
                height: 16,
                width: 16,
                seed: 11,
                val_fraction: 0.2,
            },
            members: vec![
                MemberConfig::Mlp { hidden: vec![32], seed: 1 },
                MemberConfig::Mlp { hidden: vec![32], seed: 2 },
                MemberConfig::Cnn { channels: vec![4], kernel: 3, seed: 3 },
            ],
            loss: LossConfig { kind: "gncl".into(), lambda: 0.2, curvature: "mse-identity".into() },
            optimizer: OptimizerConfig {
                kind: "adabelief".into(),
                lr: 1e-3,
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
                momentum: 0.0,
                decay_factor: 0.9,
                decay_every_epochs: 30,
            },
            epochs: 2,
            batch_size: 64,
            seed: 7,
            corruptions: vec![CorruptionConfig { kind: "lines".into(), strength: 1.6, seed: 5 }],
            consensus: vec!["average".into(), "vote".into()],
            output_dir: "out".into(),
        }
    }

    #[test]
    fn config_roundtrips_through_json() {
        let cfg = sample_config();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        back.validate().unwrap();
    }

    #[test]
    fn bad_kinds_rejected() {
        let mut cfg = sample_config();
        cfg.loss.kind = "mystery".into();
        assert!(cfg.validate().is_err());
        let mut cfg = sample_config();
        cfg.consensus = vec!["mode".into()];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn corrupt_flag_parses() {
        let spec = parse_corrupt_flag("kind=lines,strength=1.6,seed=9").unwrap();
        assert_eq!(spec.kind, CorruptionKind::Lines);
        assert_eq!(spec.strength, 1.6);
        assert_eq!(spec.seed, 9);
        assert!(parse_corrupt_flag("kind=lines").is_err());
        assert!(parse_corrupt_flag("kind=blur,strength=1").is_err());
    }
}
