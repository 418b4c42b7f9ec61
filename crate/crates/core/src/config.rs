//! Flat key-value run configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{GraphKind, SynthConfig};
use crate::error::{Error, Result};
use crate::loss::{BaseLoss, LossConfig};
use crate::optim::OptimizerKind;
use crate::teacher::TeacherConfig;
use crate::trainer::{Ablation, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset file; when absent a synthetic dataset is generated from the
    /// `synth_*` keys.
    pub dataset: Option<PathBuf>,
    pub synth_nodes: usize,
    pub synth_days: usize,
    pub synth_steps_per_day: usize,
    pub synth_features: usize,
    pub synth_graph: String,
    pub synth_rho: f64,
    pub synth_sigma: f64,
    pub synth_seed: u64,

    pub history: usize,
    pub horizon: usize,
    pub dim: usize,
    pub latent: usize,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_milestones: Vec<usize>,
    /// 0 disables clipping.
    pub grad_clip: f64,
    /// 0 disables early stopping.
    pub patience: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,

    pub lambda: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub delta: f64,
    pub base_loss: BaseLoss,

    pub teacher: Option<PathBuf>,
    pub teacher_hidden: usize,
    pub teacher_epochs: usize,
    pub teacher_lr: f64,

    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let train = TrainConfig::default();
        let teacher = TeacherConfig::default();
        RunConfig {
            dataset: None,
            synth_nodes: synth.nodes,
            synth_days: synth.days,
            synth_steps_per_day: synth.steps_per_day,
            synth_features: synth.features,
            synth_graph: synth.graph.to_string(),
            synth_rho: synth.rho,
            synth_sigma: synth.sigma,
            synth_seed: synth.seed,
            history: 12,
            horizon: 12,
            dim: train.dim,
            latent: train.latent,
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr: train.lr,
            lr_decay: train.lr_decay,
            lr_milestones: train.lr_milestones,
            grad_clip: train.grad_clip.unwrap_or(0.0),
            patience: train.patience.unwrap_or(0),
            optimizer: train.optimizer,
            seed: train.seed,
            lambda: train.loss.lambda,
            beta1: train.loss.beta1,
            beta2: train.loss.beta2,
            delta: train.loss.delta,
            base_loss: train.loss.base_loss,
            teacher: None,
            teacher_hidden: teacher.hidden,
            teacher_epochs: teacher.epochs,
            teacher_lr: teacher.lr,
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string() + &span_hint(text, e.span())))
    }

    /// Built-in defaults, overridden by `env_seed`, then by the keys present in
    /// `file`.
    pub fn resolve(file: Option<&Path>, env_seed: Option<u64>) -> Result<Self> {
        let mut base = RunConfig::default();
        if let Some(seed) = env_seed {
            base.seed = seed;
        }
        let Some(path) = file else {
            return Ok(base);
        };
        let text = std::fs::read_to_string(path)?;
        let overlay: toml::Table =
            toml::from_str(&text).map_err(|e| Error::Config(e.message().to_string() + &span_hint(&text, e.span())))?;
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::State(e.to_string()))?;
        merged.extend(overlay);
        toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        Ok(SynthConfig {
            nodes: self.synth_nodes,
            days: self.synth_days,
            steps_per_day: self.synth_steps_per_day,
            features: self.synth_features,
            graph: self.synth_graph.parse::<GraphKind>()?,
            rho: self.synth_rho,
            sigma: self.synth_sigma,
            seed: self.synth_seed,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            dim: self.dim,
            latent: self.latent,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            lr_decay: self.lr_decay,
            lr_milestones: self.lr_milestones.clone(),
            grad_clip: (self.grad_clip > 0.0).then_some(self.grad_clip),
            patience: (self.patience > 0).then_some(self.patience),
            optimizer: self.optimizer,
            seed: self.seed,
            loss: LossConfig {
                lambda: self.lambda,
                beta1: self.beta1,
                beta2: self.beta2,
                delta: self.delta,
                base_loss: self.base_loss,
            },
            ablation: Ablation::default(),
        }
    }

    pub fn teacher_config(&self) -> TeacherConfig {
        TeacherConfig {
            hidden: self.teacher_hidden,
            epochs: self.teacher_epochs,
            batch_size: self.batch_size,
            lr: self.teacher_lr,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.history == 0 || self.horizon == 0 {
            return Err(Error::Config("history and horizon must be ≥ 1".into()));
        }
        if self.grad_clip < 0.0 {
            return Err(Error::Config("grad_clip must be ≥ 0".into()));
        }
        self.synth_config()?;
        self.train_config().validate()
    }
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(s) => {
            let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}
