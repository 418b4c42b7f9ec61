//! Mini-batch training of the student, ablation wiring and the epoch log.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::checkpoint::{Checkpoint, RngState};
use crate::error::{Error, Result};
use crate::loss::{bounded_kd_loss, plain_kd_loss, predictive_loss, total_loss, LossConfig};
use crate::metrics::evaluate;
use crate::optim::{clip_global_norm, LrSchedule, Optimizer, OptimizerKind};
use crate::params::{Bound, ParamStore};
use crate::pipeline::{PreparedData, Split};
use crate::prompt::{PromptGroup, PromptSwitches};
use crate::student::{ModelDims, StudentModel};
use crate::teacher::TeacherPredictions;

/// Named variants accepted by [`ablate`].
pub const VARIANTS: [&str; 8] = [
    "full",
    "w/o-Tran-Pro",
    "w/o-S-Pro",
    "w/o-T-Pro",
    "w/o-IB",
    "w/o-TB",
    "w/o-KD",
    "MLP",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    pub no_kd: bool,
    pub no_ib: bool,
    pub no_tb: bool,
    pub no_s_pro: bool,
    pub no_t_pro: bool,
    pub no_tran_pro: bool,
}

impl Ablation {
    pub fn switches(&self) -> PromptSwitches {
        PromptSwitches {
            spatial: !self.no_s_pro,
            temporal: !self.no_t_pro,
            transitional: !self.no_tran_pro,
        }
    }

    fn disabled_groups(&self) -> Vec<PromptGroup> {
        let mut g = Vec::new();
        if self.no_s_pro {
            g.push(PromptGroup::Spatial);
        }
        if self.no_t_pro {
            g.push(PromptGroup::Temporal);
        }
        if self.no_tran_pro {
            g.push(PromptGroup::Transitional);
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KdMode {
    Off,
    Bounded,
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Prompt / hidden width `d`.
    pub dim: usize,
    /// Latent width `d_z`.
    pub latent: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_milestones: Vec<usize>,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Epochs without validation improvement before stopping; `None` runs all.
    pub patience: Option<usize>,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub loss: LossConfig,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 64,
            latent: 64,
            epochs: 100,
            batch_size: 32,
            lr: 0.002,
            lr_decay: 0.5,
            lr_milestones: vec![1, 50, 100],
            grad_clip: Some(5.0),
            patience: Some(15),
            optimizer: OptimizerKind::Adam,
            seed: 0,
            loss: LossConfig::default(),
            ablation: Ablation::default(),
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base: self.lr,
            factor: self.lr_decay,
            milestones: self.lr_milestones.clone(),
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.schedule().lr_at(epoch)
    }

    pub fn kd_mode(&self) -> KdMode {
        if self.ablation.no_kd || self.loss.lambda == 0.0 {
            KdMode::Off
        } else if self.ablation.no_tb {
            KdMode::Plain
        } else {
            KdMode::Bounded
        }
    }

    /// Sampled latent and KL term unless the bottleneck is ablated.
    pub fn stochastic(&self) -> bool {
        !self.ablation.no_ib
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be ≥ 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr must be > 0");
        }
        if !(self.lr_decay > 0.0) {
            return bad("lr_decay must be > 0");
        }
        if self.dim == 0 || self.latent == 0 {
            return bad("dim and latent must be ≥ 1");
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("grad_clip must be > 0");
        }
        Ok(())
    }
}

/// Applies a named variant to `base`.
pub fn ablate(variant: &str, base: &TrainConfig) -> Result<TrainConfig> {
    let mut cfg = base.clone();
    let a = &mut cfg.ablation;
    match variant {
        "full" => {}
        "w/o-Tran-Pro" => a.no_tran_pro = true,
        "w/o-S-Pro" => a.no_s_pro = true,
        "w/o-T-Pro" => a.no_t_pro = true,
        "w/o-IB" => a.no_ib = true,
        "w/o-TB" => a.no_tb = true,
        "w/o-KD" => a.no_kd = true,
        "MLP" => {
            *a = Ablation {
                no_kd: true,
                no_ib: true,
                no_tb: false,
                no_s_pro: true,
                no_t_pro: true,
                no_tran_pro: true,
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown variant {other:?} (expected one of {})",
                VARIANTS.join(", ")
            )))
        }
    }
    if cfg.ablation.no_ib {
        cfg.loss.beta1 = 0.0;
        cfg.loss.beta2 = 0.0;
    }
    if cfg.ablation.no_kd {
        cfg.loss.lambda = 0.0;
    }
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean total objective over batches.
    pub train_loss: f64,
    pub l_pre: f64,
    /// Mean unweighted distillation term.
    pub l_kd: f64,
    /// Mean weighted bottleneck term `(β1 + β2)·kl`.
    pub l_ib: f64,
    /// Validation MAE in original units.
    pub val_mae: f64,
}

/// Graph nodes of one batch objective.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub l_pre: Var,
    pub l_kd: Option<Var>,
    pub kl: Option<Var>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

pub struct Trainer<'a> {
    data: &'a PreparedData,
    teacher: Option<&'a TeacherPredictions>,
    cfg: TrainConfig,
    model: StudentModel,
    store: ParamStore,
}

impl<'a> Trainer<'a> {
    /// Validates the config, initialises parameters from `seed` and zeroes and
    /// freezes ablated prompt groups.
    pub fn new(data: &'a PreparedData, teacher: Option<&'a TeacherPredictions>, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        match (cfg.kd_mode(), teacher) {
            (KdMode::Off, _) => {}
            (_, None) => {
                return Err(Error::Config(
                    "distillation is enabled but no teacher predictions were given".into(),
                ))
            }
            (_, Some(t)) => t.check_alignment(data)?,
        }
        if data.range(Split::Train).is_empty() || data.range(Split::Val).is_empty() {
            return Err(Error::Contract("train and validation splits must be non-empty".into()));
        }
        let dims = ModelDims {
            nodes: data.nodes,
            history: data.history,
            horizon: data.horizon,
            features: data.features,
            steps_per_day: data.steps_per_day,
            dim: cfg.dim,
            latent: cfg.latent,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let model = StudentModel::new(dims, &mut store, &mut rng);
        for group in cfg.ablation.disabled_groups() {
            for id in model.prompts.group_ids(group) {
                let shape = store.get(id).shape().to_vec();
                store.set(id, Tensor::zeros(&shape))?;
                store.set_frozen(id, true);
            }
        }
        Ok(Trainer {
            data,
            teacher: if cfg.kd_mode() == KdMode::Off { None } else { teacher },
            cfg: cfg.clone(),
            model,
            store,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn model(&self) -> &StudentModel {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Builds the objective for windows `idx`. `eps` is used only when the
    /// latent is stochastic.
    pub fn batch_loss(&self, tape: &mut Tape, bound: &Bound, idx: &[usize], eps: Option<Tensor>) -> Result<LossParts> {
        let cfg = &self.cfg;
        let input = self.data.batch_input(idx, None)?;
        let eps = if cfg.stochastic() { eps } else { None };
        let out = self
            .model
            .forward(tape, bound, &input, cfg.ablation.switches(), eps, None)?;
        let y = tape.constant(self.data.targets(idx));
        let kind = cfg.loss.base_loss;
        let l_pre = predictive_loss(tape, out.prediction, y, kind)?;
        let l_kd = match (cfg.kd_mode(), self.teacher) {
            (KdMode::Off, _) | (_, None) => None,
            (mode, Some(t)) => {
                let yt = tape.constant(t.batch(idx, &self.data.normalizer)?);
                Some(match mode {
                    KdMode::Bounded => bounded_kd_loss(tape, out.prediction, yt, y, cfg.loss.delta, kind)?,
                    _ => plain_kd_loss(tape, out.prediction, yt, kind)?,
                })
            }
        };
        let kl = if cfg.stochastic() {
            Some(crate::student::kl_divergence(tape, &out.latent)?)
        } else {
            None
        };
        let zero = |tape: &mut Tape| tape.constant(Tensor::scalar(0.0));
        let kd_term = l_kd.unwrap_or_else(|| zero(tape));
        let kl_term = kl.unwrap_or_else(|| zero(tape));
        let total = total_loss(tape, l_pre, kd_term, kl_term, &cfg.loss)?;
        Ok(LossParts { total, l_pre, l_kd, kl })
    }

    /// Runs the epoch loop, calling `on_epoch` after each epoch, and returns
    /// the best-validation checkpoint.
    pub fn run(mut self, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
        let cfg = self.cfg.clone();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        shuffle_rng.set_stream(1);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        noise_rng.set_stream(2);
        let mut opt = Optimizer::new(cfg.optimizer, &self.store);
        let mut order: Vec<usize> = self.data.range(Split::Train).collect();
        let ib_weight = cfg.loss.beta1 + cfg.loss.beta2;
        let latent_numel = |b: usize| b * self.model.dims.nodes * self.model.dims.latent;

        let mut log = Vec::with_capacity(cfg.epochs);
        let mut best: Option<(f64, usize, ParamStore, RngState)> = None;
        let mut since_best = 0;
        let mut stopped_early = false;

        for epoch in 0..cfg.epochs {
            let lr = cfg.lr_at(epoch);
            order.shuffle(&mut shuffle_rng);
            let mut sums = [0.0f64; 4];
            let mut batches = 0usize;
            for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let eps = if cfg.stochastic() {
                    let [b, n, z] = self.model.latent_shape(chunk.len());
                    let draws = (0..latent_numel(chunk.len()))
                        .map(|_| noise_rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    Some(Tensor::new(vec![b, n, z], draws)?)
                } else {
                    None
                };
                let mut tape = Tape::new();
                let bound = self.store.bind(&mut tape);
                let parts = self.batch_loss(&mut tape, &bound, chunk, eps)?;
                let total = tape.value(parts.total).item();
                let l_pre = tape.value(parts.l_pre).item();
                let l_kd = parts.l_kd.map_or(0.0, |v| tape.value(v).item());
                let kl = parts.kl.map_or(0.0, |v| tape.value(v).item());
                if !total.is_finite() {
                    return Err(Error::NonFinite {
                        epoch,
                        batch: bi,
                        detail: format!("total={total} l_pre={l_pre} l_kd={l_kd} kl={kl} lr={lr}"),
                    });
                }
                tape.backward(parts.total)?;
                let mut grads = self.store.grads(&tape, &bound);
                if let Some(c) = cfg.grad_clip {
                    clip_global_norm(&mut grads, c);
                }
                opt.step(&mut self.store, &grads, lr);
                for (s, v) in sums.iter_mut().zip([total, l_pre, l_kd, ib_weight * kl]) {
                    *s += v;
                }
                batches += 1;
            }
            let n = batches as f64;
            let snapshot = Checkpoint::from_parts(
                self.model.clone(),
                self.store.clone(),
                self.data.normalizer.clone(),
                cfg.clone(),
                epoch,
                RngState::capture(cfg.seed, &shuffle_rng, &noise_rng),
            );
            let val_mae = evaluate(&snapshot, self.data, Split::Val, None)?.aggregate.mae;
            let entry = EpochLog {
                epoch,
                lr,
                train_loss: sums[0] / n,
                l_pre: sums[1] / n,
                l_kd: sums[2] / n,
                l_ib: sums[3] / n,
                val_mae,
            };
            on_epoch(&entry);
            log.push(entry);
            if best.as_ref().is_none_or(|b| val_mae < b.0) {
                best = Some((val_mae, epoch, snapshot.store().clone(), *snapshot.rng_state()));
                since_best = 0;
            } else {
                since_best += 1;
                if cfg.patience.is_some_and(|p| since_best >= p) {
                    stopped_early = true;
                    break;
                }
            }
        }
        let (_, best_epoch, store, rng) = best.expect("at least one epoch");
        let checkpoint = Checkpoint::from_parts(self.model, store, self.data.normalizer.clone(), cfg, best_epoch, rng);
        Ok(TrainOutcome {
            checkpoint,
            log,
            best_epoch,
            stopped_early,
        })
    }
}

pub fn train(
    data: &PreparedData,
    teacher: Option<&TeacherPredictions>,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    Trainer::new(data, teacher, cfg)?.run(on_epoch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_set_flags_and_coefficients() {
        let base = TrainConfig::default();
        let ib = ablate("w/o-IB", &base).unwrap();
        assert_eq!((ib.loss.beta1, ib.loss.beta2), (0.0, 0.0));
        assert!(!ib.stochastic());
        let tb = ablate("w/o-TB", &base).unwrap();
        assert_eq!(tb.kd_mode(), KdMode::Plain);
        let kd = ablate("w/o-KD", &base).unwrap();
        assert_eq!(kd.loss.lambda, 0.0);
        assert_eq!(kd.kd_mode(), KdMode::Off);
        let mlp = ablate("MLP", &base).unwrap();
        assert_eq!(mlp.ablation.switches(), PromptSwitches::none());
        assert_eq!((mlp.loss.lambda, mlp.loss.beta1, mlp.loss.beta2), (0.0, 0.0, 0.0));
        assert_eq!(ablate("full", &base).unwrap(), base);
        assert!(matches!(ablate("w/o-X", &base), Err(Error::Config(_))));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { lr: 0.0, ..TrainConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
