//! Teacher forecasts: a file-backed prediction table, a noise-controlled
//! synthetic teacher and a small dense graph-convolution reference model.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, TensorError, Var};
use crate::codec::{checked_product, put_f64s, put_u64, Reader};
use crate::dataset::{Corruption, Normalizer};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport, Forecaster};
use crate::optim::{clip_global_norm, Optimizer, OptimizerKind};
use crate::params::{Bound, Linear, Mlp, ParamStore};
use crate::pipeline::{PreparedData, Split};

const MAGIC: &[u8] = b"STTP1\n";

/// `num_windows×T'×N×F` teacher forecasts in original units, one per window.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherPredictions {
    values: Tensor,
}

impl TeacherPredictions {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.ndim() != 4 {
            return Err(Error::alignment("teacher prediction rank", 4, values.ndim()));
        }
        Ok(TeacherPredictions { values })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn num_windows(&self) -> usize {
        self.values.shape()[0]
    }

    /// `(T', N, F)`.
    pub fn window_shape(&self) -> [usize; 3] {
        let s = self.values.shape();
        [s[1], s[2], s[3]]
    }

    pub fn check_alignment(&self, data: &PreparedData) -> Result<()> {
        if self.num_windows() != data.num_windows() {
            return Err(Error::alignment(
                "teacher window count",
                data.num_windows(),
                self.num_windows(),
            ));
        }
        let want = [data.horizon, data.nodes, data.features];
        if self.window_shape() != want {
            return Err(Error::alignment(
                "teacher window shape (T', N, F)",
                format!("{want:?}"),
                format!("{:?}", self.window_shape()),
            ));
        }
        Ok(())
    }

    /// Normalized `B×T'×N×F` slice for windows `idx`.
    pub fn batch(&self, idx: &[usize], normalizer: &Normalizer) -> Result<Tensor> {
        let [h, n, f] = self.window_shape();
        let per = h * n * f;
        let mut out = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            out.extend_from_slice(&self.values.data()[i * per..(i + 1) * per]);
        }
        normalizer.apply(&Tensor::new(vec![idx.len(), h, n, f], out)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MAGIC.len() + 32 + self.values.numel() * 8);
        out.extend_from_slice(MAGIC);
        for &d in self.values.shape() {
            put_u64(&mut out, d as u64);
        }
        put_f64s(&mut out, self.values.data());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let mut dims = [0usize; 4];
        for (d, what) in dims.iter_mut().zip(["num_windows", "T'", "N", "F"]) {
            *d = r.usize(what)?;
        }
        let n = checked_product(&dims, &r)?;
        if n.checked_mul(8) != Some(r.remaining()) {
            return Err(r.error(format!(
                "payload holds {} bytes, header {dims:?} needs {}",
                r.remaining(),
                n.saturating_mul(8)
            )));
        }
        let data = r.f64s(n, "predictions")?;
        r.finish()?;
        Self::new(Tensor::new(dims.to_vec(), data)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Loads a prediction file and checks it against the dataset's windows.
pub fn load_teacher(path: impl AsRef<Path>, data: &PreparedData) -> Result<TeacherPredictions> {
    let t = TeacherPredictions::load(path)?;
    t.check_alignment(data)?;
    Ok(t)
}

/// `Y + bias + σ·ε` with `ε` standard normal, drawn in element order.
pub fn synth_teacher(y_true: &Tensor, sigma: f64, bias: f64, seed: u64) -> Result<TeacherPredictions> {
    if !(sigma >= 0.0) || !bias.is_finite() {
        return Err(Error::Contract(format!("teacher needs σ ≥ 0 and finite bias, got σ={sigma}, b={bias}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = y_true
        .data()
        .iter()
        .map(|&y| y + bias + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    TeacherPredictions::new(Tensor::new(y_true.shape().to_vec(), data)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            hidden: 32,
            epochs: 30,
            batch_size: 32,
            lr: 0.005,
            seed: 0,
        }
    }
}

/// Input projection, one dense neighbour-mixing layer with a residual, and a
/// per-node MLP head over the flattened history.
#[derive(Debug, Clone)]
pub struct RefTeacher {
    pub input: Linear,
    pub graph: Linear,
    pub head: Mlp,
    /// Row-normalized `A + I`.
    pub mixing: Tensor,
    pub history: usize,
    pub horizon: usize,
    pub features: usize,
}

impl RefTeacher {
    pub fn new(
        store: &mut ParamStore,
        mixing: Tensor,
        history: usize,
        horizon: usize,
        features: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        RefTeacher {
            input: Linear::new(store, "teacher.input", features, hidden, rng),
            graph: Linear::new(store, "teacher.graph", hidden, hidden, rng),
            head: Mlp::new(store, "teacher.head", &[history * hidden, hidden, horizon * features], rng),
            mixing,
            history,
            horizon,
            features,
        }
    }

    /// `B×T×N×F` → `B×T'×N×F`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var, TensorError> {
        let s = tape.shape(x).to_vec();
        let n = self.mixing.shape()[0];
        if s.len() != 4 || s[1] != self.history || s[2] != n || s[3] != self.features {
            return Err(TensorError::Shape {
                op: "ref_teacher",
                lhs: s,
                rhs: vec![self.history, n, self.features],
            });
        }
        let (b, t) = (s[0], s[1]);
        let h = self.input.out_dim;
        let h0 = self.input.forward(tape, bound, x)?;
        let h0 = tape.relu(h0);
        let by_node = tape.permute(h0, &[2, 0, 1, 3])?;
        let by_node = tape.reshape(by_node, &[n, b * t * h])?;
        let adj = tape.constant(self.mixing.clone());
        let mixed = tape.matmul(adj, by_node)?;
        let mixed = tape.reshape(mixed, &[n, b, t, h])?;
        let mixed = tape.permute(mixed, &[1, 2, 0, 3])?;
        let h1 = self.graph.forward(tape, bound, mixed)?;
        let h1 = tape.relu(h1);
        let hid = tape.add(h0, h1)?;
        let per_node = tape.permute(hid, &[0, 2, 1, 3])?;
        let per_node = tape.reshape(per_node, &[b, n, t * h])?;
        let out = self.head.forward(tape, bound, per_node)?;
        let out = tape.reshape(out, &[b, n, self.horizon, self.features])?;
        tape.permute(out, &[0, 2, 1, 3])
    }
}

#[derive(Debug, Clone)]
pub struct TrainedTeacher {
    pub model: RefTeacher,
    pub store: ParamStore,
}

impl TrainedTeacher {
    /// Fresh, untrained teacher.
    pub fn init(data: &PreparedData, mixing: Tensor, cfg: &TeacherConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let model = RefTeacher::new(
            &mut store,
            mixing,
            data.history,
            data.horizon,
            data.features,
            cfg.hidden,
            &mut rng,
        );
        TrainedTeacher { model, store }
    }

    /// Original-unit forecasts for every window, in window order.
    pub fn predictions(&self, data: &PreparedData) -> Result<TeacherPredictions> {
        let all: Vec<usize> = data.range(Split::All).collect();
        let mut out = Vec::with_capacity(all.len() * data.horizon * data.nodes * data.features);
        for chunk in all.chunks(crate::metrics::EVAL_BATCH) {
            let p = data.normalizer.invert(&self.predict(data, chunk, None)?)?;
            out.extend_from_slice(p.data());
        }
        TeacherPredictions::new(Tensor::new(vec![all.len(), data.horizon, data.nodes, data.features], out)?)
    }
}

impl Forecaster for TrainedTeacher {
    fn predict(&self, data: &PreparedData, idx: &[usize], corruption: Option<(Corruption, u64)>) -> Result<Tensor> {
        let input = data.batch_input(idx, corruption)?;
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let x = tape.constant(input.x);
        let y = self.model.forward(&mut tape, &bound, x)?;
        Ok(tape.value(y).clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherRun {
    pub train_mae: Vec<f64>,
    pub best_epoch: usize,
    pub untrained_test: EvalReport,
    pub test: EvalReport,
}

/// Trains the reference teacher with MAE on normalized targets, keeping the
/// best-validation weights, and emits predictions for every window.
pub fn train_ref_teacher(
    data: &PreparedData,
    mixing: Tensor,
    cfg: &TeacherConfig,
) -> Result<(TrainedTeacher, TeacherPredictions, TeacherRun)> {
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0) || cfg.hidden == 0 {
        return Err(Error::Config(format!("invalid teacher config {cfg:?}")));
    }
    let mut teacher = TrainedTeacher::init(data, mixing, cfg);
    let untrained_test = evaluate(&teacher, data, Split::Test, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = Optimizer::new(OptimizerKind::Adam, &teacher.store);
    let mut order: Vec<usize> = data.range(Split::Train).collect();
    let mut best = (f64::INFINITY, 0, teacher.store.clone());
    let mut train_mae = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut sum = 0.0;
        let batches = order.chunks(cfg.batch_size);
        let count = batches.len();
        for (bi, chunk) in batches.enumerate() {
            let input = data.batch_input(chunk, None)?;
            let mut tape = Tape::new();
            let bound = teacher.store.bind(&mut tape);
            let x = tape.constant(input.x);
            let pred = teacher.model.forward(&mut tape, &bound, x)?;
            let y = tape.constant(data.targets(chunk));
            let loss = crate::loss::predictive_loss(&mut tape, pred, y, crate::loss::BaseLoss::Mae)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: bi,
                    detail: format!("teacher loss {value}"),
                });
            }
            sum += value;
            tape.backward(loss)?;
            let mut grads = teacher.store.grads(&tape, &bound);
            clip_global_norm(&mut grads, 5.0);
            opt.step(&mut teacher.store, &grads, cfg.lr);
        }
        train_mae.push(sum / count as f64);
        let val = evaluate(&teacher, data, Split::Val, None)?.aggregate.mae;
        if val < best.0 {
            best = (val, epoch, teacher.store.clone());
        }
    }
    teacher.store = best.2;
    let test = evaluate(&teacher, data, Split::Test, None)?;
    let preds = teacher.predictions(data)?;
    Ok((
        teacher,
        preds,
        TeacherRun {
            train_mae,
            best_epoch: best.1,
            untrained_test,
            test,
        },
    ))
}
