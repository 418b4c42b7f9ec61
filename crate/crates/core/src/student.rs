//! Variational bottleneck student: node-local MLP encoder to a Gaussian
//! latent, reparameterised sampling, and an MLP decoder to the forecast.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, TensorError, Var};
use crate::params::{Bound, Mlp, ParamId, ParamStore};
use crate::prompt::{CalendarIndex, PromptBank, PromptCache, PromptSwitches, PromptTables};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Upper bound on nodes per block in [`StudentModel::infer`].
pub const INFER_CHUNK: usize = 64;

/// Per-node Gaussian latent, each of shape `B×N×d_z`.
#[derive(Debug, Clone, Copy)]
pub struct LatentDist {
    pub mu: Var,
    /// Log-variance, clamped to `[LOGVAR_MIN, LOGVAR_MAX]`.
    pub logvar: Var,
}

/// Maps fused `B×T×N×C` features to the latent. Each node's `T×C` history is
/// flattened and encoded independently.
pub fn encode(tape: &mut Tape, bound: &Bound, encoder: &Mlp, fused: Var) -> Result<LatentDist, TensorError> {
    let s = tape.shape(fused).to_vec();
    if s.len() != 4 || s[1] * s[3] != encoder.in_dim() || !encoder.out_dim().is_multiple_of(2) {
        return Err(TensorError::Shape {
            op: "encode",
            lhs: s,
            rhs: vec![encoder.in_dim(), encoder.out_dim()],
        });
    }
    let (b, t, n, c) = (s[0], s[1], s[2], s[3]);
    let latent = encoder.out_dim() / 2;
    let per_node = tape.permute(fused, &[0, 2, 1, 3])?;
    let per_node = tape.reshape(per_node, &[b, n, t * c])?;
    let out = encoder.forward(tape, bound, per_node)?;
    let mu = tape.narrow(out, 2, 0, latent)?;
    let raw = tape.narrow(out, 2, latent, latent)?;
    let logvar = tape.clamp(raw, LOGVAR_MIN, LOGVAR_MAX);
    Ok(LatentDist { mu, logvar })
}

/// `z = μ + exp(logvar/2)·ε` when `eps` is given, else `z = μ`.
pub fn reparameterize(tape: &mut Tape, dist: &LatentDist, eps: Option<Var>) -> Result<Var, TensorError> {
    match eps {
        None => Ok(dist.mu),
        Some(eps) => {
            let half = tape.scale(dist.logvar, 0.5);
            let sigma = tape.exp(half);
            let noise = tape.mul(sigma, eps)?;
            tape.add(dist.mu, noise)
        }
    }
}

/// Maps `B×N×d_z` latents to a `B×T'×N×F` forecast.
pub fn decode(
    tape: &mut Tape,
    bound: &Bound,
    decoder: &Mlp,
    z: Var,
    horizon: usize,
    features: usize,
) -> Result<Var, TensorError> {
    let s = tape.shape(z).to_vec();
    if s.len() != 3 || s[2] != decoder.in_dim() || decoder.out_dim() != horizon * features {
        return Err(TensorError::Shape {
            op: "decode",
            lhs: s,
            rhs: vec![decoder.in_dim(), decoder.out_dim()],
        });
    }
    let (b, n) = (s[0], s[1]);
    let out = decoder.forward(tape, bound, z)?;
    let out = tape.reshape(out, &[b, n, horizon, features])?;
    tape.permute(out, &[0, 2, 1, 3])
}

/// Mean over all latent coordinates of `½(−logvar + exp(logvar) + μ² − 1)`,
/// the KL divergence from `N(μ, σ²)` to `N(0, 1)`.
pub fn kl_divergence(tape: &mut Tape, dist: &LatentDist) -> Result<Var, TensorError> {
    let var = tape.exp(dist.logvar);
    let mu2 = tape.square(dist.mu);
    let a = tape.add(var, mu2)?;
    let b = tape.sub(a, dist.logvar)?;
    let c = tape.add_scalar(b, -1.0);
    let m = tape.mean_all(c);
    Ok(tape.scale(m, 0.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub nodes: usize,
    pub history: usize,
    pub horizon: usize,
    pub features: usize,
    pub steps_per_day: usize,
    /// Prompt / hidden width `d`.
    pub dim: usize,
    pub latent: usize,
}

/// Prompt bank, encoder and decoder sharing one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct StudentModel {
    pub dims: ModelDims,
    pub prompts: PromptBank,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

/// Batched student input.
#[derive(Debug, Clone)]
pub struct BatchInput {
    /// `B×T×N×F`, normalized.
    pub x: Tensor,
    pub calendar: CalendarIndex,
}

#[derive(Debug, Clone, Copy)]
pub struct StudentOutput {
    /// `B×T'×N×F`, normalized units.
    pub prediction: Var,
    pub latent: LatentDist,
}

impl StudentModel {
    /// Registers all parameters in `store` in a fixed order.
    pub fn new(dims: ModelDims, store: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let d = dims.dim;
        let prompts = PromptBank::new(store, dims.nodes, dims.steps_per_day, dims.features, d, rng);
        let encoder = Mlp::new(store, "encoder", &[dims.history * 5 * d, d, d, 2 * dims.latent], rng);
        let decoder = Mlp::new(store, "decoder", &[dims.latent, d, d, dims.horizon * dims.features], rng);
        StudentModel {
            dims,
            prompts,
            encoder,
            decoder,
        }
    }

    pub fn latent_ids(&self) -> Vec<ParamId> {
        self.encoder.ids()
    }

    /// Full forward pass. `eps` (shape `B×N×d_z`) selects the sampled path;
    /// `None` gives the deterministic `z = μ` path.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        input: &BatchInput,
        switches: PromptSwitches,
        eps: Option<Tensor>,
        cache: Option<&PromptCache>,
    ) -> Result<StudentOutput, TensorError> {
        let x = tape.constant(input.x.clone());
        self.forward_var(tape, bound, x, &input.calendar, switches, eps, cache)
    }

    /// [`StudentModel::forward`] on an input already on the tape.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_var(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        calendar: &CalendarIndex,
        switches: PromptSwitches,
        eps: Option<Tensor>,
        cache: Option<&PromptCache>,
    ) -> Result<StudentOutput, TensorError> {
        let fused = self.prompts.fuse(tape, bound, x, calendar, switches, cache)?;
        let latent = encode(tape, bound, &self.encoder, fused)?;
        let eps = match eps {
            Some(e) => {
                let want = tape.shape(latent.mu).to_vec();
                if e.shape() != want.as_slice() {
                    return Err(TensorError::Shape {
                        op: "reparameterize",
                        lhs: e.shape().to_vec(),
                        rhs: want,
                    });
                }
                Some(tape.constant(e))
            }
            None => None,
        };
        let z = reparameterize(tape, &latent, eps)?;
        let prediction = decode(tape, bound, &self.decoder, z, self.dims.horizon, self.dims.features)?;
        Ok(StudentOutput { prediction, latent })
    }

    /// Deterministic `z = μ` forecast from fixed prompt tables, `B×T'×N×F`.
    /// Everything after the prompt tables is node-local, so nodes are run in
    /// near-equal blocks of at most [`INFER_CHUNK`] to keep intermediates cache-sized.
    pub fn infer(
        &self,
        store: &ParamStore,
        tables: &PromptTables,
        input: &BatchInput,
        switches: PromptSwitches,
    ) -> Result<Tensor, TensorError> {
        let s = input.x.shape();
        if s.len() != 4 || s[2] != self.dims.nodes {
            return Err(TensorError::Shape {
                op: "infer",
                lhs: s.to_vec(),
                rhs: vec![self.dims.nodes],
            });
        }
        let (b, n) = (s[0], s[2]);
        let (h, f) = (self.dims.horizon, self.dims.features);
        let mut out = vec![0.0; b * h * n * f];
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let step = n.div_ceil(n.div_ceil(INFER_CHUNK).max(1)).max(1);
        for lo in (0..n).step_by(step) {
            let len = step.min(n - lo);
            let (cache, calendar) = tables.bind(&mut tape, &input.calendar, lo..lo + len)?;
            let x = tape.constant(input.x.narrow(2, lo, len)?);
            let pred = self.forward_var(&mut tape, &bound, x, &calendar, switches, None, Some(&cache))?;
            let pred = tape.value(pred.prediction).data();
            // pred is B×T'×len×F; scatter rows into the full node axis
            for (row, chunk) in pred.chunks_exact(len * f).enumerate() {
                let at = (row * n + lo) * f;
                out[at..at + len * f].copy_from_slice(chunk);
            }
        }
        Tensor::new(vec![b, h, n, f], out)
    }

    pub fn latent_shape(&self, batch: usize) -> [usize; 3] {
        [batch, self.dims.nodes, self.dims.latent]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_all(store: &mut ParamStore, ids: &[ParamId]) {
        for &id in ids {
            let s = store.get(id).shape().to_vec();
            store.set(id, Tensor::zeros(&s)).unwrap();
        }
    }

    #[test]
    fn zero_encoder_gives_standard_latent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let enc = Mlp::new(&mut store, "e", &[4, 3, 4], &mut rng);
        zero_all(&mut store, &enc.ids());
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let fused = tape.constant(Tensor::full(&[1, 2, 3, 2], 0.9));
        let dist = encode(&mut tape, &bound, &enc, fused).unwrap();
        assert_eq!(tape.shape(dist.mu), &[1, 3, 2]);
        assert!(tape.value(dist.mu).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(dist.logvar).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_encoder_by_hand() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let enc = Mlp::new(&mut store, "e", &[2, 2], &mut rng);
        let l = enc.layers[0];
        store.set(l.weight, Tensor::new(vec![2, 2], vec![1.0, 2.0, -3.0, 0.5]).unwrap()).unwrap();
        store.set(l.bias, Tensor::from_slice(&[0.25, -1.0])).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        // T=1, N=1, C=2, input [2, 4]
        let fused = tape.constant(Tensor::new(vec![1, 1, 1, 2], vec![2.0, 4.0]).unwrap());
        let dist = encode(&mut tape, &bound, &enc, fused).unwrap();
        // mu = 2*1 + 4*(-3) + 0.25 = -9.75 ; logvar = 2*2 + 4*0.5 - 1 = 5
        assert_eq!(tape.value(dist.mu).data(), &[-9.75]);
        assert_eq!(tape.value(dist.logvar).data(), &[5.0]);
    }

    #[test]
    fn identical_nodes_identical_latents() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let enc = Mlp::new(&mut store, "e", &[6, 5, 4], &mut rng);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let row = [0.1, -0.4, 0.3];
        let data: Vec<f64> = (0..2).flat_map(|_| row.iter().chain(row.iter()).copied()).collect();
        // B=1, T=2, N=2, C=3 with both nodes equal at each step
        let fused = tape.constant(Tensor::new(vec![1, 2, 2, 3], data).unwrap());
        let dist = encode(&mut tape, &bound, &enc, fused).unwrap();
        let mu = tape.value(dist.mu).data();
        assert_eq!(mu[..2], mu[2..]);
    }

    #[test]
    fn chunked_infer_matches_forward() {
        let dims = ModelDims {
            nodes: INFER_CHUNK * 2 + 5,
            history: 3,
            horizon: 2,
            features: 2,
            steps_per_day: 24,
            dim: 4,
            latent: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let model = StudentModel::new(dims, &mut store, &mut rng);
        let x = Tensor::new(
            vec![2, 3, dims.nodes, 2],
            (0..2 * 3 * dims.nodes * 2).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let mut calendar = CalendarIndex::default();
        calendar.push_window(&[0, 1, 2], &[0, 0, 0], 22, 24);
        calendar.push_window(&[3, 4, 5], &[1, 1, 1], 5, 24);
        let input = BatchInput { x, calendar };
        let switches = PromptSwitches::default();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let full = model.forward(&mut tape, &bound, &input, switches, None, None).unwrap();
        let tables = PromptTables::compute(&model.prompts, &store, switches).unwrap();
        let fast = model.infer(&store, &tables, &input, switches).unwrap();
        assert_eq!(fast.shape(), tape.shape(full.prediction));
        for (a, b) in fast.data().iter().zip(tape.value(full.prediction).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn reparameterize_paths() {
        let mut tape = Tape::new();
        let mu = tape.constant(Tensor::from_slice(&[0.0, 2.0]));
        let lv = tape.constant(Tensor::from_slice(&[0.0, -10.0]));
        let dist = LatentDist { mu, logvar: lv };
        let zero = tape.constant(Tensor::zeros(&[2]));
        let z0 = reparameterize(&mut tape, &dist, Some(zero)).unwrap();
        assert_eq!(tape.value(z0).data(), &[0.0, 2.0]);
        let eps = tape.constant(Tensor::from_slice(&[1.5, 1.0]));
        let z = reparameterize(&mut tape, &dist, Some(eps)).unwrap();
        assert_eq!(tape.value(z).data()[0], 1.5);
        assert!((tape.value(z).data()[1] - 2.0).abs() <= (-5f64).exp() + 1e-15);
        let det = reparameterize(&mut tape, &dist, None).unwrap();
        assert_eq!(det, mu);
    }

    #[test]
    fn clamp_bounds_logvar() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let enc = Mlp::new(&mut store, "e", &[1, 2], &mut rng);
        let l = enc.layers[0];
        store.set(l.weight, Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap()).unwrap();
        store.set(l.bias, Tensor::zeros(&[2])).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let fused = tape.constant(Tensor::new(vec![1, 1, 2, 1], vec![-1e6, 1e6]).unwrap());
        let dist = encode(&mut tape, &bound, &enc, fused).unwrap();
        assert_eq!(tape.value(dist.logvar).data(), &[-10.0, 10.0]);
    }

    #[test]
    fn zero_decoder_outputs_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let dec = Mlp::new(&mut store, "d", &[3, 2], &mut rng);
        let l = dec.layers[0];
        store.set(l.weight, Tensor::zeros(&[3, 2])).unwrap();
        store.set(l.bias, Tensor::from_slice(&[0.5, -0.5])).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let z = tape.constant(Tensor::full(&[1, 4, 3], 7.0));
        // T'=2, F=1 → output 1×2×4×1
        let y = decode(&mut tape, &bound, &dec, z, 2, 1).unwrap();
        assert_eq!(tape.shape(y), &[1, 2, 4, 1]);
        assert_eq!(&tape.value(y).data()[..4], &[0.5; 4]);
        assert_eq!(&tape.value(y).data()[4..], &[-0.5; 4]);
    }

    #[test]
    fn linear_decoder_by_hand() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let dec = Mlp::new(&mut store, "d", &[1, 1], &mut rng);
        let l = dec.layers[0];
        store.set(l.weight, Tensor::new(vec![1, 1], vec![-2.0]).unwrap()).unwrap();
        store.set(l.bias, Tensor::from_slice(&[0.5])).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let z = tape.constant(Tensor::new(vec![1, 3, 1], vec![1.0, 0.0, -3.0]).unwrap());
        let y = decode(&mut tape, &bound, &dec, z, 1, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[-1.5, 0.5, 6.5]);
    }

    #[test]
    fn kl_closed_form_points() {
        let cases = [(0.0, 0.0, 0.0), (1.0, 0.0, 0.5), (0.0, 1.0, 0.5 * (std::f64::consts::E - 2.0))];
        for (mu, lv, want) in cases {
            let mut tape = Tape::new();
            let mu = tape.constant(Tensor::from_slice(&[mu]));
            let logvar = tape.constant(Tensor::from_slice(&[lv]));
            let kl = kl_divergence(&mut tape, &LatentDist { mu, logvar }).unwrap();
            assert_eq!(tape.value(kl).item(), want);
        }
    }
}
