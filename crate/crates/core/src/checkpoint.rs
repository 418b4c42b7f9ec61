//! Trained student snapshot and its on-disk container.
//!
//! Layout: magic `STCK1\n`, u64 metadata length, UTF-8 JSON metadata, u64
//! tensor count, then per tensor: u64 name length, name, u64 rank, rank × u64
//! dims, f64 payload. Integers and floats are little-endian.

use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::codec::{checked_product, put_f64s, put_u64, Reader};
use crate::dataset::{Corruption, Normalizer};
use crate::error::{Error, Result};
use crate::metrics::Forecaster;
use crate::params::ParamStore;
use crate::pipeline::PreparedData;
use crate::prompt::{PromptSwitches, PromptTables};
use crate::student::{ModelDims, StudentModel};
use crate::trainer::TrainConfig;

const MAGIC: &[u8] = b"STCK1\n";
const FORMAT_VERSION: u32 = 1;
const NORM_MEAN: &str = "normalizer.mean";
const NORM_STD: &str = "normalizer.std";

/// Seed and stream positions of the shuffle and latent-noise generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub shuffle_word_pos: u128,
    pub noise_word_pos: u128,
}

impl RngState {
    pub fn capture(seed: u64, shuffle: &ChaCha8Rng, noise: &ChaCha8Rng) -> Self {
        RngState {
            seed,
            shuffle_word_pos: shuffle.get_word_pos(),
            noise_word_pos: noise.get_word_pos(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    format_version: u32,
    dims: ModelDims,
    config: TrainConfig,
    epoch: usize,
    rng: RngState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    run: Option<serde_json::Value>,
}

/// Student parameters with everything needed to run inference.
#[derive(Debug)]
pub struct Checkpoint {
    model: StudentModel,
    store: ParamStore,
    normalizer: Normalizer,
    config: TrainConfig,
    epoch: usize,
    rng: RngState,
    run: Option<serde_json::Value>,
    tables: OnceLock<PromptTables>,
}

impl Clone for Checkpoint {
    fn clone(&self) -> Self {
        Checkpoint {
            model: self.model.clone(),
            store: self.store.clone(),
            normalizer: self.normalizer.clone(),
            config: self.config.clone(),
            epoch: self.epoch,
            rng: self.rng,
            run: self.run.clone(),
            tables: OnceLock::new(),
        }
    }
}

impl Checkpoint {
    pub fn from_parts(
        model: StudentModel,
        store: ParamStore,
        normalizer: Normalizer,
        config: TrainConfig,
        epoch: usize,
        rng: RngState,
    ) -> Self {
        Checkpoint {
            model,
            store,
            normalizer,
            config,
            epoch,
            rng,
            run: None,
            tables: OnceLock::new(),
        }
    }

    pub fn model(&self) -> &StudentModel {
        &self.model
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn dims(&self) -> ModelDims {
        self.model.dims
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn rng_state(&self) -> &RngState {
        &self.rng
    }

    pub fn switches(&self) -> PromptSwitches {
        self.config.ablation.switches()
    }

    /// Resolved run configuration stored alongside the weights.
    pub fn run_config(&self) -> Option<&serde_json::Value> {
        self.run.as_ref()
    }

    pub fn set_run_config(&mut self, run: serde_json::Value) {
        self.run = Some(run);
    }

    pub fn check_alignment(&self, data: &PreparedData) -> Result<()> {
        let d = self.model.dims;
        let want = (d.nodes, d.history, d.horizon, d.features, d.steps_per_day);
        let got = (data.nodes, data.history, data.horizon, data.features, data.steps_per_day);
        if want != got {
            return Err(Error::alignment(
                "checkpoint vs dataset (N, T, T', F, steps_per_day)",
                format!("{want:?}"),
                format!("{got:?}"),
            ));
        }
        Ok(())
    }

    fn tables(&self) -> Result<&PromptTables> {
        if let Some(t) = self.tables.get() {
            return Ok(t);
        }
        let t = PromptTables::compute(&self.model.prompts, &self.store, self.switches())?;
        Ok(self.tables.get_or_init(|| t))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Meta {
            format_version: FORMAT_VERSION,
            dims: self.model.dims,
            config: self.config.clone(),
            epoch: self.epoch,
            rng: self.rng,
            run: self.run.clone(),
        };
        let meta = serde_json::to_vec(&meta).map_err(|e| Error::State(format!("checkpoint metadata: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u64(&mut out, meta.len() as u64);
        out.extend_from_slice(&meta);
        let mean = Tensor::from_slice(self.normalizer.mean());
        let std = Tensor::from_slice(self.normalizer.std());
        let tensors: Vec<(&str, &Tensor)> = self
            .store
            .iter()
            .chain([(NORM_MEAN, &mean), (NORM_STD, &std)])
            .collect();
        put_u64(&mut out, tensors.len() as u64);
        for (name, t) in tensors {
            put_u64(&mut out, name.len() as u64);
            out.extend_from_slice(name.as_bytes());
            put_u64(&mut out, t.ndim() as u64);
            for &d in t.shape() {
                put_u64(&mut out, d as u64);
            }
            put_f64s(&mut out, t.data());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let meta_len = r.usize("metadata length")?;
        let at = r.offset();
        let meta: Meta = serde_json::from_slice(r.take(meta_len, "metadata")?).map_err(|e| Error::Parse {
            offset: at + e.column() as u64,
            message: format!("checkpoint metadata: {e}"),
        })?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Parse {
                offset: at,
                message: format!("unsupported checkpoint version {}", meta.format_version),
            });
        }
        meta.config.validate()?;

        let mut store = ParamStore::new();
        let model = StudentModel::new(meta.dims, &mut store, &mut ChaCha8Rng::seed_from_u64(0));
        let mut seen = vec![false; store.len()];
        let (mut mean, mut std) = (None, None);
        let count = r.usize("tensor count")?;
        for _ in 0..count {
            let name_len = r.usize("name length")?;
            let name_at = r.offset();
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| Error::Parse {
                    offset: name_at,
                    message: "tensor name is not UTF-8".into(),
                })?
                .to_string();
            let rank = r.usize("rank")?;
            if rank > 8 {
                return Err(r.error(format!("tensor {name:?} has implausible rank {rank}")));
            }
            let shape = (0..rank).map(|_| r.usize("dim")).collect::<Result<Vec<_>>>()?;
            let n = checked_product(&shape, &r)?;
            let data = r.f64s(n, "tensor data")?;
            let tensor = Tensor::new(shape, data)?;
            match name.as_str() {
                NORM_MEAN => mean = Some(tensor.into_data()),
                NORM_STD => std = Some(tensor.into_data()),
                _ => {
                    let id = store
                        .find(&name)
                        .ok_or_else(|| Error::alignment("checkpoint tensor", "a known parameter name", &name))?;
                    if store.get(id).shape() != tensor.shape() {
                        return Err(Error::alignment(
                            format!("shape of {name}"),
                            format!("{:?}", store.get(id).shape()),
                            format!("{:?}", tensor.shape()),
                        ));
                    }
                    store.set(id, tensor)?;
                    seen[id.index()] = true;
                }
            }
        }
        r.finish()?;
        if let Some(missing) = store.ids().find(|id| !seen[id.index()]) {
            return Err(Error::alignment("checkpoint tensors", store.name(missing), "missing"));
        }
        let normalizer = match (mean, std) {
            (Some(m), Some(s)) => Normalizer::from_parts(m, s)?,
            _ => return Err(Error::alignment("checkpoint tensors", "normalizer mean and std", "missing")),
        };
        Ok(Checkpoint {
            model,
            store,
            normalizer,
            config: meta.config,
            epoch: meta.epoch,
            rng: meta.rng,
            run: meta.run,
            tables: OnceLock::new(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

impl Forecaster for Checkpoint {
    /// Eval mode: `z = μ`, prompt tables computed once and reused.
    fn predict(&self, data: &PreparedData, idx: &[usize], corruption: Option<(Corruption, u64)>) -> Result<Tensor> {
        let input = data.batch_input(idx, corruption)?;
        Ok(self.model.infer(&self.store, self.tables()?, &input, self.switches())?)
    }
}
