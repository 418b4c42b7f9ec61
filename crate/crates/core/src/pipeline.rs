//! Windowed, normalized, split view of a dataset, plus batch assembly.

use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::dataset::{corrupt_missing, corrupt_noise, make_windows, split_counts, Corruption, Dataset, Normalizer, WindowedSample};
use crate::error::{Error, Result};
use crate::prompt::CalendarIndex;
use crate::student::BatchInput;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "all" => Ok(Split::All),
            other => Err(Error::Config(format!("unknown split {other:?} (expected train|val|test|all)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub history: usize,
    pub horizon: usize,
    pub nodes: usize,
    pub features: usize,
    pub steps_per_day: usize,
    pub normalizer: Normalizer,
    raw: Vec<WindowedSample>,
    norm: Vec<WindowedSample>,
    counts: (usize, usize, usize),
}

impl PreparedData {
    /// Windows the series, splits 6:2:2 and fits the normalizer on the steps
    /// covered by training windows.
    pub fn new(data: &Dataset, history: usize, horizon: usize) -> Result<Self> {
        let raw = make_windows(&data.series, history, horizon)?;
        let (train, _, _) = split_counts(raw.len())?;
        let plane = data.series.num_nodes() * data.series.num_features();
        let covered = train - 1 + history + horizon;
        let train_steps = Tensor::new(
            vec![covered, data.series.num_nodes(), data.series.num_features()],
            data.series.features().data()[..covered * plane].to_vec(),
        )?;
        let normalizer = Normalizer::fit(&train_steps)?;
        Self::build(data, history, horizon, raw, normalizer)
    }

    /// Same windows, with a normalizer fitted elsewhere (e.g. from a checkpoint).
    pub fn with_normalizer(data: &Dataset, history: usize, horizon: usize, normalizer: Normalizer) -> Result<Self> {
        let raw = make_windows(&data.series, history, horizon)?;
        Self::build(data, history, horizon, raw, normalizer)
    }

    fn build(
        data: &Dataset,
        history: usize,
        horizon: usize,
        raw: Vec<WindowedSample>,
        normalizer: Normalizer,
    ) -> Result<Self> {
        let counts = split_counts(raw.len())?;
        let norm = raw
            .iter()
            .map(|w| {
                Ok(WindowedSample {
                    x: normalizer.apply(&w.x)?,
                    y: normalizer.apply(&w.y)?,
                    ..w.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedData {
            history,
            horizon,
            nodes: data.series.num_nodes(),
            features: data.series.num_features(),
            steps_per_day: data.series.steps_per_day(),
            normalizer,
            raw,
            norm,
            counts,
        })
    }

    pub fn num_windows(&self) -> usize {
        self.raw.len()
    }

    pub fn split_sizes(&self) -> (usize, usize, usize) {
        self.counts
    }

    pub fn range(&self, split: Split) -> Range<usize> {
        let (tr, va, te) = self.counts;
        match split {
            Split::Train => 0..tr,
            Split::Val => tr..tr + va,
            Split::Test => tr + va..tr + va + te,
            Split::All => 0..self.raw.len(),
        }
    }

    pub fn raw_window(&self, i: usize) -> &WindowedSample {
        &self.raw[i]
    }

    pub fn window(&self, i: usize) -> &WindowedSample {
        &self.norm[i]
    }

    /// Normalized inputs for windows `idx`, optionally corrupted. Each window
    /// draws its corruption from `seed` mixed with its index, so results do
    /// not depend on batching.
    pub fn batch_input(&self, idx: &[usize], corruption: Option<(Corruption, u64)>) -> Result<BatchInput> {
        let mut x = Vec::with_capacity(idx.len() * self.history * self.nodes * self.features);
        let mut calendar = CalendarIndex::default();
        for &i in idx {
            let w = &self.norm[i];
            let xi = match corruption {
                None => None,
                Some((c, seed)) => {
                    let s = window_seed(seed, i);
                    Some(match c {
                        Corruption::Noise { gamma } => corrupt_noise(&w.x, gamma, s)?,
                        Corruption::Missing { gamma } => {
                            self.normalizer.apply(&corrupt_missing(&self.raw[i].x, gamma, s)?)?
                        }
                    })
                }
            };
            x.extend_from_slice(xi.as_ref().unwrap_or(&w.x).data());
            calendar.push_window(&w.tod, &w.dow, w.window_start, self.steps_per_day);
        }
        Ok(BatchInput {
            x: Tensor::new(vec![idx.len(), self.history, self.nodes, self.features], x)?,
            calendar,
        })
    }

    /// Stacked normalized targets `B×T'×N×F`.
    pub fn targets(&self, idx: &[usize]) -> Tensor {
        stack(idx.iter().map(|&i| &self.norm[i].y), self.target_shape(idx.len()))
    }

    /// Stacked original-unit targets.
    pub fn raw_targets(&self, idx: &[usize]) -> Tensor {
        stack(idx.iter().map(|&i| &self.raw[i].y), self.target_shape(idx.len()))
    }

    fn target_shape(&self, b: usize) -> Vec<usize> {
        vec![b, self.horizon, self.nodes, self.features]
    }
}

fn stack<'a>(items: impl Iterator<Item = &'a Tensor>, shape: Vec<usize>) -> Tensor {
    let mut data = Vec::with_capacity(shape.iter().product());
    for t in items {
        data.extend_from_slice(t.data());
    }
    Tensor::new(shape, data).expect("stacked shape")
}

pub(crate) fn window_seed(seed: u64, window: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(window as u64)
}
