use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{scale_tod, Dataset, StGraph, StSeries, DOW_SLOTS};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Ring,
    Grid,
}

impl FromStr for GraphKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ring" => Ok(GraphKind::Ring),
            "grid" => Ok(GraphKind::Grid),
            other => Err(Error::Config(format!("unknown graph kind {other:?} (expected ring|grid)"))),
        }
    }
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraphKind::Ring => "ring",
            GraphKind::Grid => "grid",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub nodes: usize,
    pub days: usize,
    pub steps_per_day: usize,
    pub features: usize,
    pub graph: GraphKind,
    /// Weight on the neighbours' previous values.
    pub rho: f64,
    /// Std of the additive Gaussian noise.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            nodes: 20,
            days: 30,
            steps_per_day: 48,
            features: 1,
            graph: GraphKind::Ring,
            rho: 0.5,
            sigma: 0.3,
            seed: 0,
        }
    }
}

pub fn build_adjacency(kind: GraphKind, n: usize) -> Tensor {
    let mut a = Tensor::zeros(&[n, n]);
    let d = a.data_mut();
    let mut link = |i: usize, j: usize| {
        if i != j {
            d[i * n + j] = 1.0;
            d[j * n + i] = 1.0;
        }
    };
    match kind {
        GraphKind::Ring => {
            for i in 0..n {
                link(i, (i + 1) % n);
            }
        }
        GraphKind::Grid => {
            let cols = (n as f64).sqrt().ceil() as usize;
            for i in 0..n {
                if (i + 1) % cols != 0 && i + 1 < n {
                    link(i, i + 1);
                }
                if i + cols < n {
                    link(i, i + cols);
                }
            }
        }
    }
    a
}

/// Generates a diffusion process on a ring or grid graph.
///
/// `x[s,n,f] = base[n,f](s) + rho * Σ_m W[n,m] x[s-1,m,f] + sigma * ε`, where
/// `base` is a node-specific daily sinusoid and `W` is the adjacency with
/// rows scaled to sum to one (no self loops).
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.nodes < 2 {
        return Err(Error::Config(format!("synthetic graph needs at least 2 nodes, got {}", cfg.nodes)));
    }
    if cfg.days < 1 || cfg.steps_per_day < 1 || cfg.features < 1 {
        return Err(Error::Config("days, steps_per_day and features must all be ≥ 1".into()));
    }
    if !(cfg.sigma >= 0.0) || !cfg.rho.is_finite() {
        return Err(Error::Config(format!("invalid rho {} / sigma {}", cfg.rho, cfg.sigma)));
    }
    let (n, f, spd) = (cfg.nodes, cfg.features, cfg.steps_per_day);
    let steps = cfg.days * spd;
    let adjacency = build_adjacency(cfg.graph, n);
    let degree: Vec<f64> = adjacency.data().chunks(n).map(|r| r.iter().sum()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut offset = vec![0.0; n * f];
    let mut amp = vec![0.0; n * f];
    let mut phase = vec![0.0; n * f];
    for k in 0..n * f {
        offset[k] = rng.random_range(3.0..6.0);
        amp[k] = rng.random_range(1.0..2.0);
        phase[k] = rng.random_range(0.0..2.0 * PI);
    }

    let plane = n * f;
    let mut x = vec![0.0; steps * plane];
    for s in 0..steps {
        let angle = 2.0 * PI * (s % spd) as f64 / spd as f64;
        for node in 0..n {
            for feat in 0..f {
                let k = node * f + feat;
                let mut v = offset[k] + amp[k] * (angle + phase[k]).sin();
                if s > 0 && cfg.rho != 0.0 && degree[node] > 0.0 {
                    let prev = &x[(s - 1) * plane..s * plane];
                    let row = &adjacency.data()[node * n..(node + 1) * n];
                    let mix: f64 = row
                        .iter()
                        .enumerate()
                        .map(|(m, w)| w * prev[m * f + feat])
                        .sum();
                    v += cfg.rho * mix / degree[node];
                }
                let eps: f64 = rng.sample(StandardNormal);
                if cfg.sigma > 0.0 {
                    v += cfg.sigma * eps;
                }
                x[s * plane + k] = v;
            }
        }
    }

    let tod = (0..steps).map(|s| scale_tod(s % spd, spd)).collect();
    let dow = (0..steps).map(|s| (s / spd) % DOW_SLOTS).collect();
    let series = StSeries::new(Tensor::new(vec![steps, n, f], x)?, spd, tod, dow)?;
    Dataset::new(StGraph::new(adjacency)?, series)
}
