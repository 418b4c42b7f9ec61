//! Spatio-temporal graph data: storage, synthesis, windowing, splitting,
//! normalization and input corruption.

mod corrupt;
mod io;
mod normalize;
mod synth;
mod window;

pub use corrupt::{corrupt_missing, corrupt_noise, Corruption};
pub use io::{load_dataset, write_dataset};
pub use normalize::Normalizer;
pub use synth::{build_adjacency, synth_generate, GraphKind, SynthConfig};
pub use window::{make_windows, split, split_counts, window_count, WindowedSample};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Rows of the time-of-day prompt table (5-minute slots).
pub const TOD_SLOTS: usize = 288;
/// Rows of the day-of-week prompt table.
pub const DOW_SLOTS: usize = 7;

/// Sensor graph with a dense non-negative adjacency matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StGraph {
    adjacency: Tensor,
}

impl StGraph {
    pub fn new(adjacency: Tensor) -> Result<Self> {
        let s = adjacency.shape();
        if s.len() != 2 || s[0] != s[1] || s[0] == 0 {
            return Err(Error::Contract(format!("adjacency must be N×N with N ≥ 1, got {s:?}")));
        }
        if let Some(v) = adjacency.data().iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Contract(format!("adjacency entries must be finite and non-negative, found {v}")));
        }
        Ok(StGraph { adjacency })
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.shape()[0]
    }

    pub fn adjacency(&self) -> &Tensor {
        &self.adjacency
    }

    /// Adjacency with self loops added, each row scaled to sum to one.
    pub fn row_normalized_with_self_loops(&self) -> Tensor {
        let n = self.num_nodes();
        let mut a = self.adjacency.clone();
        let d = a.data_mut();
        for i in 0..n {
            d[i * n + i] += 1.0;
            let row = &mut d[i * n..(i + 1) * n];
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        a
    }
}

/// Feature series `T_total × N × F` with per-step calendar indices.
#[derive(Debug, Clone, PartialEq)]
pub struct StSeries {
    features: Tensor,
    steps_per_day: usize,
    tod_index: Vec<usize>,
    dow_index: Vec<usize>,
    flags: u64,
}

impl StSeries {
    pub fn new(features: Tensor, steps_per_day: usize, tod_index: Vec<usize>, dow_index: Vec<usize>) -> Result<Self> {
        Self::with_flags(features, steps_per_day, tod_index, dow_index, 0)
    }

    pub fn with_flags(
        features: Tensor,
        steps_per_day: usize,
        tod_index: Vec<usize>,
        dow_index: Vec<usize>,
        flags: u64,
    ) -> Result<Self> {
        if features.ndim() != 3 {
            return Err(Error::Contract(format!("features must be T×N×F, got {:?}", features.shape())));
        }
        let steps = features.shape()[0];
        if tod_index.len() != steps || dow_index.len() != steps {
            return Err(Error::alignment(
                "calendar index length",
                steps,
                format!("tod {} / dow {}", tod_index.len(), dow_index.len()),
            ));
        }
        if steps_per_day == 0 {
            return Err(Error::Contract("steps_per_day must be positive".into()));
        }
        if let Some(&bad) = tod_index.iter().find(|&&v| v >= TOD_SLOTS) {
            return Err(Error::Contract(format!("time-of-day index {bad} outside [0, {TOD_SLOTS})")));
        }
        if let Some(&bad) = dow_index.iter().find(|&&v| v >= DOW_SLOTS) {
            return Err(Error::Contract(format!("day-of-week index {bad} outside [0, {DOW_SLOTS})")));
        }
        Ok(StSeries {
            features,
            steps_per_day,
            tod_index,
            dow_index,
            flags,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn num_steps(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn num_nodes(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn num_features(&self) -> usize {
        self.features.shape()[2]
    }

    pub fn steps_per_day(&self) -> usize {
        self.steps_per_day
    }

    pub fn tod_index(&self) -> &[usize] {
        &self.tod_index
    }

    pub fn dow_index(&self) -> &[usize] {
        &self.dow_index
    }

    pub fn flags(&self) -> u64 {
        self.flags
    }

    /// Same calendar, different feature values.
    pub fn with_features(&self, features: Tensor) -> Result<Self> {
        if features.shape() != self.features.shape() {
            return Err(Error::alignment(
                "feature shape",
                format!("{:?}", self.features.shape()),
                format!("{:?}", features.shape()),
            ));
        }
        Ok(StSeries {
            features,
            ..self.clone()
        })
    }
}

/// Maps a within-day step onto the fixed 288-slot time-of-day table.
pub fn scale_tod(step_in_day: usize, steps_per_day: usize) -> usize {
    step_in_day * TOD_SLOTS / steps_per_day
}

/// A graph plus its series, checked for node-count agreement.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graph: StGraph,
    pub series: StSeries,
}

impl Dataset {
    pub fn new(graph: StGraph, series: StSeries) -> Result<Self> {
        if graph.num_nodes() != series.num_nodes() {
            return Err(Error::alignment("node count", graph.num_nodes(), series.num_nodes()));
        }
        Ok(Dataset { graph, series })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tod_scaling() {
        assert_eq!(scale_tod(0, 48), 0);
        assert_eq!(scale_tod(1, 48), 6);
        assert_eq!(scale_tod(47, 48), 282);
        assert_eq!(scale_tod(287, 288), 287);
        assert_eq!(scale_tod(1, 1000), 0);
    }

    #[test]
    fn rejects_negative_adjacency() {
        let a = Tensor::new(vec![2, 2], vec![0., -1., 1., 0.]).unwrap();
        assert!(StGraph::new(a).is_err());
    }

    #[test]
    fn rejects_out_of_range_calendar() {
        let f = Tensor::zeros(&[2, 1, 1]);
        assert!(StSeries::new(f.clone(), 288, vec![0, 288], vec![0, 0]).is_err());
        assert!(StSeries::new(f.clone(), 288, vec![0, 1], vec![0, 7]).is_err());
        assert!(StSeries::new(f, 288, vec![0], vec![0, 0]).is_err());
    }

    #[test]
    fn row_normalization() {
        let a = Tensor::new(vec![2, 2], vec![0., 3., 1., 0.]).unwrap();
        let g = StGraph::new(a).unwrap();
        assert_eq!(g.row_normalized_with_self_loops().data(), &[0.25, 0.75, 0.5, 0.5]);
    }
}
