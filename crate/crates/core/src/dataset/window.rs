use super::StSeries;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// One forecasting example: `history` steps of input followed directly by
/// `horizon` steps of target.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSample {
    /// `T × N × F`
    pub x: Tensor,
    /// `T' × N × F`
    pub y: Tensor,
    /// Time-of-day slot for each history step.
    pub tod: Vec<usize>,
    /// Day-of-week for each history step.
    pub dow: Vec<usize>,
    /// Series step at which `x` begins.
    pub window_start: usize,
}

pub fn window_count(total: usize, history: usize, horizon: usize) -> Result<usize> {
    if history == 0 || horizon == 0 {
        return Err(Error::Contract("history and horizon must be positive".into()));
    }
    if history + horizon > total {
        return Err(Error::Contract(format!(
            "history {history} + horizon {horizon} exceeds series length {total}"
        )));
    }
    Ok(total - history - horizon + 1)
}

/// All overlapping windows in chronological order; window `k` starts at step `k`.
pub fn make_windows(series: &StSeries, history: usize, horizon: usize) -> Result<Vec<WindowedSample>> {
    let count = window_count(series.num_steps(), history, horizon)?;
    let (n, f) = (series.num_nodes(), series.num_features());
    let plane = n * f;
    let data = series.features().data();
    (0..count)
        .map(|start| {
            let x = data[start * plane..(start + history) * plane].to_vec();
            let y = data[(start + history) * plane..(start + history + horizon) * plane].to_vec();
            Ok(WindowedSample {
                x: Tensor::new(vec![history, n, f], x)?,
                y: Tensor::new(vec![horizon, n, f], y)?,
                tod: series.tod_index()[start..start + history].to_vec(),
                dow: series.dow_index()[start..start + history].to_vec(),
                window_start: start,
            })
        })
        .collect()
}

/// Chronological 6:2:2 sizes: train and validation rounded down, remainder
/// to test.
pub fn split_counts(total: usize) -> Result<(usize, usize, usize)> {
    if total < 5 {
        return Err(Error::Contract(format!("need at least 5 samples to split, got {total}")));
    }
    let train = total * 6 / 10;
    let val = total * 2 / 10;
    Ok((train, val, total - train - val))
}

/// Contiguous train / validation / test slices, order preserved.
pub fn split<T>(samples: &[T]) -> Result<(&[T], &[T], &[T])> {
    let (train, val, _) = split_counts(samples.len())?;
    let (head, test) = samples.split_at(train + val);
    let (tr, va) = head.split_at(train);
    Ok((tr, va, test))
}
