//! MAE, RMSE and MAPE in original units, aggregate and per horizon step.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::dataset::Corruption;
use crate::error::{Error, Result};
use crate::pipeline::{PreparedData, Split};

/// Targets with `|y|` at or below this are left out of MAPE.
pub const MAPE_MASK: f64 = 1e-4;

pub fn mae(pred: &[f64], target: &[f64]) -> f64 {
    let mut acc = Accum::default();
    acc.push(pred, target);
    acc.metrics().mae
}

pub fn rmse(pred: &[f64], target: &[f64]) -> f64 {
    let mut acc = Accum::default();
    acc.push(pred, target);
    acc.metrics().rmse
}

/// Percent; `None` when every target is masked.
pub fn mape(pred: &[f64], target: &[f64]) -> Option<f64> {
    let mut acc = Accum::default();
    acc.push(pred, target);
    acc.metrics().mape
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub mape: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Accum {
    abs: f64,
    sq: f64,
    ape: f64,
    ape_n: usize,
    n: usize,
}

impl Accum {
    fn push(&mut self, pred: &[f64], target: &[f64]) {
        for (&p, &y) in pred.iter().zip(target) {
            let e = p - y;
            self.abs += e.abs();
            self.sq += e * e;
            if y.abs() > MAPE_MASK {
                self.ape += (e / y).abs();
                self.ape_n += 1;
            }
        }
        self.n += pred.len().min(target.len());
    }

    fn metrics(&self) -> Metrics {
        let n = self.n as f64;
        Metrics {
            mae: self.abs / n,
            rmse: (self.sq / n).sqrt(),
            mape: (self.ape_n > 0).then(|| 100.0 * self.ape / self.ape_n as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_windows: usize,
    pub aggregate: Metrics,
    pub per_horizon: Vec<Metrics>,
}

impl EvalReport {
    /// One row per horizon step: `horizon,mae,rmse,mape`, then `all,...`.
    pub fn to_csv(&self) -> String {
        let cell = |m: Option<f64>| m.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from("horizon,mae,rmse,mape\n");
        for (h, m) in self.per_horizon.iter().enumerate() {
            out.push_str(&format!("{},{},{},{}\n", h + 1, m.mae, m.rmse, cell(m.mape)));
        }
        let a = &self.aggregate;
        out.push_str(&format!("all,{},{},{}\n", a.mae, a.rmse, cell(a.mape)));
        out
    }
}

/// Accumulates `B×T'×N×F` batches in original units.
#[derive(Debug, Clone)]
pub struct ReportBuilder {
    total: Accum,
    per_horizon: Vec<Accum>,
    windows: usize,
}

impl ReportBuilder {
    pub fn new(horizon: usize) -> Self {
        ReportBuilder {
            total: Accum::default(),
            per_horizon: vec![Accum::default(); horizon],
            windows: 0,
        }
    }

    pub fn push(&mut self, pred: &Tensor, target: &Tensor) -> Result<()> {
        let s = target.shape();
        if pred.shape() != s || s.len() != 4 || s[1] != self.per_horizon.len() {
            return Err(Error::alignment(
                "prediction batch shape",
                format!("{:?} with horizon {}", s, self.per_horizon.len()),
                format!("{:?}", pred.shape()),
            ));
        }
        let plane = s[2] * s[3];
        for (chunk, (p, y)) in pred.data().chunks(plane).zip(target.data().chunks(plane)).enumerate() {
            self.per_horizon[chunk % s[1]].push(p, y);
            self.total.push(p, y);
        }
        self.windows += s[0];
        Ok(())
    }

    pub fn finish(&self) -> Result<EvalReport> {
        if self.windows == 0 {
            return Err(Error::Contract("evaluation split is empty".into()));
        }
        Ok(EvalReport {
            num_windows: self.windows,
            aggregate: self.total.metrics(),
            per_horizon: self.per_horizon.iter().map(Accum::metrics).collect(),
        })
    }
}

/// Anything that maps windows to normalized forecasts.
pub trait Forecaster {
    /// `B×T'×N×F` predictions in normalized units for windows `idx`.
    fn predict(&self, data: &PreparedData, idx: &[usize], corruption: Option<(Corruption, u64)>) -> Result<Tensor>;
}

pub const EVAL_BATCH: usize = 64;

/// Evaluates on `split`, inverting the normalizer before scoring. Corruption
/// touches inputs only.
pub fn evaluate(
    model: &impl Forecaster,
    data: &PreparedData,
    split: Split,
    corruption: Option<(Corruption, u64)>,
) -> Result<EvalReport> {
    let idx: Vec<usize> = data.range(split).collect();
    let mut builder = ReportBuilder::new(data.horizon);
    for chunk in idx.chunks(EVAL_BATCH) {
        let pred = data.normalizer.invert(&model.predict(data, chunk, corruption)?)?;
        builder.push(&pred, &data.raw_targets(chunk))?;
    }
    builder.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustPoint {
    pub mode: String,
    pub gamma: f64,
    pub report: EvalReport,
}

/// One report per `γ` on the test split.
pub fn robust_sweep(
    model: &impl Forecaster,
    data: &PreparedData,
    mode: &str,
    gammas: &[f64],
    seed: u64,
) -> Result<Vec<RobustPoint>> {
    gammas
        .iter()
        .map(|&g| {
            let c = Corruption::with_gamma(mode, g)?;
            Ok(RobustPoint {
                mode: mode.to_string(),
                gamma: g,
                report: evaluate(model, data, Split::Test, Some((c, seed)))?,
            })
        })
        .collect()
}

/// Parses `start:stop:step` (inclusive of `stop` up to rounding) or a comma list.
pub fn parse_gammas(list: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("bad gamma list {list:?} (use start:stop:step or a,b,c)"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    if list.contains(':') {
        let parts: Vec<&str> = list.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let (a, b, s) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(s > 0.0) || b < a {
            return Err(bad());
        }
        let n = ((b - a) / s + 1e-9).floor() as usize;
        // Rounded so 0:0.3:0.05 gives 0.15 rather than 0.15000000000000002.
        Ok((0..=n).map(|i| ((a + i as f64 * s) * 1e12).round() / 1e12).collect())
    } else {
        list.split(',').map(num).collect()
    }
}
