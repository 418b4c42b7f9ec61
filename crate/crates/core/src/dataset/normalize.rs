use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const STD_FLOOR: f64 = 1e-8;

/// Per-feature z-score transform over the last axis.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Normalizer {
    /// Fits mean and population std per feature over every row of `x`
    /// (any shape whose last axis is the feature axis).
    pub fn fit(x: &Tensor) -> Result<Self> {
        let f = *x.shape().last().ok_or_else(|| Error::Contract("cannot fit on a scalar".into()))?;
        let rows = x.numel() / f.max(1);
        if rows == 0 || f == 0 {
            return Err(Error::Contract("cannot fit normalizer on empty data".into()));
        }
        let mut mean = vec![0.0; f];
        for row in x.data().chunks_exact(f) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; f];
        for row in x.data().chunks_exact(f) {
            for ((acc, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|v| (v / rows as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(Normalizer { mean, std })
    }

    pub fn from_parts(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() || std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Contract("normalizer needs matching mean/std with std > 0".into()));
        }
        Ok(Normalizer { mean, std })
    }

    pub fn is_fit(&self) -> bool {
        !self.mean.is_empty()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if !self.is_fit() {
            return Err(Error::State("normalizer used before fit".into()));
        }
        if x.shape().last() != Some(&self.mean.len()) {
            return Err(Error::alignment("feature count", self.mean.len(), format!("{:?}", x.shape())));
        }
        Ok(())
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let mut out = x.clone();
        for row in out.data_mut().chunks_exact_mut(self.mean.len()) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    pub fn invert(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let mut out = x.clone();
        for row in out.data_mut().chunks_exact_mut(self.mean.len()) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unfit_is_a_state_error() {
        let n = Normalizer::default();
        assert!(matches!(n.apply(&Tensor::zeros(&[2, 1])), Err(Error::State(_))));
    }

    #[test]
    fn constant_series_floors_std() {
        let x = Tensor::full(&[5, 3, 1], 4.0);
        let n = Normalizer::fit(&x).unwrap();
        assert_eq!(n.std(), &[1e-8]);
        assert!(n.apply(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn round_trip_and_moments() {
        let data: Vec<f64> = (0..40).map(|i| ((i * 37) % 11) as f64 * 0.7 - 2.0 + i as f64).collect();
        let x = Tensor::new(vec![10, 2, 2], data).unwrap();
        let n = Normalizer::fit(&x).unwrap();
        let z = n.apply(&x).unwrap();
        let back = n.invert(&z).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-10);
        }
        // recompute moments per feature
        for feat in 0..2 {
            let col: Vec<f64> = z.data().iter().skip(feat).step_by(2).copied().collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let v = col.iter().map(|c| (c - m).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(m.abs() < 1e-8);
            assert!((v.sqrt() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn feature_count_checked() {
        let n = Normalizer::fit(&Tensor::zeros(&[3, 2])).unwrap();
        assert!(n.apply(&Tensor::zeros(&[3, 3])).is_err());
    }
}
