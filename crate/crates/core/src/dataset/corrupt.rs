use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Contract(format!("corruption coefficient {gamma} outside [0, 1]")));
    }
    Ok(())
}

/// `(1 - γ)·x + γ·ε`, ε standard normal drawn in element order from `seed`.
pub fn corrupt_noise(x: &Tensor, gamma: f64, seed: u64) -> Result<Tensor> {
    check_gamma(gamma)?;
    if gamma == 0.0 {
        return Ok(x.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = x.clone();
    for v in out.data_mut() {
        let eps: f64 = rng.sample(StandardNormal);
        *v = (1.0 - gamma) * *v + gamma * eps;
    }
    Ok(out)
}

/// Zeroes exactly `round(γ·numel)` entries chosen uniformly without replacement.
pub fn corrupt_missing(x: &Tensor, gamma: f64, seed: u64) -> Result<Tensor> {
    check_gamma(gamma)?;
    let count = (gamma * x.numel() as f64).round() as usize;
    if count == 0 {
        return Ok(x.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = x.clone();
    let data = out.data_mut();
    for i in rand::seq::index::sample(&mut rng, data.len(), count) {
        data[i] = 0.0;
    }
    Ok(out)
}

/// Input corruption applied at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Corruption {
    /// Gaussian mixing on normalized inputs.
    Noise { gamma: f64 },
    /// Zeroing of raw inputs.
    Missing { gamma: f64 },
}

impl Corruption {
    pub fn gamma(&self) -> f64 {
        match *self {
            Corruption::Noise { gamma } | Corruption::Missing { gamma } => gamma,
        }
    }

    pub fn mode(&self) -> &'static str {
        match self {
            Corruption::Noise { .. } => "noise",
            Corruption::Missing { .. } => "missing",
        }
    }

    pub fn with_gamma(mode: &str, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        match mode {
            "noise" => Ok(Corruption::Noise { gamma }),
            "missing" => Ok(Corruption::Missing { gamma }),
            other => Err(Error::Config(format!("unknown corruption mode {other:?} (expected noise|missing)"))),
        }
    }
}

impl FromStr for Corruption {
    type Err = Error;

    /// Parses `mode:gamma`, e.g. `noise:0.3`.
    fn from_str(s: &str) -> Result<Self> {
        let (mode, gamma) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("corruption {s:?} must look like mode:gamma")))?;
        let gamma: f64 = gamma
            .parse()
            .map_err(|_| Error::Config(format!("bad corruption coefficient {gamma:?}")))?;
        Corruption::with_gamma(mode, gamma)
    }
}

impl fmt::Display for Corruption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.mode(), self.gamma())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tensor {
        Tensor::new(vec![4, 2, 1], vec![1., -2., 3., -0.0, 5., 6., 7., 8.]).unwrap()
    }

    #[test]
    fn zero_gamma_is_bit_identity() {
        let x = sample();
        let a = corrupt_noise(&x, 0.0, 3).unwrap();
        let b = corrupt_missing(&x, 0.0, 3).unwrap();
        for t in [a, b] {
            assert!(t.data().iter().zip(x.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn full_noise_ignores_input() {
        let a = corrupt_noise(&sample(), 1.0, 9).unwrap();
        let b = corrupt_noise(&Tensor::full(&[4, 2, 1], 100.0), 1.0, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn half_noise_replays_rng() {
        let x = sample();
        let got = corrupt_noise(&x, 0.5, 42).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for (g, v) in got.data().iter().zip(x.data()) {
            let e: f64 = rng.sample(StandardNormal);
            assert_eq!(*g, 0.5 * v + 0.5 * e);
        }
    }

    #[test]
    fn missing_counts() {
        let x = Tensor::full(&[4, 2, 1], 1.0);
        let m = corrupt_missing(&x, 0.25, 5).unwrap();
        assert_eq!(m.data().iter().filter(|&&v| v == 0.0).count(), 2);
        let all = corrupt_missing(&x, 1.0, 5).unwrap();
        assert!(all.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gamma_range_checked() {
        assert!(corrupt_noise(&sample(), 1.5, 0).is_err());
        assert!(corrupt_missing(&sample(), -0.1, 0).is_err());
        assert!("noise:2".parse::<Corruption>().is_err());
        assert_eq!("missing:0.25".parse::<Corruption>().unwrap(), Corruption::Missing { gamma: 0.25 });
    }
}
