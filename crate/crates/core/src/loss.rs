//! Predictive loss, teacher-bounded distillation loss and the total objective.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, TensorError, Var};
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BaseLoss {
    #[default]
    Mae,
    Mse,
}

impl BaseLoss {
    /// Loss on plain values, used for the detached gate.
    pub fn eval(self, pred: &[f64], target: &[f64]) -> f64 {
        let n = pred.len() as f64;
        match self {
            BaseLoss::Mae => pred.iter().zip(target).map(|(a, b)| (a - b).abs()).sum::<f64>() / n,
            BaseLoss::Mse => pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n,
        }
    }
}

impl FromStr for BaseLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "mae" => Ok(BaseLoss::Mae),
            "mse" => Ok(BaseLoss::Mse),
            other => Err(Error::Config(format!("unknown base loss {other:?} (expected mae|mse)"))),
        }
    }
}

impl fmt::Display for BaseLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaseLoss::Mae => "mae",
            BaseLoss::Mse => "mse",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Distillation weight λ.
    pub lambda: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Teacher bound threshold δ.
    pub delta: f64,
    pub base_loss: BaseLoss,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.3,
            beta1: 1e-3,
            beta2: 1e-3,
            delta: 0.1,
            base_loss: BaseLoss::Mae,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda) || !ok(self.beta1) || !ok(self.beta2) || !ok(self.delta) {
            return Err(Error::Config(format!(
                "lambda, beta1, beta2 and delta must be finite and ≥ 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

fn same_shape(tape: &Tape, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
    if tape.shape(a) != tape.shape(b) {
        return Err(TensorError::Shape {
            op,
            lhs: tape.shape(a).to_vec(),
            rhs: tape.shape(b).to_vec(),
        });
    }
    Ok(())
}

/// Mean absolute or mean squared error.
pub fn predictive_loss(tape: &mut Tape, pred: Var, target: Var, kind: BaseLoss) -> Result<Var, TensorError> {
    same_shape(tape, "predictive_loss", pred, target)?;
    let diff = tape.sub(pred, target)?;
    let e = match kind {
        BaseLoss::Mae => tape.abs(diff),
        BaseLoss::Mse => tape.square(diff),
    };
    Ok(tape.mean_all(e))
}

/// Student error `s = ℓ(ŷ, y)` while `s + δ ≥ ℓ(y_T, y)`, zero otherwise.
/// The gate compares detached values; in the zero branch no gradient flows.
pub fn bounded_kd_loss(
    tape: &mut Tape,
    pred: Var,
    teacher: Var,
    target: Var,
    delta: f64,
    kind: BaseLoss,
) -> Result<Var, TensorError> {
    same_shape(tape, "bounded_kd_loss", teacher, target)?;
    let student = predictive_loss(tape, pred, target, kind)?;
    let s = tape.value(student).item();
    let t = kind.eval(tape.value(teacher).data(), tape.value(target).data());
    if s + delta >= t {
        Ok(student)
    } else {
        Ok(tape.constant(Tensor::scalar(0.0)))
    }
}

/// Ordinary distillation `ℓ(ŷ, y_T)`.
pub fn plain_kd_loss(tape: &mut Tape, pred: Var, teacher: Var, kind: BaseLoss) -> Result<Var, TensorError> {
    predictive_loss(tape, pred, teacher, kind)
}

/// `L_pre + λ·L_kd + (β1 + β2)·kl`. `kl` already carries the ½ factor.
pub fn total_loss(tape: &mut Tape, l_pre: Var, l_kd: Var, kl: Var, cfg: &LossConfig) -> Result<Var, TensorError> {
    let kd = tape.scale(l_kd, cfg.lambda);
    let ib = tape.scale(kl, cfg.beta1 + cfg.beta2);
    let sum = tape.add(l_pre, kd)?;
    tape.add(sum, ib)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consts(tape: &mut Tape, v: &[f64]) -> Var {
        tape.constant(Tensor::from_slice(v))
    }

    #[test]
    fn predictive_values() {
        let mut tape = Tape::new();
        let a = consts(&mut tape, &[2.0]);
        let b = consts(&mut tape, &[1.0]);
        for kind in [BaseLoss::Mae, BaseLoss::Mse] {
            let l = predictive_loss(&mut tape, a, b, kind).unwrap();
            assert_eq!(tape.value(l).item(), 1.0);
            let z = predictive_loss(&mut tape, a, a, kind).unwrap();
            assert_eq!(tape.value(z).item(), 0.0);
        }
        let p = consts(&mut tape, &[1.0, 3.0]);
        let y = consts(&mut tape, &[0.0, 0.0]);
        let l = predictive_loss(&mut tape, p, y, BaseLoss::Mae).unwrap();
        assert_eq!(tape.value(l).item(), 2.0);
        let bad = consts(&mut tape, &[0.0]);
        assert!(predictive_loss(&mut tape, p, bad, BaseLoss::Mae).is_err());
    }

    /// s and t chosen by making the target 0 and the predictions constant.
    fn gate(s: f64, t: f64, delta: f64) -> f64 {
        let mut tape = Tape::new();
        let pred = consts(&mut tape, &[s]);
        let teacher = consts(&mut tape, &[t]);
        let y = consts(&mut tape, &[0.0]);
        let l = bounded_kd_loss(&mut tape, pred, teacher, y, delta, BaseLoss::Mae).unwrap();
        tape.value(l).item()
    }

    #[test]
    fn bounded_gate_cases() {
        assert_eq!(gate(1.0, 0.5, 0.1), 1.0);
        assert_eq!(gate(0.0, 0.5, 0.1), 0.0);
        assert_eq!(gate(0.45, 0.5, 0.1), 0.45);
    }

    #[test]
    fn zero_branch_has_zero_gradient() {
        let mut tape = Tape::new();
        let pred = tape.param(Tensor::from_slice(&[0.0, 0.1]));
        let teacher = consts(&mut tape, &[3.0, 3.0]);
        let y = consts(&mut tape, &[0.0, 0.0]);
        let l = bounded_kd_loss(&mut tape, pred, teacher, y, 0.1, BaseLoss::Mae).unwrap();
        let s = tape.sum_all(pred);
        let zero = tape.scale(s, 0.0);
        let total = tape.add(l, zero).unwrap();
        tape.backward(total).unwrap();
        assert_eq!(tape.grad(pred).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn total_arithmetic() {
        let mut tape = Tape::new();
        let pre = tape.constant(Tensor::scalar(1.0));
        let kd = tape.constant(Tensor::scalar(2.0));
        let kl = tape.constant(Tensor::scalar(0.5));
        let cfg = LossConfig {
            lambda: 0.3,
            beta1: 1e-3,
            beta2: 1e-3,
            ..LossConfig::default()
        };
        let l = total_loss(&mut tape, pre, kd, kl, &cfg).unwrap();
        assert!((tape.value(l).item() - 1.601).abs() < 1e-12);
        let off = LossConfig {
            lambda: 0.0,
            beta1: 0.0,
            beta2: 0.0,
            ..cfg
        };
        let l = total_loss(&mut tape, pre, kd, kl, &off).unwrap();
        assert_eq!(tape.value(l).item(), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        assert!(LossConfig { delta: -1.0, ..LossConfig::default() }.validate().is_err());
        assert!("huber".parse::<BaseLoss>().is_err());
    }
}
