use proptest::prelude::*;

use stdistill::autodiff::{Tape, Tensor};
use stdistill::loss::{bounded_kd_loss, predictive_loss, total_loss, BaseLoss, LossConfig};
use stdistill::metrics::{mae, rmse, ReportBuilder};
use stdistill::student::{kl_divergence, LatentDist, LOGVAR_MAX, LOGVAR_MIN};

fn kind() -> impl Strategy<Value = BaseLoss> {
    prop_oneof![Just(BaseLoss::Mae), Just(BaseLoss::Mse)]
}

/// Three equal-length vectors: prediction, teacher, target.
fn triple() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..24).prop_flat_map(|n| {
        let v = || prop::collection::vec(-10.0f64..10.0, n);
        (v(), v(), v())
    })
}

fn losses(pred: &[f64], teacher: &[f64], target: &[f64], delta: f64, kind: BaseLoss) -> (f64, f64) {
    let mut tape = Tape::new();
    let p = tape.param(Tensor::from_slice(pred));
    let yt = tape.constant(Tensor::from_slice(teacher));
    let y = tape.constant(Tensor::from_slice(target));
    let b = bounded_kd_loss(&mut tape, p, yt, y, delta, kind).unwrap();
    let l = predictive_loss(&mut tape, p, y, kind).unwrap();
    (tape.value(b).item(), tape.value(l).item())
}

proptest! {
    #[test]
    fn bounded_is_between_zero_and_predictive((p, t, y) in triple(), delta in 0.0f64..5.0, k in kind()) {
        let (bounded, plain) = losses(&p, &t, &y, delta, k);
        prop_assert!(bounded >= 0.0);
        prop_assert!(bounded <= plain);
    }

    #[test]
    fn gate_only_opens_as_delta_grows((p, t, y) in triple(), d1 in 0.0f64..5.0, extra in 0.0f64..5.0, k in kind()) {
        let (lo, plain) = losses(&p, &t, &y, d1, k);
        let (hi, _) = losses(&p, &t, &y, d1 + extra, k);
        if lo == plain {
            prop_assert_eq!(hi, plain);
        }
        prop_assert!(hi == plain || hi == 0.0);
    }

    #[test]
    fn perfect_teacher_at_zero_delta_is_predictive((p, _t, y) in triple(), k in kind()) {
        let (bounded, plain) = losses(&p, &y, &y, 0.0, k);
        prop_assert_eq!(bounded, plain);
    }

    #[test]
    fn total_is_sum_of_terms(
        l_pre in 0.0f64..10.0,
        l_kd in 0.0f64..10.0,
        kl in 0.0f64..10.0,
        lambda in 0.0f64..2.0,
        beta1 in 0.0f64..0.1,
        beta2 in 0.0f64..0.1,
    ) {
        let cfg = LossConfig { lambda, beta1, beta2, ..LossConfig::default() };
        let mut tape = Tape::new();
        let vars = [l_pre, l_kd, kl].map(|v| tape.constant(Tensor::scalar(v)));
        let total = total_loss(&mut tape, vars[0], vars[1], vars[2], &cfg).unwrap();
        let separate = l_pre + lambda * l_kd + (beta1 + beta2) * kl;
        prop_assert!((tape.value(total).item() - separate).abs() <= 1e-12);
    }

    #[test]
    fn kl_is_non_negative(mu in -5.0f64..5.0, logvar in LOGVAR_MIN..LOGVAR_MAX) {
        let mut tape = Tape::new();
        let dist = LatentDist {
            mu: tape.constant(Tensor::from_slice(&[mu])),
            logvar: tape.constant(Tensor::from_slice(&[logvar])),
        };
        let v = kl_divergence(&mut tape, &dist).unwrap();
        let v = tape.value(v).item();
        prop_assert!(v >= 0.0);
        if mu != 0.0 || logvar != 0.0 {
            prop_assert!(v > 0.0);
        }
    }

    // beyond a logit spread of about 36, 1 − p rounds to zero in f64
    #[test]
    fn softmax_rows_are_distributions(x in prop::collection::vec(-15.0f64..15.0, 1..40)) {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::from_slice(&x));
        let s = tape.softmax(v, 0).unwrap();
        let s = tape.value(s).data();
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        if x.len() > 1 {
            prop_assert!(s.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn rmse_dominates_mae(pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..60)) {
        let (p, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert!(rmse(&p, &y) >= mae(&p, &y) * (1.0 - 1e-12));
    }

    #[test]
    fn report_ignores_window_order(
        windows in prop::collection::vec(prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 6), 1..12),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        // each window is T'=3, N=2, F=1
        let tensors: Vec<(Tensor, Tensor)> = windows
            .iter()
            .map(|w| {
                let (p, y): (Vec<f64>, Vec<f64>) = w.iter().copied().unzip();
                (Tensor::new(vec![1, 3, 2, 1], p).unwrap(), Tensor::new(vec![1, 3, 2, 1], y).unwrap())
            })
            .collect();
        let mut order: Vec<usize> = (0..tensors.len()).collect();
        let report = |order: &[usize]| {
            let mut b = ReportBuilder::new(3);
            for &i in order {
                b.push(&tensors[i].0, &tensors[i].1).unwrap();
            }
            b.finish().unwrap()
        };
        let a = report(&order);
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let b = report(&order);
        prop_assert_eq!(a.num_windows, b.num_windows);
        prop_assert!((a.aggregate.mae - b.aggregate.mae).abs() <= 1e-12 * a.aggregate.mae.max(1.0));
        prop_assert!((a.aggregate.rmse - b.aggregate.rmse).abs() <= 1e-12 * a.aggregate.rmse.max(1.0));
        prop_assert!(a.aggregate.rmse >= a.aggregate.mae * (1.0 - 1e-12));
        // aggregate MAE is the mean of per-horizon MAEs when every horizon has the same count
        let mean_h = a.per_horizon.iter().map(|m| m.mae).sum::<f64>() / 3.0;
        prop_assert!((mean_h - a.aggregate.mae).abs() <= 1e-12 * a.aggregate.mae.max(1.0));
    }
}
