//! Independent reference implementations checked against the library.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use stdistill::autodiff::{Tape, Tensor};
use stdistill::loss::{bounded_kd_loss, BaseLoss};
use stdistill::prompt::TuckerFactors;
use stdistill::student::{kl_divergence, LatentDist};

fn kl(mu: f64, logvar: f64) -> f64 {
    let mut tape = Tape::new();
    let dist = LatentDist {
        mu: tape.constant(Tensor::from_slice(&[mu])),
        logvar: tape.constant(Tensor::from_slice(&[logvar])),
    };
    let v = kl_divergence(&mut tape, &dist).unwrap();
    tape.value(v).item()
}

/// `E_q[log q(x) − log p(x)]` for `q = N(μ, σ²)`, `p = N(0, 1)`.
fn kl_monte_carlo(mu: f64, sigma: f64, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut acc = 0.0;
    for _ in 0..samples {
        let e: f64 = rng.sample(StandardNormal);
        let x = mu + sigma * e;
        // log q − log p; the 2π terms cancel
        acc += -sigma.ln() - 0.5 * e * e + 0.5 * x * x;
    }
    acc / samples as f64
}

#[test]
fn kl_exact_points() {
    assert_eq!(kl(0.0, 0.0), 0.0);
    assert_eq!(kl(1.0, 0.0), 0.5);
    let e = std::f64::consts::E;
    assert!((kl(0.0, 1.0) - 0.5 * (-1.0 + e - 1.0)).abs() < 1e-15);
}

#[test]
fn kl_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let mu = rng.random_range(-2.0..2.0);
        let sigma: f64 = rng.random_range(0.3..2.0);
        let exact = kl(mu, 2.0 * sigma.ln());
        let mc = kl_monte_carlo(mu, sigma, 1_000_000, &mut rng);
        assert!((exact - mc).abs() < 1e-2, "μ={mu} σ={sigma}: {exact} vs {mc}");
    }
}

fn brute_force_tucker(f: &TuckerFactors) -> Vec<f64> {
    let (nt, d) = (f.temporal.shape()[0], f.temporal.shape()[1]);
    let n = f.spatial.shape()[0];
    let (g, et, es) = (f.core.data(), f.temporal.data(), f.spatial.data());
    let mut logits = vec![0.0; nt * n * d];
    for t in 0..nt {
        for m in 0..n {
            for r in 0..d {
                let mut acc = 0.0;
                for p in 0..d {
                    for q in 0..d {
                        acc += g[(p * d + q) * d + r] * et[t * d + p] * es[m * d + q];
                    }
                }
                logits[(t * n + m) * d + r] = acc;
            }
        }
    }
    let mut out = vec![0.0; logits.len()];
    for t in 0..nt {
        for r in 0..d {
            let at = |m: usize| (t * n + m) * d + r;
            let z: f64 = (0..n).map(|m| logits[at(m)].exp()).sum();
            for m in 0..n {
                out[at(m)] = logits[at(m)].exp() / z;
            }
        }
    }
    out
}

#[test]
fn tucker_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut uniform = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    for &(d, n, nt) in &[(1, 1, 1), (2, 3, 5), (4, 16, 24), (8, 16, 24), (8, 5, 7), (3, 16, 2)] {
        let f = TuckerFactors {
            core: uniform(&[d, d, d]),
            temporal: uniform(&[nt, d]),
            spatial: uniform(&[n, d]),
        };
        let got = f.transitional_prompt().unwrap();
        assert_eq!(got.shape(), &[nt, n, d]);
        let want = brute_force_tucker(&f);
        let worst = got.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-12, "d={d} n={n} nt={nt}: {worst:e}");
        for t in 0..nt {
            for r in 0..d {
                let s: f64 = (0..n).map(|m| got.data()[(t * n + m) * d + r]).sum();
                assert!((s - 1.0).abs() <= 1e-9);
            }
        }
    }
}

fn base(a: &[f64], target: &[f64], kind: BaseLoss) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(target) {
        let e = x - y;
        acc += match kind {
            BaseLoss::Mae => e.abs(),
            BaseLoss::Mse => e * e,
        };
    }
    acc / a.len() as f64
}

fn piecewise(pred: &[f64], teacher: &[f64], target: &[f64], delta: f64, kind: BaseLoss) -> f64 {
    let (s, t) = (base(pred, target, kind), base(teacher, target, kind));
    if s + delta >= t {
        s
    } else {
        0.0
    }
}

fn library(pred: &[f64], teacher: &[f64], target: &[f64], delta: f64, kind: BaseLoss) -> f64 {
    let mut tape = Tape::new();
    let p = tape.param(Tensor::from_slice(pred));
    let yt = tape.constant(Tensor::from_slice(teacher));
    let y = tape.constant(Tensor::from_slice(target));
    let v = bounded_kd_loss(&mut tape, p, yt, y, delta, kind).unwrap();
    tape.value(v).item()
}

#[test]
fn bounded_loss_matches_piecewise() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut open, mut shut, mut boundary) = (0, 0, 0);
    for case in 0..1000 {
        let kind = if case % 2 == 0 { BaseLoss::Mae } else { BaseLoss::Mse };
        // dyadic values on a power-of-two length keep every sum exact, so the
        // boundary δ = t − s is hit exactly
        let n = 1usize << rng.random_range(0..5);
        let mut grid = || (0..n).map(|_| rng.random_range(-16i32..16) as f64 / 8.0).collect::<Vec<_>>();
        let (mut pred, mut teacher, target) = (grid(), grid(), grid());
        // the boundary cases need t ≥ s; the random-δ cases keep both orders
        if case % 3 != 1 && base(&teacher, &target, kind) < base(&pred, &target, kind) {
            std::mem::swap(&mut pred, &mut teacher);
        }
        let (s, t) = (base(&pred, &target, kind), base(&teacher, &target, kind));
        let delta = match case % 3 {
            0 => t - s,
            1 => rng.random_range(0.0..2.0),
            _ => (t - s - 0.125).max(0.0),
        };
        let want = piecewise(&pred, &teacher, &target, delta, kind);
        let got = library(&pred, &teacher, &target, delta, kind);
        assert_eq!(got.to_bits(), want.to_bits(), "case {case}");
        if s + delta == t {
            boundary += 1;
            assert_eq!(got, s);
        } else if s + delta < t {
            shut += 1;
        } else {
            open += 1;
        }
    }
    assert!(open > 50 && shut > 50 && boundary > 50, "open {open} shut {shut} boundary {boundary}");
}
