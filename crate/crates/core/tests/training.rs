use stdistill::dataset::{synth_generate, SynthConfig};
use stdistill::metrics::Forecaster;
use stdistill::teacher::{train_ref_teacher, TeacherConfig};
use stdistill::trainer::ablate;
use stdistill::{
    evaluate, load_teacher, synth_teacher, train, Checkpoint, Error, PreparedData, Split, TeacherPredictions,
    TrainConfig,
};

fn data(cfg: SynthConfig, history: usize, horizon: usize) -> PreparedData {
    PreparedData::new(&synth_generate(&cfg).unwrap(), history, horizon).unwrap()
}

fn small() -> PreparedData {
    data(
        SynthConfig {
            nodes: 6,
            days: 5,
            steps_per_day: 24,
            ..SynthConfig::default()
        },
        4,
        3,
    )
}

fn perfect_teacher(d: &PreparedData) -> TeacherPredictions {
    let all: Vec<usize> = d.range(Split::All).collect();
    synth_teacher(&d.raw_targets(&all), 0.0, 0.0, 0).unwrap()
}

fn quick() -> TrainConfig {
    TrainConfig {
        dim: 8,
        latent: 8,
        epochs: 3,
        batch_size: 16,
        ..TrainConfig::default()
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let d = small();
    let teacher = perfect_teacher(&d);
    let out = train(&d, Some(&teacher), &quick(), |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.stck");
    out.checkpoint.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.to_bytes().unwrap(), out.checkpoint.to_bytes().unwrap());
    assert_eq!(back.epoch(), out.best_epoch);
    let idx: Vec<usize> = d.range(Split::Val).collect();
    let a = out.checkpoint.predict(&d, &idx, None).unwrap();
    let b = back.predict(&d, &idx, None).unwrap();
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let d = small();
    let out = train(&d, None, &ablate("w/o-KD", &quick()).unwrap(), |_| {}).unwrap();
    let bytes = out.checkpoint.to_bytes().unwrap();
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Parse { .. })));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Parse { .. })));
    let other = data(SynthConfig { nodes: 7, days: 5, steps_per_day: 24, ..SynthConfig::default() }, 4, 3);
    assert!(matches!(out.checkpoint.check_alignment(&other), Err(Error::Alignment { .. })));
}

#[test]
fn teacher_file_round_trip_and_alignment() {
    let d = small();
    let teacher = synth_teacher(&perfect_teacher(&d).values().clone(), 0.2, 0.1, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.sttp");
    teacher.save(&path).unwrap();
    assert_eq!(load_teacher(&path, &d).unwrap(), teacher);

    let shorter = data(SynthConfig { nodes: 6, days: 4, steps_per_day: 24, ..SynthConfig::default() }, 4, 3);
    assert!(matches!(load_teacher(&path, &shorter), Err(Error::Alignment { .. })));
    let longer_horizon = data(SynthConfig { nodes: 6, days: 5, steps_per_day: 24, ..SynthConfig::default() }, 3, 4);
    assert!(matches!(load_teacher(&path, &longer_horizon), Err(Error::Alignment { .. })));
    assert!(matches!(TeacherPredictions::from_bytes(b"STTP1\n"), Err(Error::Parse { .. })));
}

#[test]
fn distillation_without_teacher_is_a_config_error() {
    let d = small();
    assert!(matches!(train(&d, None, &quick(), |_| {}), Err(Error::Config(_))));
}

#[test]
fn reference_teacher_learns_the_diffusion() {
    let d = data(
        SynthConfig {
            nodes: 8,
            days: 6,
            steps_per_day: 24,
            sigma: 0.0,
            rho: 0.6,
            ..SynthConfig::default()
        },
        4,
        3,
    );
    let ds = synth_generate(&SynthConfig {
        nodes: 8,
        days: 6,
        steps_per_day: 24,
        sigma: 0.0,
        rho: 0.6,
        ..SynthConfig::default()
    })
    .unwrap();
    let mixing = ds.graph.row_normalized_with_self_loops();
    let cfg = TeacherConfig {
        epochs: 10,
        ..TeacherConfig::default()
    };
    let (_, preds, run) = train_ref_teacher(&d, mixing.clone(), &cfg).unwrap();
    assert!(run.test.aggregate.mae < run.untrained_test.aggregate.mae);
    preds.check_alignment(&d).unwrap();
    assert_eq!(preds.values().shape(), &[d.num_windows(), 3, 8, 1]);
    let (_, again, _) = train_ref_teacher(&d, mixing, &cfg).unwrap();
    assert_eq!(again, preds);
}

#[test]
fn training_is_deterministic() {
    let d = small();
    let teacher = perfect_teacher(&d);
    let run = || {
        let mut log = Vec::new();
        let out = train(&d, Some(&teacher), &quick(), |e| log.push(e.clone())).unwrap();
        (log, out.checkpoint.to_bytes().unwrap())
    };
    let (log_a, ck_a) = run();
    let (log_b, ck_b) = run();
    assert_eq!(log_a, log_b);
    assert_eq!(ck_a, ck_b);
    let other = train(&d, Some(&teacher), &TrainConfig { seed: 1, ..quick() }, |_| {}).unwrap();
    assert_ne!(other.checkpoint.to_bytes().unwrap(), ck_a);
}

#[test]
fn epoch_log_terms_are_consistent() {
    let d = small();
    let teacher = perfect_teacher(&d);
    let cfg = quick();
    let out = train(&d, Some(&teacher), &cfg, |_| {}).unwrap();
    for (i, e) in out.log.iter().enumerate() {
        assert_eq!(e.epoch, i);
        assert_eq!(e.lr, cfg.lr_at(i));
        let sum = e.l_pre + cfg.loss.lambda * e.l_kd + e.l_ib;
        assert!((sum - e.train_loss).abs() < 1e-12 * e.train_loss.max(1.0));
        assert!(e.l_ib > 0.0);
    }
    let best = out.log.iter().map(|e| e.val_mae).fold(f64::INFINITY, f64::min);
    assert_eq!(out.log[out.best_epoch].val_mae, best);
    let restored = evaluate(&out.checkpoint, &d, Split::Val, None).unwrap();
    assert_eq!(restored.aggregate.mae, best);
}

#[test]
fn early_stopping_honours_patience() {
    let d = small();
    let cfg = TrainConfig {
        epochs: 40,
        patience: Some(1),
        lr: 0.05,
        lr_milestones: vec![],
        ..ablate("w/o-KD", &quick()).unwrap()
    };
    let out = train(&d, None, &cfg, |_| {}).unwrap();
    if out.stopped_early {
        assert_eq!(out.log.len(), out.best_epoch + 2);
    } else {
        assert_eq!(out.log.len(), 40);
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn default_config_reduces_training_loss() {
    let d = data(
        SynthConfig {
            nodes: 8,
            days: 6,
            sigma: 0.0,
            ..SynthConfig::default()
        },
        12,
        12,
    );
    let teacher = perfect_teacher(&d);
    let (mut first, mut twentieth) = (Vec::new(), Vec::new());
    for seed in 0..3 {
        // patience off so that epoch 20 always runs
        let cfg = TrainConfig {
            epochs: 20,
            patience: None,
            seed,
            ..TrainConfig::default()
        };
        let out = train(&d, Some(&teacher), &cfg, |_| {}).unwrap();
        first.push(out.log[0].train_loss);
        twentieth.push(out.log[19].train_loss);
    }
    assert!(median(twentieth.clone()) < median(first.clone()), "{first:?} -> {twentieth:?}");
}
