use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use stdistill::dataset::load_dataset;
use stdistill::{PreparedData, Split, TeacherPredictions};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stdistill"));
    c.env_remove("STDISTILL_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &["--nodes", "5", "--days", "4", "--steps-per-day", "24"];

fn synth(path: &Path, extra: &[&str]) -> Value {
    let mut args = vec!["synth"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    args.extend(["-o", s(path)]);
    ok(&args)
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a.bin"), dir.path().join("b.bin"), dir.path().join("c.bin"));
    synth(&a, &["--seed", "3"]);
    synth(&b, &["--seed", "3"]);
    synth(&c, &["--seed", "4"]);
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));

    let j = dir.path().join("a.json");
    synth(&j, &["--seed", "3"]);
    assert_eq!(load_dataset(&j).unwrap(), load_dataset(&a).unwrap());
}

#[test]
fn usage_errors_exit_with_two() {
    let out = run(&["synth", "--nodes", "5"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (env, flag, both) = (dir.path().join("e.bin"), dir.path().join("f.bin"), dir.path().join("b.bin"));
    let mut args = vec!["synth"];
    args.extend_from_slice(SMALL);
    let with_env = |out: &Path, seed_flag: Option<&str>| {
        let mut c = bin();
        c.env("STDISTILL_SEED", "9").args(&args).args(["-o", s(out)]);
        if let Some(f) = seed_flag {
            c.args(["--seed", f]);
        }
        let o = c.output().unwrap();
        assert!(o.status.success());
        serde_json::from_slice::<Value>(&o.stdout).unwrap()
    };
    assert_eq!(with_env(&env, None)["seed"], 9);
    assert_eq!(synth(&flag, &["--seed", "9"])["seed"], 9);
    assert_eq!(with_env(&both, Some("2"))["seed"], 2);
    assert_eq!(std::fs::read(&env).unwrap(), std::fs::read(&flag).unwrap());

    let bad = bin().env("STDISTILL_SEED", "x").args(&args).args(["-o", s(&env)]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn config_file_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "epochs = 3\nlearning_rte = 0.1\n").unwrap();
    let out = run(&["--config", s(&cfg), "synth", "-o", s(&dir.path().join("d.bin"))]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["message"].as_str().unwrap().contains("learning_rte"));
}

#[test]
fn synthetic_teacher_without_noise_is_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.bin");
    let teacher = dir.path().join("t.sttp");
    synth(&data, &[]);
    let dims = ["--history", "4", "--horizon", "3"];
    let mut args = vec!["teacher", "synthetic", "--dataset", s(&data), "--sigma", "0", "-o", s(&teacher)];
    args.extend_from_slice(&dims);
    ok(&args);
    let prepared = PreparedData::new(&load_dataset(&data).unwrap(), 4, 3).unwrap();
    let all: Vec<usize> = prepared.range(Split::All).collect();
    let t = TeacherPredictions::load(&teacher).unwrap();
    assert_eq!(t.values(), &prepared.raw_targets(&all));

    let mut args = vec!["teacher", "import", s(&teacher), "--dataset", s(&data)];
    args.extend_from_slice(&dims);
    assert_eq!(ok(&args)["num_windows"], prepared.num_windows());

    // one window fewer than the dataset has
    let out = run(&["teacher", "import", s(&teacher), "--dataset", s(&data), "--history", "5", "--horizon", "3"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "alignment");
}

#[test]
fn train_eval_robust_and_ablate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.bin");
    let teacher = dir.path().join("t.sttp");
    synth(&data, &[]);
    let dims = ["--dataset", s(&data), "--history", "4", "--horizon", "3"];
    let mut args = vec!["teacher", "synthetic", "--sigma", "0.1", "-o", s(&teacher)];
    args.extend_from_slice(&dims);
    ok(&args);

    let out_dir = dir.path().join("run");
    let mut args = vec!["train", "--teacher", s(&teacher), "--epochs", "2", "--dim", "4", "--latent", "4"];
    args.extend(["--batch-size", "16", "-o", s(&out_dir)]);
    args.extend_from_slice(&dims);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1]["epoch"], 1);
    for f in ["checkpoint.stck", "epochs.jsonl", "config.toml", "summary.json"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let ckpt = out_dir.join("checkpoint.stck");

    let eval = ok(&["eval", "--checkpoint", s(&ckpt)]);
    assert_eq!(eval["report"]["per_horizon"].as_array().unwrap().len(), 3);
    let csv = run(&["eval", "--checkpoint", s(&ckpt), "--csv"]);
    assert_eq!(String::from_utf8(csv.stdout).unwrap().lines().count(), 1 + 3 + 1);

    let robust = ok(&["robust", "--checkpoint", s(&ckpt), "--gammas", "0:0.3:0.05"]);
    let points = robust["points"].as_array().unwrap();
    assert_eq!(points.len(), 7);
    assert_eq!(points[0]["report"], eval["report"]);

    let mut args = vec!["ablate", "--variant", "w/o-KD", "--epochs", "1", "--dim", "4", "--latent", "4"];
    let abl = dir.path().join("abl");
    args.extend(["-o", s(&abl)]);
    args.extend_from_slice(&dims);
    assert_eq!(ok(&args)["variant"], "w/o-KD");
    let out = run(&["ablate", "--variant", "nope", "--dataset", s(&data)]);
    assert_eq!(out.status.code(), Some(1));
}
