//! Per-window inference latency of the student against the reference teacher
//! on synthetic ring graphs of growing size.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::dataset::{build_adjacency, GraphKind, StGraph, TOD_SLOTS};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::prompt::{CalendarIndex, PromptSwitches, PromptTables};
use crate::student::{BatchInput, ModelDims, StudentModel};
use crate::teacher::RefTeacher;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub nodes: Vec<usize>,
    /// Minimum timed repetitions per side.
    pub reps: usize,
    /// Repetitions continue past `reps` until each side has been timed for
    /// at least this many seconds.
    pub min_secs: f64,
    pub warmup: usize,
    pub history: usize,
    pub horizon: usize,
    pub steps_per_day: usize,
    pub dim: usize,
    pub latent: usize,
    pub teacher_hidden: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            nodes: vec![50, 100, 200, 400, 800],
            reps: 100,
            min_secs: 0.5,
            warmup: 5,
            history: 12,
            horizon: 12,
            steps_per_day: 288,
            dim: 32,
            latent: 32,
            teacher_hidden: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub nodes: usize,
    /// Mean seconds per window.
    pub student_secs: f64,
    pub teacher_secs: f64,
    /// `teacher_secs / student_secs`.
    pub ratio: f64,
}

/// Mean seconds per call of `a` and `b`, with calls interleaved so that
/// drift in machine load hits both sides equally.
fn time_pair(
    warmup: usize,
    reps: usize,
    min_secs: f64,
    mut a: impl FnMut() -> Result<()>,
    mut b: impl FnMut() -> Result<()>,
) -> Result<(f64, f64)> {
    for _ in 0..warmup {
        a()?;
        b()?;
    }
    let (mut ta, mut tb) = (0.0f64, 0.0f64);
    let mut done = 0;
    while done < reps || ta.min(tb) < min_secs {
        done += 1;
        let start = Instant::now();
        a()?;
        ta += start.elapsed().as_secs_f64();
        let start = Instant::now();
        b()?;
        tb += start.elapsed().as_secs_f64();
    }
    Ok((ta / done as f64, tb / done as f64))
}

/// Times one-window forward passes; the student reuses precomputed prompt
/// tables as it would in deployment.
pub fn bench_row(cfg: &BenchConfig, nodes: usize) -> Result<BenchRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dims = ModelDims {
        nodes,
        history: cfg.history,
        horizon: cfg.horizon,
        features: 1,
        steps_per_day: cfg.steps_per_day,
        dim: cfg.dim,
        latent: cfg.latent,
    };
    let mut s_store = ParamStore::new();
    let model = StudentModel::new(dims, &mut s_store, &mut rng);
    let tables = PromptTables::compute(&model.prompts, &s_store, PromptSwitches::default())?;

    let mixing = StGraph::new(build_adjacency(GraphKind::Ring, nodes))?.row_normalized_with_self_loops();
    let mut t_store = ParamStore::new();
    let teacher = RefTeacher::new(&mut t_store, mixing, cfg.history, cfg.horizon, 1, cfg.teacher_hidden, &mut rng);

    let x = Tensor::new(
        vec![1, cfg.history, nodes, 1],
        (0..cfg.history * nodes).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let mut calendar = CalendarIndex::default();
    let tod: Vec<usize> = (0..cfg.history).map(|i| i * TOD_SLOTS / cfg.steps_per_day).collect();
    calendar.push_window(&tod, &vec![0; cfg.history], 0, cfg.steps_per_day);
    let input = BatchInput { x, calendar };

    let student = || {
        let pred = model.infer(&s_store, &tables, &input, PromptSwitches::default())?;
        std::hint::black_box(pred);
        Ok(())
    };
    let teacher = || {
        let mut tape = Tape::new();
        let bound = t_store.bind(&mut tape);
        let x = tape.constant(input.x.clone());
        let y = teacher.forward(&mut tape, &bound, x)?;
        std::hint::black_box(tape.value(y));
        Ok(())
    };
    let (student_secs, teacher_secs) = time_pair(cfg.warmup, cfg.reps, cfg.min_secs, student, teacher)?;
    Ok(BenchRow {
        nodes,
        student_secs,
        teacher_secs,
        ratio: teacher_secs / student_secs,
    })
}

pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.reps == 0 || !(cfg.min_secs >= 0.0) || cfg.nodes.is_empty() || cfg.nodes.contains(&0) {
        return Err(Error::Config("bench needs reps ≥ 1, min_secs ≥ 0 and a non-empty list of positive node counts".into()));
    }
    cfg.nodes.iter().map(|&n| bench_row(cfg, n)).collect()
}
