//! Spatio-temporal forecasting with a lightweight MLP student distilled from
//! a graph teacher.
//!
//! The student fuses the input with learnable spatial, temporal and
//! transitional prompts, encodes each node into a Gaussian latent and decodes
//! the forecast. Training combines the ground-truth loss, a teacher-bounded
//! distillation term and a KL bottleneck penalty, all differentiated by the
//! small reverse-mode engine in [`autodiff`].

pub mod autodiff;
pub mod bench;
pub mod checkpoint;
mod codec;
pub mod config;
pub mod dataset;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod prompt;
pub mod student;
pub mod teacher;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use error::{Error, Result};
pub use metrics::{evaluate, EvalReport, Forecaster};
pub use pipeline::{PreparedData, Split};
pub use teacher::{load_teacher, synth_teacher, TeacherPredictions};
pub use trainer::{ablate, train, TrainConfig};
