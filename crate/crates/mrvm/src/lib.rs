//! Files, threads and the command line around `mrvm-core`: procedural
//! datasets on disk, the pretrain/finetune loops with checkpoints and
//! metrics, evaluation reports and the ablation sweeps.

pub mod ablate;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod trainer;

pub use error::{Error, Result};
