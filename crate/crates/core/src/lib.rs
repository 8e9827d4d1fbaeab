//! Lifelong-normalized model editing.
//!
//! A recursive Normal–Inverse–Wishart tracker follows the drifting
//! distribution of value gradients; its posterior estimates center and
//! whiten each batch before a closed-form ridge solve turns the batch into a
//! parameter update. Synthetic streams with known ground truth, per-step
//! diagnostics and a small experiment runner sit on top.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod niw;
pub mod oracle;
pub mod output;
pub mod ridge;
pub mod sim;
pub mod trace;
pub mod whitening;

pub use config::ExperimentConfig;
pub use engine::{
    pair_runs, run_experiment, run_experiment_with, Engine, RunOptions, RunReport, RunSummary,
};
pub use error::{Error, Result};
pub use niw::NiwState;
pub use ridge::{EditBatch, EditorConfig, EditorMode, LipschitzHook};
