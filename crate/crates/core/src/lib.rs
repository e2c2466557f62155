//! Building blocks for aligning a tiny unified understanding/generation
//! model on a synthetic world with paired preference optimization.

pub mod ablation;
pub mod curation;
pub mod dpo;
pub mod error;
pub mod gap;
pub mod model;
pub mod optim;
pub mod pretrain;
pub mod seed;
pub mod self_play;
pub mod vocab;
pub mod world;

pub use error::{Error, Result};
