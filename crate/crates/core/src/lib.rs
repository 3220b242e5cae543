//! Multi-task reinforcement learning for judge policies with verifiable rewards.
//!
//! A compact recurrent token policy reads an encoded synthetic observation and emits
//! a verdict. Training compares group-relative policy optimization on a composite
//! format + accuracy reward against supervised fine-tuning, and evaluates both on
//! held-out pairwise tasks.

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod grpo;
pub mod io;
pub mod optim;
pub mod policy;
pub mod rewards;
pub mod rng;
pub mod sft;
pub mod training;
pub mod vocab;

pub use error::{Error, Result};

use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256 digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
