//! Multi-label tag prediction for competitive-programming problems from
//! solution program graphs and statement text.

pub mod aggregate;
pub mod baselines;
pub mod codegraph;
pub mod corpus;
pub mod error;
pub mod ensemble;
pub mod eval;
pub mod ggnn;
pub mod preprocess;
pub mod synth;
pub mod textmodel;
pub mod training;

pub use error::{Error, Result};

use sha2::{Digest, Sha256};

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(sha256(bytes))
}
