//! Graph-language alignment for inter-firm relation prediction.
//!
//! A frozen text encoder, a frozen graph encoder and a frozen toy language
//! model are glued together by a single trainable affine projector that turns
//! node embeddings into injected "graph tokens".

pub mod aligner;
pub mod baselines;
pub mod checksum;
pub mod config;
pub mod corpdata;
pub mod error;
pub mod evalkit;
pub mod graphenc;
pub mod linalg;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod selftest;
pub mod synthgen;
pub mod tasks;
pub mod textenc;
pub mod toylm;
pub mod trainer;

pub use error::{Error, Result};
