//! Reasoning-module toolkit: a small decoder-only transformer meta-trained on
//! synthetic logistic-regression sequences, plus the oracles, embedding
//! composition and evaluation machinery around it.

mod binio;
pub mod compose;
pub mod error;
pub mod evalkit;
pub mod numerics;
pub mod oracle;
pub mod reasoner;
pub mod taskgen;
pub mod trainer;

pub use error::{Error, Result};
