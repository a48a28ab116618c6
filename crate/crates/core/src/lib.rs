//! Attention-based neural machine translation with supervised attention.

pub mod align_supervision;
pub mod cli;
pub mod data;
pub mod decoding;
pub mod error;
pub mod eval;
pub mod harness;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
