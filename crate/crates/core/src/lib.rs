//! Budget-constrained active view acquisition for joint AS / EF diagnosis.

mod binfmt;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod envpolicy;
pub mod error;
pub mod eval;
mod nn;
pub mod numerics;
pub mod oracle;
pub mod probmodel;
pub mod selector;
pub mod synthstudy;

pub use error::{Error, FormatError, Result};
