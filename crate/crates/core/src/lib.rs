//! Differentiable analytical performance model for weight-stationary DNN
//! accelerators, with one-loop gradient co-search of mappings and hardware.

pub mod arch;
pub mod cli;
pub mod correction;
pub mod design;
pub mod error;
pub mod gradient;
pub mod mapping;
pub mod oracle;
pub mod perfmodel;
pub mod search;
pub mod workload;

pub use error::{Error, Result};
