//! Exact, composite (segment-recursive) and sparse GP regression, with the
//! information-theoretic diagnostics used to compare them.

pub mod analysis;
pub mod cgp;
pub mod data;
pub mod error;
pub mod fitc;
pub mod gp;
pub mod kernel;
pub mod mc;
pub mod model;
pub mod optim;
pub mod psd;

pub use error::{CgpError, Result};
