//! Online estimation of time-varying vector autoregressions, with spectral
//! connectivity, event networks and benchmarking on top.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod config;
pub mod error;
pub mod estimator;
pub mod io;
pub mod kalman;
pub mod model;
pub mod network;
pub mod par;
pub mod pipeline;
pub mod sope;
pub mod sope_general;
pub mod spectral;

pub use error::{Error, ErrorKind, Result};
