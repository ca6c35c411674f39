//! File formats, experiment sweeps and the command-line front end for
//! `swlab-core`.

// `!(x > 0.0)` is used deliberately so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod io;
pub mod plot;
pub mod stats;
pub mod table;

pub use error::{Error, Result};
