//! Multi-agent trajectory forecasting with temporally smoothed class-wise
//! attention.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod cvae;
pub mod encoder;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod scenes;
pub mod tape;
pub mod training;

pub use error::{Error, Result};
