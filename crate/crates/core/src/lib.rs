//! Induced full-branch Markov maps for one-dimensional maps with critical and
//! singular points: partitions, escape times, towers and statistics.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod config;
pub mod dd;
pub mod error;
pub mod escape;
pub mod expr;
pub mod hypotheses;
pub mod map_model;
pub mod partition;
pub mod pipeline;
pub mod roots;
pub mod stats;
pub mod tower;

pub use dd::Dd;
pub use error::{Error, Result};
pub use map_model::{CriticalPoint, OneSided, PiecewiseMap, PointClass, Side};
