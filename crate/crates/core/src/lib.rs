//! Segmentation overlap metrics, their differentiable surrogate losses, the
//! approximation bounds relating them, and a small training harness that
//! compares the losses on synthetic data.

pub mod bounds;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod mask;
pub mod losses;
pub mod metrics;
pub mod report;
pub mod stats;
pub mod toytrain;

pub use error::{Error, Result};
