//! A small training harness comparing surrogate losses on synthetic images:
//! data generation, a linear pixel classifier, cross-validated comparisons,
//! object-size stratification and foreground/background output masking.

mod data;
mod experiment;
mod fgbg;
mod train;

pub use data::*;
pub use experiment::*;
pub use fgbg::*;
pub use train::*;
