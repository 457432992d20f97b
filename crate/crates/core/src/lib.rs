//! Ultrasonic pulse-echo analysis with the 1D telegraph equation.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayes;
pub mod calibrate;
pub mod damage;
pub mod error;
pub mod features;
pub mod preprocess;
pub mod signal;
pub mod solver;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
pub use signal::{
    make_time_grid, AScan, ExcitationPulse, Location, MaterialParams, PlateModel, PriorBox, ScanSet,
    TimeGrid,
};
