//! Forecasting anatomical deformation vector fields.
//!
//! - [`dvf`]: volumes, masks, displacement fields, warping and Jacobians
//! - [`io`]: binary `VOL1` / `MSK1` / `DVF1` files
//! - [`metrics`]: Dice, average Hausdorff distance, relative volume difference
//! - [`phantom`]: synthetic longitudinal cohorts with known deformations
//! - [`registration`]: B-spline velocity-field registration and hyper-parameter search
//! - [`model`]: the multi-resolution ConvLSTM sequence-to-sequence forecaster

pub mod dvf;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod registration;
pub mod seed;

pub use error::{CoreError, Result};
