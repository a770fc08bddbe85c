//! Parallel finite-volume solver for the three-dimensional Richards equation
//! in pressure-head form.
//!
//! The numerical core is generic over the floating-point type (`f32` or
//! `f64`); the aliases at the crate root fix it to `f64`.

pub mod assembly;
pub mod constitutive;
pub mod driver;
pub mod error;
pub mod exchange;
pub mod grid;
pub mod linsolve;
pub mod scalar;
pub mod stepper;

pub use error::{Diagnostic, Error, Result};
pub use scalar::Real;

/// Soil model in double precision.
pub type Soil = constitutive::SoilModel<f64>;
pub type PicardConfig = stepper::PicardConfig<f64>;
pub type TransientConfig = stepper::TransientConfig<f64>;
pub type LocalDomain = assembly::LocalDomain<f64>;
pub type StencilMatrix = linsolve::StencilMatrix<f64>;

pub use driver::simulation::{run, Problem, RunOptions, RunSummary};
