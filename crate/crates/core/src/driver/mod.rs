//! Case setup, inputs and outputs around the solver.

pub mod case;
pub mod flux;
pub mod lognormal;
pub mod output;
pub mod simulation;
pub mod gardner;
