pub mod aggregation;
pub mod cli;
pub mod error;
pub mod io;
pub mod model;
pub mod path;
pub mod pipelines;
pub mod simulation;
pub mod solvers;
pub mod weights;

pub use error::{Error, Result};
