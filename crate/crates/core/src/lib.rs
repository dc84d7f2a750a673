//! Crease classification on implicit surfaces and variational registration
//! of a graph surface to a projected 2D classifier image.

pub mod camera;
pub mod classifier;
pub mod config;
pub mod energy;
pub mod error;
pub mod fem;
pub mod field2;
pub mod fmm;
pub mod graph;
pub mod io;
pub mod optimizer;
pub mod testbed;
pub mod volume;

pub use error::{Error, Result};
