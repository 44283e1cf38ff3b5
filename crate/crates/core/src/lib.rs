//! Space-time adaptive solver for slightly compressible oil-water flow.
//!
//! A slab of space-time is discretised with piecewise-constant unknowns per
//! cell, solved monolithically with Newton's method, and then refined
//! sequentially from the coarsest to the finest level. Each new level starts
//! Newton from the previous level's solution, interpolated onto the refined
//! mesh.

pub mod adapt;
pub mod cli;
pub mod discretization;
pub mod error;
pub mod io;
pub mod mesh;
pub mod petrophysics;
pub mod solver;

pub use error::{Error, Result};
