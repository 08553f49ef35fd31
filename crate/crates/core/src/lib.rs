//! Birkhoff pseudospectral trajectory optimization.
//!
//! The pipeline: pick a Gegenbauer grid ([`grids`]), build the Birkhoff
//! interpolation matrices on it ([`birkhoff`]), transcribe an optimal control
//! problem into a nonlinear program ([`transcription`]), solve it
//! ([`solver`]), and independently verify the answer by propagating the
//! returned control through the dynamics and checking Pontryagin conditions
//! ([`vnv`]). Benchmark problems live in [`problems`].

pub mod birkhoff;
pub mod error;
pub mod grids;
pub mod poly;
pub mod problems;
pub mod solution;
pub mod solver;
pub mod transcription;
pub mod vnv;

pub use error::{Error, Result};
