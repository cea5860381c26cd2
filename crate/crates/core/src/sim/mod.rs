//! Simulation harness: synthetic benchmark, simulated annotators, sweeps and
//! budget curves.

pub mod budget;
pub mod experiment;
pub mod simulated_feedback;
pub mod sweep;
pub mod synthetic;
