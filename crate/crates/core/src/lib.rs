//! Numerical laboratory for Wasserstein convergence rates of Markov processes:
//! rate functions and bounds, Lyapunov drift checks, process simulators,
//! optimal transport distances, coupling contraction estimates, constructive
//! lower bounds and subordination.

pub mod coupling;
pub mod error;
pub mod experiment;
pub mod func;
pub mod lowerbound;
pub mod lyapunov;
pub mod numerics;
pub mod processes;
pub mod rate_calculus;
pub mod subordination;
pub mod wasserstein;

pub use error::{Error, Result};
