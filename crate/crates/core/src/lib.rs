//! Supercritical superprocesses with immigration on a finite state space.
//!
//! The crate evaluates the mean semigroup, cumulant equation and moment
//! formulas of the process exactly, simulates its paths by Monte Carlo, and
//! turns ensembles into verdicts for the martingale, law-of-large-numbers and
//! central-limit statements about its long-time behaviour.

pub mod analyze;
pub mod cumulant;
pub mod error;
pub mod model;
pub mod moments;
pub mod numerics;
pub mod simulate;
pub mod spectral;

pub use error::{Error, Result};
pub use model::{load_scenario, save_scenario, validate, Scenario, ValidationReport};
pub use spectral::{FunctionProfile, SpaceClass, SpectralSystem};
