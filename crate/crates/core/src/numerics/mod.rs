//! Small numerical kernels: adaptive quadrature and an embedded Runge-Kutta
//! stepper with dense output.

pub mod ode;
pub mod quadrature;

pub use ode::{DenseSolution, OdeOptions, OdeStats};
pub use quadrature::{integrate, integrate_decaying, QuadResult};
