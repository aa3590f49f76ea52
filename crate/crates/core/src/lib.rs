//! Numerical laboratory for the Vlasov-Fokker-Planck equation with an external
//! confining potential and a nonlocal self-consistent interaction.
//!
//! The crate computes steady states of the kinetic equation by a damped Picard
//! iteration on the Gibbs fixed-point map, evolves the nonlinear and linearized
//! equations in one space dimension with a Hermite velocity basis and Strang
//! splitting, and evaluates the structural functionals used to certify decay
//! and short-time regularization: free energy and its dissipation, the twisted
//! interaction norm, the auxiliary-operator Lyapunov functionals, Witten
//! spectral gaps, and fitted decay/regularization exponents.

pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod fftconv;
pub mod grid;
pub mod hermite;
pub mod kernels;
pub mod potentials;
pub mod solver;
pub mod spectral;
pub mod steady;

pub use error::Error;
pub use grid::{DensityField, SpatialGrid};


/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
