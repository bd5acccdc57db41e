//! Mean-field diffusions, their entropy functionals and transport diagnostics.
//!
//! The crate simulates interacting particle systems of McKean–Vlasov type,
//! solves the matching nonlinear Fokker–Planck equation on a grid, and
//! evaluates free energies, Fisher informations, trajectory-wise Fisher
//! processes and one-dimensional optimal transport quantities.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod entropy_fisher;
pub mod error;
pub mod hwbi;
pub mod mckv_sim;
pub mod measures;
pub mod oracles;
pub mod pde;
pub mod potentials;
pub mod rng;
pub mod transport;

pub use error::{Error, Result};
pub use measures::{AtomicMeasure, GaussianState, GridDensity, ParticleEnsemble};
pub use potentials::{InteractionSpec, PerturbationSpec, Potential, PotentialSpec, Potentials};
