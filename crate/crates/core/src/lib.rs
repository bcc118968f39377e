//! Spectral simulator for the periodic one-dimensional quantum Liouville-BGK
//! equation with relaxation toward quantum Maxwellians.
//!
//! The crate is organised bottom-up:
//!
//! * [`spectral`]: truncated Fourier basis, grid transforms and Hermitian operator algebra.
//! * [`state`]: density operators, local densities, norms, entropies and free energy.
//! * [`moment`]: the local moment problem (potential ↦ Maxwellian and its inverse).
//! * [`evolution`]: free transport and BGK time stepping.
//! * [`equilibrium`]: Gibbs states and long-time convergence experiments.
//! * [`verification`]: randomized inequality checks.
//! * [`io`] and [`cli`]: configuration, file formats and command-line entry points.

pub mod cli;
pub mod equilibrium;
pub mod error;
pub mod evolution;
pub mod io;
pub mod moment;
pub mod spectral;
pub mod state;
pub mod verification;

pub use equilibrium::{convergence_experiment, gibbs_from_mass, gibbs_plus_coherence, GibbsState, Verdict};
pub use error::{Error, Result};
pub use evolution::{evolve, free_propagate, picard_solve, EvolutionConfig, Scheme, Trajectory};
pub use moment::{maxwellian_from_potential, solve_moment, MomentSolution, Potential, SolveOptions};
pub use spectral::{laplacian, multiplication_operator, HermitianOperator, SpectralSpace, C64};
pub use state::{make_initial, DensityField, DensityOperator, NormReport};
pub use verification::{run_suite, PropertyResult};
