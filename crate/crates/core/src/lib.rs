//! Hybrid classical-quantum wave dynamics on periodic pseudospectral grids.
//!
//! The state is a complex field Υ(q, p, x) on classical phase space times a
//! quantum configuration space (or a finite set of levels).  Dynamics are
//! generated by the covariant Liouvillian of a hybrid Hamiltonian.

pub mod cli_io;
pub mod dense;
pub mod densities_currents;
pub mod error;
pub mod expr;
pub mod hybrid_core;
pub mod interp;
pub mod kvh_classical;
pub mod lattice;
pub mod liouvillian;
pub mod madelung_trajectories;
pub mod operator_algebra;
pub mod positivity_family;
pub mod states;

pub use dense::{expm, DenseHybridOperator};
pub use error::{Error, Result};
pub use expr::Expr;
pub use hybrid_core::{
    evolve, EvolveOptions, EvolveResult, HybridHamiltonianSpec, HybridWavefunction, PotentialTerm, Profile,
};
pub use lattice::{Axis, AxisSpec, ComplexField, Grid, GridSpec, QuantumAxis, ScalarField};
pub use liouvillian::{HybridObservable, Liouvillian, QuantumFactor};
pub use num_complex::Complex64 as C64;
pub use states::InitialState;
