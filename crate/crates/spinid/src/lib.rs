//! Numerical toolkit for driven networks of spin-1/2 particles with isotropic
//! (Heisenberg) exchange couplings.
//!
//! A model is a [`SpinNetwork`]: `n` spins, symmetric exchange constants
//! `J_kl`, and per-spin gyromagnetic ratios `gamma_k`. The state is a density
//! matrix evolving as `rho' = [A + B_x u_x + B_y u_y + B_z u_z, rho]` under
//! piecewise-constant control fields, and the observed output is the total
//! magnetization `M_v(t) = Tr(S_v rho(t))` along each axis.
//!
//! The crate covers four layers:
//!
//! * [`operators`] — Pauli strings, drift/control generators, commutators,
//!   Pauli-basis decompositions, and site-permutation operators.
//! * [`dynamics`] — exact segment propagators and magnetization traces.
//! * [`liealg`] — dynamical Lie-algebra closures, controllability and
//!   observability decisions.
//! * [`equivalence`] / [`identify`] — the two families of model/state pairs
//!   that produce identical outputs (site relabelings, and the global
//!   exchange-sign flip with a parity-adjusted state), plus least-squares
//!   recovery of `J` and `gamma` from recorded traces.
//!
//! File formats used by the command-line front end live in [`io`].

pub mod dynamics;
pub mod equivalence;
pub mod identify;
pub mod io;
pub mod liealg;
pub mod operators;

mod error;

pub use error::{Error, Result};

pub use dynamics::{ControlSchedule, ControlSegment, DensityMatrix, Trace};
pub use equivalence::ModelStatePair;
pub use operators::{Axis, Operator, PauliString, Permutation, SpinNetwork};
