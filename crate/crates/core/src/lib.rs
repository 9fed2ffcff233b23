//! Local dissipative Liouvillians and the many-body hierarchy of decay
//! timescales.
//!
//! The crate is organised bottom-up:
//!
//! - [`pauli`] and [`topology`]: Pauli strings in symplectic form and qubit
//!   connectivity graphs.
//! - [`liouvillian`]: Lindblad channel sets, random Kossakowski matrices and the
//!   adjoint generator in the normalized Pauli basis (dense or matrix-free).
//! - [`spectral`]: exact diagonalization and observable propagation.
//! - [`perturbation`]: closed-form cluster and subcluster centers, the two-body
//!   rate polynomial and its turnback.
//! - [`hinv`]: harmonic inversion of sampled traces into complex exponentials.
//! - [`circuitsim`]: density-matrix simulation of noisy waiting circuits.
//! - [`experiment`]: protocol runner, trace store and the analysis pipeline.
//! - [`cli`]: the `hierarchy` command-line front end.

pub mod circuitsim;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod hinv;
pub mod io;
pub mod liouvillian;
pub mod par;
pub mod pauli;
pub mod perturbation;
pub mod rng;
pub mod spectral;
pub mod topology;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
