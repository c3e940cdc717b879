//! Classical engine for backpropagating quantum observables through circuits
//! in the Heisenberg picture.
//!
//! An observable is held as a sparse sum of Pauli terms in a symplectic ZX
//! bit encoding. Clifford gates permute terms; Pauli-generator rotations
//! branch them. Budgeted truncation keeps the sum small at a tracked,
//! triangle-inequality-summed error cost.
//!
//! Modules:
//! - [`pauli`] — Pauli terms, sparse sums, addresses and their algebra
//! - [`circuit`] — gates, slices, lattices and XY-model Trotter synthesis
//! - [`backprop`] — the slice-by-slice conjugation engine with error budgets
//! - [`grouping`] — qubit-wise-commuting measurement groups
//! - [`distributed`] — simulated multi-node backend with message accounting
//! - [`oracle`] — dense small-n reference simulator used for validation

pub mod backprop;
pub mod circuit;
pub mod distributed;
pub mod error;
pub mod grouping;
pub mod oracle;
pub mod pauli;

pub use error::Error;

/// Engine version string embedded in every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
