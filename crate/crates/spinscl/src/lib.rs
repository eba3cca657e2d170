//! Semiclassical quantization and phase-space distributions for quantum spin.
//!
//! This crate computes the spectrum and Husimi (coherent-state) distributions
//! of finite spin-`j` Hamiltonians two ways:
//!
//! * **exactly**, by dense Hermitian diagonalization of the `(2j+1)`-dimensional
//!   matrix Hamiltonian, and
//! * **semiclassically**, from closed orbits of the classical spin dynamics on
//!   the Bloch sphere, quantized by a Bohr–Sommerfeld rule that carries the
//!   Solari–Kochetov phase correction.
//!
//! The semiclassical side works entirely in the coherent-state chart
//! `z` obtained by stereographic projection from the north pole, with an
//! automatic hand-off to the antipodal chart `w = 1/z` so orbits may pass
//! through either pole. The main pipeline is:
//!
//! 1. [`model`] — describe a Hamiltonian as a polynomial in the spin operators,
//!    realize it as a Hermitian matrix, diagonalize it.
//! 2. [`symbol`] — evaluate the coherent-state expectation ("symbol") of the
//!    Hamiltonian and its first/second holomorphic derivatives at a phase-space
//!    point, including the Solari–Kochetov integrand.
//! 3. [`orbit`] — integrate Hamilton's equation for the spin, detect closure,
//!    and accumulate the orbit's action and correction phase alongside the flow.
//! 4. [`census`] + [`quantize`] — enumerate orbit families between critical
//!    energies and solve the quantization condition level by level.
//! 5. [`husimi`] — evaluate exact and semiclassical Husimi distributions on a
//!    planar grid in canonical coordinates and compare them.
//!
//! The crate is deterministic: repeated runs with the same inputs produce
//! byte-identical tables, with or without the `parallel` feature.

pub mod algebra;
pub mod census;
pub mod chart;
pub mod coherent;
pub mod error;
pub mod husimi;
pub mod model;
pub mod ode;
pub mod orbit;
pub mod parallel;
pub mod quantize;
pub mod symbol;

pub use error::SpinError;
pub use model::{Spin, SpinModel, SpinOp};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex<f64>;
