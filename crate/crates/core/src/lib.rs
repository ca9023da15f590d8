//! Spin-Hamiltonian spectroscopy for an Er3+ effective spin-1/2 coupled to a
//! 93Nb (I = 9/2) nucleus in CaWO4.
//!
//! The crate forward-models level structures and transition frequencies,
//! fits multipole parameters to measured NMR frequencies with an ensemble
//! sampler, and hosts the lattice and crystal-field studies built on top.

// negated comparisons double as NaN rejection
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod constants;
pub mod data;
pub mod error;
pub mod hamiltonian;
pub mod inference;
pub mod lattice;
pub mod operators;
pub mod perturbation;
pub mod pipelines;
pub mod quadrupole;
pub mod spectra;

pub use error::{Error, Result};
