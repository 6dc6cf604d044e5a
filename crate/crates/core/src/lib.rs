//! Desk-scale laboratory for energy cascades in the 2D cubic NLS near finite-gap tori.
//!
//! Modules follow the pipeline: build and certify a resonant lattice, evaluate the
//! frequency model and small divisors, classify monomials, solve homological
//! equations, then integrate the toy model and the perturbed lattice system.

pub mod dynamics;
pub mod harness;
pub mod lattice;
pub mod normal_form;
pub mod resonance;
pub mod rng;
pub mod spectrum;

pub use num_complex::Complex64;
