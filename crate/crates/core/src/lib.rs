//! Spectral Galerkin vorticity dynamics on the flat torus and the round sphere,
//! with a priori diagnostics: energy and enstrophy monitors, shell-norm
//! trapping envelopes, viscous-domination accounting and multilinear
//! eigenfunction estimates.

pub mod cache;
pub mod dynamics;
pub mod error;
pub mod estimates;
pub mod operators;
pub mod quadrature;
pub mod spectrum;
pub mod transform;
pub mod trapping;
pub mod triads;

pub use error::{Error, Result};
