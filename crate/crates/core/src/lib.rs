//! Numerical laboratory for the linearly damped nonlinear Schrodinger equation
//!
//! `i u_t + Δu + i a(t) u = μ |u|^{p-1} u`
//!
//! on a periodic box standing in for `R^N`.

pub mod config;
pub mod criteria;
pub mod damping;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod initial;
pub mod quadrature;
pub mod quantities;
pub mod solver;

pub use error::{Error, Result};
