//! Spectral-Galerkin simulation and rate certification for degenerate
//! infinite-dimensional Langevin dynamics with diagonal coefficient operators.

pub mod certifier;
pub mod cli;
pub mod dynamics;
pub mod experiments;
pub mod generator;
pub mod measures;
pub mod model;
pub mod potential;
pub mod quadrature;
pub mod spectral_ops;
