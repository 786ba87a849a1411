//! Spectral solver, oracles and diagnostics for time-fractional diffusion
//! problems with non-homogeneous boundary and initial data.

pub mod diagnostics;
pub mod elliptic_compat;
pub mod expr;
pub mod fd_oracle;
pub mod linalg;
pub mod mittag_leffler;
pub mod problem_model;
pub mod quadrature;
pub mod special;
pub mod spectral_basis;
pub mod weak_solver;
