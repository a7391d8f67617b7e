//! Drag of obstacles in two-dimensional Stokes flow with Navier slip, and
//! shape search over bulk bodies and thin screens.

pub mod energy;
pub mod export;
pub mod geometry;
pub mod optimizer;
pub mod scenario;
pub mod stokes;
pub mod theory;
pub mod validation;
