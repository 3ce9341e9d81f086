//! Patch-dynamics simulation of diffusion with mesoscale inter-patch
//! communication.
//!
//! The crate models a macroscale diffusion field through small, sparsely
//! placed patches of microscale lattice dynamics.  Patch edges are driven by
//! interpolation over neighbouring patch cores; refreshing that coupling only
//! every mesoscale interval `delta_t` (instead of every microscale step) cuts
//! inter-patch communication dramatically.  The crate provides:
//!
//! * closed-form and numeric eigen-systems of the single-patch operator
//!   ([`spectral`], [`operator`]);
//! * exact and mesoscale-coupled time stepping plus the exact remainder
//!   between them ([`evolve`], [`coupling`]);
//! * a priori bounds on the mesoscale communication error ([`errbound`]);
//! * a 2-D complex Ginzburg-Landau patch simulation exercising the scheme on
//!   a nonlinear wave system ([`gl2d`]);
//! * a message-cost ledger for communication schedules ([`commsim`]).
//!
//! All numerics are generic over the scalar type via [`Real`]; `f64` aliases
//! for the main types live at the crate root.

pub mod commsim;
pub mod coupling;
pub mod errbound;
pub mod evolve;
pub mod geometry;
pub mod gl2d;
mod linalg;
pub mod operator;
pub mod quad;
pub mod scalar;
mod special;
pub mod spectral;

pub use geometry::{GeometryError, PatchGeometry};
pub use scalar::Real;

/// Eigen-system of the patch operator at `f64` precision.
pub type EigenSystem = spectral::EigenSystem<f64>;
/// Patch operator matrices at `f64` precision.
pub type PatchOperator = operator::PatchOperator<f64>;
/// Patch field at `f64` precision.
pub type FieldVector = evolve::FieldVector<f64>;
/// Mesoscale accumulator history at `f64` precision.
pub type MesoHistory = evolve::MesoHistory<f64>;
/// Error-bound bundle at `f64` precision.
pub type BoundReport = errbound::BoundReport<f64>;
/// Ginzburg-Landau experiment configuration at `f64` precision.
pub type GlConfig = gl2d::GlConfig<f64>;
/// Completed Ginzburg-Landau patch run at `f64` precision.
pub type GlRun = gl2d::GlRun<f64>;
