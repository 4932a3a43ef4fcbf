//! Numerics for constant and almost-constant mean-curvature spheres in the
//! half-space model of hyperbolic 3-space.
//!
//! Layers, bottom-up: [`hyp_geom`] (model primitives), [`sphere_chart`]
//! (stereographic discretization of S²), [`bubble_family`] (the solution
//! manifold and its tangent frame), [`linop`] (the operator and its
//! linearization), [`energy`], [`melnikov`] and [`reduction`].

pub mod bubble_family;
pub mod energy;
pub mod error;
pub mod hyp_geom;
pub mod linop;
pub mod melnikov;
pub mod prescribed;
pub mod quad;
pub mod reduction;
pub mod sphere_chart;
pub mod tolerances;

pub use error::{Error, Result};
pub use hyp_geom::{HyperbolicPoint, Vec3};
