//! Numerical laboratory for the geometry of area-preserving isotopies of surfaces.
//!
//! The crate measures L^p lengths of explicit isotopies of the disc and the flat
//! torus, lifts them to configuration spaces carrying the rescaled metric
//! `|v| / d(x)` (with `d` the distance to the big diagonal), extracts braid data
//! from the lifted trajectories, and assembles certified lower bounds on the
//! L¹-length of the resulting diffeomorphisms.
//!
//! Module map:
//!
//! * [`geometry`]: unit-area surfaces, distances, tangent norms, area sampling.
//! * [`flows`]: stream-function isotopies, RK4 advection, finger pushes.
//! * [`confspace`]: configurations, diagonal distance, rescaled lengths.
//! * [`functionals`]: L^p norms, singular-integral constants, embedding check.
//! * [`braids`]: winding matrices, Artin words, center-reduced lower bounds.
//! * [`bounds`]: product neighborhoods and the assembled two-sided estimate.
//! * [`parallel`]: seeded Monte Carlo fan-out (rayon or sequential).

pub mod bounds;
pub mod braids;
pub mod cli;
pub mod confspace;
pub mod error;
pub mod flows;
pub mod functionals;
pub mod geometry;
pub mod parallel;
pub mod verify;

pub use error::{Error, Result};
