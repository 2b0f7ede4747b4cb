//! Numerical laboratory for smooth ergodic theory on low-dimensional tori
//! and boxes: Lyapunov spectra and exterior-power exponent sums, partition
//! entropy, entropy bounds, and Yomdin-type reparametrization of curves.

pub mod dynamics;
pub mod entropy;
pub mod error;
pub mod linalg;
pub mod lyapunov;
pub mod measures;
pub mod poly;
pub mod reparam;
pub mod scalar;
pub mod scenario;
pub mod stats;

pub use dynamics::{Diffeomorphism, MapFamily, MapSpec, Orbit, PhaseSpace, Point, SpaceKind};
pub use error::{Error, Result};
pub use linalg::TangentMatrix;
