//! Finite-level quantum-classical model lab.
//!
//! A nuclear coordinate on a torus is coupled to a d-level electron system through a
//! real symmetric potential matrix V(X). The crate provides the classical approximations
//! (Ehrenfest, Born-Oppenheimer, Langevin, Smoluchowski), WKB fields, an exact grid
//! eigensolver for H = V(X) - (1/2M) d^2/dX^2, Gibbs sampling of electron coefficients,
//! oscillatory-integral tools and a convergence harness tying them together.

pub mod error;
pub mod dynamics;
pub mod espec;
pub mod gibbs;
pub mod lab;
pub mod model;
pub mod oscint;
pub mod qref;
pub mod rng;
pub mod spectral;
pub mod wkb;

pub use error::{Error, Result};
pub use model::{build_model, Family, ModelSpec, ModelSystem};
