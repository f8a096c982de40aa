//! Finite-torus computations for magnetic tight-binding models: spectral
//! projections, the inverse Liouvillian, non-equilibrium almost-stationary
//! states (NEASS), Hall response and locality diagnostics.

pub mod error;
pub mod experiment;
pub mod fit;
pub mod jet;
pub mod lattice;
pub mod linalg;
pub mod localization;
pub mod neass;
pub mod operator;
pub mod response;
pub mod spectral;
pub mod superop;
pub mod svg;

pub use error::{Error, Result};
