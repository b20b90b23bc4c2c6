//! Scattering-style invariants of planar molecular densities and sparse
//! regression of atomization energies.

pub mod analyze;
pub mod density;
pub mod error;
pub mod fft;
pub mod invariants;
pub mod filterbank;
pub mod molecule;
pub mod numeric;
pub mod quadrature;
pub mod regress;
pub mod theory;

pub use error::{Error, Result};
