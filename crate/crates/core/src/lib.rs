//! Symmetric critical points of quasi-linear energies on discretized
//! group-invariant domains.
//!
//! The crate assembles `f(u) = ∫ j(u,|Du|) + |u|^p/p − |u|^q/q` on a grid,
//! restricts it to the space of functions fixed by a finite symmetry group,
//! finds mountain-pass critical points, and checks numerically that critical
//! points of the restricted problem are critical for the full one.

pub mod error;
pub mod functional;
pub mod grid;
pub mod group;
pub mod integrand;
mod par;
pub mod solver;
pub mod symmetrize;
pub mod verify;

pub use error::{Error, Result};
pub use functional::EnergyModel;
pub use grid::{build_domain, Domain, DomainKind, DomainSpec, GridFunction, Norm};
pub use group::{build_group, GroupLabel, SymmetryGroup};
pub use integrand::{Integrand, Modulated, PLaplace};
