//! Thermodynamic formalism for Markov circle maps.
//!
//! Map models with a Markov partition, Hölder potentials, the cylinder
//! refinement, a cylinder-level transfer operator with its leading
//! spectral data, conformal and equilibrium measures, and Monte Carlo
//! experiments on hitting and return times.

pub mod cylinders;
pub mod dynamics;
pub mod error;
pub mod fourier;
pub mod measure;
pub mod observable;
pub mod potential;
pub mod recurrence;
pub mod sampler;
pub mod stats;
pub mod transfer;

pub use cylinders::{Cylinder, CylinderTree};
pub use dynamics::{validate_hypotheses, HypothesisReport, Lift, MapModel, PartitionSpec, ValidatorParams};
pub use error::{Error, Result};
pub use fourier::Fourier;
pub use observable::Observable;
pub use potential::{Potential, PotentialKind};
