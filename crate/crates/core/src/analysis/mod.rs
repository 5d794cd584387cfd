//! Weights, mean oscillation, medians and weighted Morrey norms as
//! sampled-ball estimators.

pub mod estimators;
pub mod field;
pub mod vmo;

pub use estimators::*;
pub use field::{CustomField, ExtremalData, ScalarField, Smoothness, Weight};
pub use vmo::{jn_levelset_decay, linear_fit, vmo_diagnostics, Curve, JnTable, LinearFit, VmoCfg, VmoCurves};
