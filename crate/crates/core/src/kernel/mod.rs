//! The Cauchy-Szego kernel of the group and its truncations.

pub mod cutoff;
pub mod evaluator;
pub mod scan;
pub mod series;

pub use cutoff::{cutoff_phi, SmoothCutoff};
pub use evaluator::{build_kernel, KernelEvaluator, SINGULAR_TOL};
pub use series::{seed_series, CanonicalSeries, Term, TermSeries};
