//! Truncated transforms, commutators and maximal operators applied by
//! quadrature, and operator-norm probes on weighted Morrey spaces.

pub mod apply;
pub mod extremal;
pub mod image;
pub mod kr;

pub use apply::{
    apply_c_eta, apply_commutator, hl_maximal, maximal_c_star, target_key, truncation_gap, GapReport, GapRow,
    QuadratureCfg, QuatEstimate,
};
pub use extremal::{build_f0, f0_bound_check, separation_probe, F0BoundReport, F0CheckCfg, F0Row, SeparationCfg, SeparationReport, F0};
pub use image::{
    balls_around, image_morrey_norm, morrey_operator_ratio, power_from_twins, support_strat, twin_key, CommutatorImage,
    ImageNormCfg, OperatorNormCfg,
    RatioReport,
};
pub use kr::{kr_conditions, KrCfg, KrReport};
