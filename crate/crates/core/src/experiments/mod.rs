//! Scenario runner: configs in, PASS/FAIL checks and CSV tables out.

pub mod config;
pub mod report;
mod scenarios;

use crate::error::{Error, Result};

pub use config::{validate_config, Budgets, FieldSpec, IndicatorSpec, MorreySpec, RunConfig, SymbolClass, WeightSpec};
pub use report::{emit_report, Check, Fitted, ManifestEntry, Measured, RunReport, Table, SCHEMA_VERSION};

/// Every scenario name accepted by `evaluate`.
pub const SCENARIOS: &[&str] = &[
    "kernel-identities",
    "kernel-bounds",
    "group-geometry",
    "weights-and-norms",
    "commutator-boundedness",
    "truncation-gap",
    "vmo-diagnostics",
    "compactness-probe",
    "f0-bounds",
];

/// Runs a scenario in memory. Nothing is written to disk.
pub fn evaluate(cfg: &RunConfig) -> Result<RunReport> {
    if !SCENARIOS.contains(&cfg.scenario.as_str()) {
        return Err(Error::UnknownScenario(cfg.scenario.clone()));
    }
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(Error::InvalidConfig(v));
    }
    let mut rep = RunReport::new(&cfg.scenario, cfg);
    let run = match cfg.scenario.as_str() {
        "kernel-identities" => scenarios::kernel_identities,
        "kernel-bounds" => scenarios::kernel_bounds,
        "group-geometry" => scenarios::group_geometry,
        "weights-and-norms" => scenarios::weights_and_norms,
        "commutator-boundedness" => scenarios::commutator_boundedness,
        "truncation-gap" => scenarios::truncation_gap_scenario,
        "vmo-diagnostics" => scenarios::vmo_scenario,
        "compactness-probe" => scenarios::compactness_probe,
        _ => scenarios::f0_bounds,
    };
    run(cfg, &mut rep)?;
    Ok(rep)
}

/// `evaluate`, then write the artifacts under `cfg.out`.
pub fn run_scenario(cfg: &RunConfig) -> Result<RunReport> {
    let mut rep = evaluate(cfg)?;
    emit_report(&mut rep, std::path::Path::new(&cfg.out))?;
    Ok(rep)
}
