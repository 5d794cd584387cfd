//! Full-budget acceptance run. Prints one PASS/FAIL line per criterion.
//!
//! Every scenario runs once at its default budget; each criterion then
//! looks at the checks of the scenario(s) it covers plus the runtime.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use qsk_core::experiments::{evaluate, run_scenario, Check, RunConfig, RunReport, SCENARIOS};

struct Run {
    report: RunReport,
    elapsed: Duration,
}

fn run(name: &str) -> Run {
    let cfg = RunConfig {
        scenario: name.into(),
        ..RunConfig::default()
    };
    let t = Instant::now();
    let report = evaluate(&cfg).unwrap_or_else(|e| panic!("{name}: {e}"));
    Run {
        report,
        elapsed: t.elapsed(),
    }
}

struct Criterion {
    id: usize,
    title: &'static str,
    scenarios: &'static [&'static str],
    /// Picks the checks of those scenarios that belong to this criterion.
    select: fn(&Check) -> bool,
    limit: Duration,
}

fn op_in(c: &Check, ops: &[&str]) -> bool {
    ops.contains(&c.operation.as_str())
}

const fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn criteria() -> Vec<Criterion> {
    vec![
        Criterion {
            id: 1,
            title: "algebra exactness on 1e5 instances",
            scenarios: &["group-geometry"],
            select: |c| op_in(c, &["qmul", "conj", "gmul", "ginv", "gmul_structural", "im_bilinear"]),
            limit: secs(10),
        },
        Criterion {
            id: 2,
            title: "kernel series, closed form and point values",
            scenarios: &["kernel-identities"],
            select: |c| op_in(c, &["build_kernel", "eval_s"]),
            limit: secs(1),
        },
        Criterion {
            id: 3,
            title: "homogeneity of K and Y_j K",
            scenarios: &["kernel-identities"],
            select: |c| op_in(c, &["eval_k", "horizontal_gradient"]),
            limit: secs(30),
        },
        Criterion {
            id: 4,
            title: "size, gradient and Holder sups stabilize",
            scenarios: &["kernel-bounds"],
            select: |c| op_in(c, &["size_bound_scan", "gradient_bound_scan", "holder_scan"]),
            limit: secs(300),
        },
        Criterion {
            id: 5,
            title: "sign-constancy scan with one global constant",
            scenarios: &["kernel-bounds"],
            select: |c| op_in(c, &["sign_constancy_scan"]),
            limit: secs(300),
        },
        Criterion {
            id: 6,
            title: "median split and f0 properties",
            scenarios: &["f0-bounds"],
            select: |c| op_in(c, &["median_of", "build_f0"]),
            limit: secs(120),
        },
        Criterion {
            id: 7,
            title: "weight suite",
            scenarios: &["weights-and-norms"],
            select: |_| true,
            limit: secs(300),
        },
        Criterion {
            id: 8,
            title: "truncation gap constant stable across eta",
            scenarios: &["truncation-gap"],
            select: |_| true,
            limit: secs(600),
        },
        Criterion {
            id: 9,
            title: "boundedness dichotomy log vs power symbol",
            scenarios: &["commutator-boundedness"],
            select: |_| true,
            limit: secs(1200),
        },
        Criterion {
            id: 10,
            title: "compactness dichotomy: vanishing vs persistent oscillation and separation",
            scenarios: &["vmo-diagnostics", "compactness-probe"],
            select: |c| op_in(c, &["vmo_diagnostics", "separation_probe"]),
            limit: secs(1800),
        },
        Criterion {
            id: 11,
            title: "Kolmogorov-Riesz tails decay in M",
            scenarios: &["compactness-probe"],
            select: |c| op_in(c, &["kr_conditions"]),
            limit: secs(600),
        },
    ]
}

/// CSV hashes of one run written to a fresh directory.
fn csv_hashes(cfg: &RunConfig) -> Vec<(String, String)> {
    let rep = run_scenario(cfg).unwrap_or_else(|e| panic!("{}: {e}", cfg.scenario));
    rep.manifest
        .into_iter()
        .filter(|m| m.file.ends_with(".csv"))
        .map(|m| (m.file, m.sha256))
        .collect()
}

fn determinism() -> (bool, String) {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut bad = Vec::new();
    for name in SCENARIOS {
        let cfg = RunConfig {
            scenario: name.to_string(),
            budget_scale: 0.02,
            out: tmp.path().to_path_buf(),
            ..RunConfig::default()
        };
        let a = csv_hashes(&cfg);
        let b = csv_hashes(&cfg);
        if a.is_empty() || a != b {
            bad.push(name.to_string());
        }
    }
    let ok = bad.is_empty();
    let detail = if ok {
        format!("{} scenarios rerun at budget_scale 0.02, CSV sha256 identical", SCENARIOS.len())
    } else {
        format!("differing CSV: {}", bad.join(", "))
    };
    (ok, detail)
}

#[test]
fn acceptance() {
    let crit = criteria();
    let mut runs: BTreeMap<&str, Run> = BTreeMap::new();
    for c in &crit {
        for s in c.scenarios {
            runs.entry(s).or_insert_with(|| run(s));
        }
    }
    let mut lines = Vec::new();
    let mut all = true;
    for c in &crit {
        let checks: Vec<&Check> = c
            .scenarios
            .iter()
            .flat_map(|s| runs[s].report.checks.iter())
            .filter(|k| (c.select)(k))
            .collect();
        let elapsed: Duration = c.scenarios.iter().map(|s| runs[s].elapsed).sum();
        let in_time = elapsed <= c.limit;
        let pass = !checks.is_empty() && checks.iter().all(|k| k.pass) && in_time;
        all &= pass;
        lines.push(format!(
            "{} criterion {:>2}: {} ({} checks, {:.1}s of {}s)",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.title,
            checks.len(),
            elapsed.as_secs_f64(),
            c.limit.as_secs()
        ));
        for k in checks {
            lines.push(format!("    {}", k.line()));
        }
    }
    let t = Instant::now();
    let (ok, detail) = determinism();
    all &= ok;
    lines.push(format!(
        "{} criterion 12: byte-identical CSV on rerun ({detail}, {:.1}s)",
        if ok { "PASS" } else { "FAIL" },
        t.elapsed().as_secs_f64()
    ));
    // written past the test harness capture so the lines show in every run
    let mut out = std::io::stdout().lock();
    for l in &lines {
        writeln!(out, "{l}").expect("stdout");
    }
    drop(out);
    assert!(all, "acceptance failures:\n{}", lines.join("\n"));
}
