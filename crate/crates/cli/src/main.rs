use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::Parser;
use qsk_core::experiments::{run_scenario, validate_config, RunConfig, SCENARIOS};

/// Runs one named experiment and writes its CSV tables, JSON summary and
/// manifest. Exit status is 0 iff every check passes.
#[derive(Parser, Debug)]
#[command(name = "qsk", version)]
struct Args {
    /// Scenario to run; overrides `scenario` in the config file.
    #[arg(value_parser = PossibleValuesParser::new(SCENARIOS))]
    scenario: Option<String>,
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Parent directory of the timestamped run directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Multiplies every sample budget.
    #[arg(long, value_name = "FLOAT")]
    budget_scale: Option<f64>,
    /// Prints the scenario names and exits.
    #[arg(long)]
    list_scenarios: bool,
}

const USAGE_ERROR: u8 = 2;

fn load(args: &Args) -> Result<RunConfig, String> {
    let mut cfg = match &args.config {
        Some(p) => {
            let raw = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            validate_config(&raw).map_err(|e| format!("{}: {e}", p.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = &args.scenario {
        cfg.scenario = s.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    if let Some(b) = args.budget_scale {
        cfg.budget_scale = b;
    }
    if cfg.scenario.is_empty() {
        return Err("no scenario given (pass one, or set `scenario` in the config)".into());
    }
    Ok(cfg)
}

fn threads() -> Result<(), String> {
    let Ok(v) = std::env::var("QSK_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().map_err(|_| format!("QSK_THREADS={v}: expected a positive integer"))?;
    if n == 0 {
        return Err("QSK_THREADS must be positive".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let args = Args::parse();
    if args.list_scenarios {
        for s in SCENARIOS {
            println!("{s}");
        }
        return ExitCode::SUCCESS;
    }
    let cfg = match threads().and_then(|_| load(&args)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(USAGE_ERROR);
        }
    };
    let report = match run_scenario(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(USAGE_ERROR);
        }
    };
    for c in &report.checks {
        println!("{}", c.line());
    }
    for f in &report.fitted {
        println!("fitted {}: {} ± {} via {}", f.name, f.measured.value, f.measured.std_error, f.operation);
    }
    if let Some(d) = &report.directory {
        println!("wrote {}", d.display());
    }
    if report.all_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
