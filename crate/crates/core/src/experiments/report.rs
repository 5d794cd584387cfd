use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

use super::config::RunConfig;

/// Version tag written into every CSV schema line.
pub const SCHEMA_VERSION: &str = "v1";

/// A number with its standard error (0 for exact or deterministic values).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub std_error: f64,
}

impl Measured {
    pub fn new(value: f64, std_error: f64) -> Self {
        Self { value, std_error }
    }

    pub fn exact(value: f64) -> Self {
        Self::new(value, 0.0)
    }
}

impl From<crate::quadrature::Estimate> for Measured {
    fn from(e: crate::quadrature::Estimate) -> Self {
        Self::new(e.value, e.std_error)
    }
}

/// One PASS/FAIL line, citing the operation that produced the number.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub operation: String,
    pub measured: Measured,
    pub tolerance: String,
    pub pass: bool,
}

impl Check {
    pub fn new(name: &str, operation: &str, measured: Measured, tolerance: impl Into<String>, pass: bool) -> Self {
        Self {
            name: name.into(),
            operation: operation.into(),
            measured,
            tolerance: tolerance.into(),
            pass,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {} ± {} [{}] via {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            cell(self.measured.value),
            cell(self.measured.std_error),
            self.tolerance,
            self.operation
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fitted {
    pub name: String,
    pub operation: String,
    pub measured: Measured,
}

impl Fitted {
    pub fn new(name: &str, operation: &str, measured: Measured) -> Self {
        Self {
            name: name.into(),
            operation: operation.into(),
            measured,
        }
    }
}

/// Rows of one CSV file. Numbers are written in shortest round-trip form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len(), "table {}", self.name);
        self.rows.push(row);
    }

    pub fn schema_line(&self) -> String {
        format!("# schema: qsk/{}/{} columns={}", self.name, SCHEMA_VERSION, self.columns.join(","))
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut out = self.schema_line().into_bytes();
        out.push(b'\n');
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| crate::error::Error::Io(e.to_string()))
    }
}

/// A value that can go into a CSV cell.
pub trait CellValue {
    fn cell(&self) -> String;
}

impl CellValue for f64 {
    /// Shortest round-trip form, with exponents for tiny and huge values.
    fn cell(&self) -> String {
        let a = self.abs();
        if a != 0.0 && a.is_finite() && !(1e-5..1e16).contains(&a) {
            format!("{self:e}")
        } else {
            self.to_string()
        }
    }
}

macro_rules! plain_cell {
    ($($t:ty),*) => {$(
        impl CellValue for $t {
            fn cell(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_cell!(usize, u32, u64, i32, i64, bool, str, String);

impl<T: CellValue + ?Sized> CellValue for &T {
    fn cell(&self) -> String {
        (**self).cell()
    }
}

/// Formats a cell value.
pub fn cell<T: CellValue>(v: T) -> String {
    v.cell()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub config: Option<RunConfig>,
    pub checks: Vec<Check>,
    pub fitted: Vec<Fitted>,
    pub tables: Vec<Table>,
    /// Filled in by `emit_report`.
    pub manifest: Vec<ManifestEntry>,
    /// Directory the artifacts went to.
    pub directory: Option<PathBuf>,
}

impl RunReport {
    pub fn new(scenario: &str, config: &RunConfig) -> Self {
        Self {
            scenario: scenario.into(),
            config: Some(config.clone()),
            ..Self::default()
        }
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn fit(&mut self, name: &str, operation: &str, measured: Measured) {
        self.fitted.push(Fitted::new(name, operation, measured));
    }

    pub fn table(&mut self, t: Table) {
        self.tables.push(t);
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    scenario: &'a str,
    all_pass: bool,
    checks: &'a [Check],
    fitted: &'a [Fitted],
    tables: Vec<&'a str>,
    config: &'a Option<RunConfig>,
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A fresh `<scenario>-<UTC timestamp>` directory under `dir`.
fn fresh_dir(dir: &Path, scenario: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.6fZ");
    let name = if scenario.is_empty() { "report" } else { scenario };
    let base = dir.join(format!("{name}-{stamp}"));
    let mut path = base.clone();
    let mut k = 1;
    loop {
        match fs::create_dir(&path) {
            Ok(()) => return Ok(path),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                path = PathBuf::from(format!("{}-{k}", base.display()));
                k += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
}

/// Writes the CSV tables, the config echo and the JSON summary into a new
/// subdirectory of `dir`, then a `manifest.json` with the hash of each.
pub fn emit_report(report: &mut RunReport, dir: &Path) -> Result<Vec<ManifestEntry>> {
    let out = fresh_dir(dir, &report.scenario)?;
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    for t in &report.tables {
        files.push((format!("{}.csv", t.name), t.to_csv()?));
    }
    if let Some(c) = &report.config {
        files.push(("config.toml".into(), c.to_toml().into_bytes()));
    }
    let summary = Summary {
        scenario: &report.scenario,
        all_pass: report.all_pass(),
        checks: &report.checks,
        fitted: &report.fitted,
        tables: report.tables.iter().map(|t| t.name.as_str()).collect(),
        config: &report.config,
    };
    let mut json = serde_json::to_vec_pretty(&summary)?;
    json.push(b'\n');
    files.push(("summary.json".into(), json));
    let mut manifest = Vec::with_capacity(files.len());
    for (name, bytes) in &files {
        fs::write(out.join(name), bytes)?;
        manifest.push(ManifestEntry {
            file: name.clone(),
            bytes: bytes.len(),
            sha256: digest(bytes),
        });
    }
    let mut m = serde_json::to_vec_pretty(&manifest)?;
    m.push(b'\n');
    fs::write(out.join("manifest.json"), m)?;
    report.manifest = manifest.clone();
    report.directory = Some(out);
    Ok(manifest)
}
