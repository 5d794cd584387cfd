use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qsk_core::experiments::ManifestEntry;

fn qsk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsk"))
        .args(args)
        .env("QSK_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_dirs(out: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.display().to_string()
}

#[test]
fn lists_every_scenario() {
    let o = qsk(&["--list-scenarios"]);
    assert!(o.status.success());
    let names: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(names.len(), 9);
    assert!(names.contains(&"group-geometry".to_string()));
    assert!(names.contains(&"f0-bounds".to_string()));
}

#[test]
fn group_geometry_passes_and_writes_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().display().to_string();
    let o = qsk(&["group-geometry", "--seed", "7", "--budget-scale", "0.05", "--out", &out]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("PASS group associativity"));
    assert!(text.contains("PASS rho left invariance"));
    assert!(!text.contains("FAIL"));

    let dirs = run_dirs(tmp.path());
    assert_eq!(dirs.len(), 1);
    let manifest: Vec<ManifestEntry> =
        serde_json::from_str(&fs::read_to_string(dirs[0].join("manifest.json")).unwrap()).unwrap();
    assert!(manifest.iter().any(|e| e.file == "identities.csv"));
    for e in &manifest {
        let bytes = fs::read(dirs[0].join(&e.file)).unwrap();
        assert_eq!(bytes.len(), e.bytes, "{}", e.file);
    }
    let echo = fs::read_to_string(dirs[0].join("config.toml")).unwrap();
    assert!(echo.contains("seed = 7"));
    assert!(echo.contains("scenario = \"group-geometry\""));
}

#[test]
fn rerun_from_the_echoed_config_reproduces_the_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let o = qsk(&["group-geometry", "--budget-scale", "0.05", "--out", &a.display().to_string()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = run_dirs(&a).remove(0);
    let echo = first.join("config.toml").display().to_string();
    let o = qsk(&["--config", &echo, "--out", &b.display().to_string()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let second = run_dirs(&b).remove(0);
    let csvs: Vec<PathBuf> = run_dirs(&first).into_iter().filter(|p| p.extension().is_some_and(|e| e == "csv")).collect();
    assert!(!csvs.is_empty());
    for p in csvs {
        let name = p.file_name().unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(second.join(name)).unwrap(), "{}", p.display());
    }
}

#[test]
fn failing_check_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    // growth of |g|^0.01 over three decades is far below 2x
    let cfg = write(tmp.path(), "weak.toml", "[b]\nkind = \"power-hnorm\"\na = 0.01\n");
    let out = tmp.path().join("runs").display().to_string();
    let o = qsk(&["commutator-boundedness", "--config", &cfg, "--budget-scale", "0.05", "--out", &out]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("FAIL power-hnorm(0.01)"));
}

#[test]
fn invalid_config_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", "[morrey]\nkappa = 1.0\n");
    let o = qsk(&["group-geometry", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("morrey.kappa"), "{}", stderr(&o));
}

#[test]
fn unknown_keys_and_scenarios_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "typo.toml", "sede = 3\n");
    let o = qsk(&["group-geometry", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sede"), "{}", stderr(&o));

    let o = qsk(&["no-such-scenario"]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = write(tmp.path(), "named.toml", "scenario = \"no-such-scenario\"\n");
    let o = qsk(&["--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_scenario_is_a_usage_error() {
    let o = qsk(&[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no scenario"));
}

#[test]
fn bad_thread_count_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_qsk"))
        .args(["group-geometry"])
        .env("QSK_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("QSK_THREADS"));
}
