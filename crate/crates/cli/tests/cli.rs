use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lattice-pbe"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("LATTICE_PBE_OUT")
        .output()
        .expect("binary runs")
}

fn manifest(out: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn help_lists_every_subcommand_and_flag() {
    let out = Command::new(env!("CARGO_BIN_EXE_lattice-pbe")).arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in ["estimate", "fit", "asymptotics", "experiment1", "experiment2", "timing", "surface", "--out"] {
        assert!(text.contains(sub), "missing {sub}");
    }
    let out = Command::new(env!("CARGO_BIN_EXE_lattice-pbe")).args(["experiment2", "--help"]).output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    for flag in ["--config", "--set", "--seed", "--out"] {
        assert!(text.contains(flag), "missing {flag}");
    }
}

#[test]
fn estimate_writes_triple_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["estimate", "--model", "ar1xar1", "--phi1", "0.9", "--phi2", "0.9", "--n", "20", "--regressor", "poly", "--seed", "7"];
    let out = run(dir.path(), &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = fs::read_to_string(dir.path().join("estimate.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&first).unwrap();
    for key in ["lse", "glse", "pbe"] {
        let b = v[key][0].as_f64().unwrap();
        assert!((b - 2.0).abs() < 1.0, "{key} = {b}");
    }
    let m = manifest(dir.path());
    assert_eq!(m["base_seed"], 7);
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);

    assert!(run(dir.path(), &args).status.success());
    assert_eq!(fs::read_to_string(dir.path().join("estimate.json")).unwrap(), first);
}

#[test]
fn experiment_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, "models = [\"ar1xar2\"]\nregressor = \"polyharmonic\"\nsizes = [10]\nfit_size = 10\nreplicates = 30\nfit_replicates = 20\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(out, &["experiment2", "--config", cfg, "--set", "approximations=[\"ar1xar1\"]"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csv_a = fs::read_to_string(a.join("experiment2.csv")).unwrap();
    assert_eq!(csv_a, fs::read_to_string(b.join("experiment2.csv")).unwrap());
    let mut rows = csv::Reader::from_reader(csv_a.as_bytes());
    let headers = rows.headers().unwrap().clone();
    let records: Vec<_> = rows.records().map(|r| r.unwrap()).collect();
    assert_eq!(records.len(), 1);
    let col = |name: &str| records[0][headers.iter().position(|h| h == name).unwrap()].to_string();
    assert_eq!(col("model"), "ar1xar2");
    assert!(col("pbe_ratio").parse::<f64>().unwrap() > 0.5);
    assert_eq!(manifest(&a)["config_hash"], manifest(&b)["config_hash"]);

    let o = run(&a, &["experiment1", "--config", cfg, "--seed", "99"]);
    assert!(o.status.success());
    assert_eq!(manifest(&a)["base_seed"], 99);
    assert!(a.join("experiment1.json").exists());
}

#[test]
fn surface_grid_has_requested_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["surface", "--approx", "ar2xar2", "--params", "0.5,-0.2,1.1,-0.3", "--res", "64"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("surface.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("lambda1,lambda2,density"));
    assert_eq!(lines.count(), 64 * 64);

    let o = run(dir.path(), &["surface", "--model", "matern1", "--res", "3"]);
    assert!(o.status.success());
    assert_eq!(manifest(dir.path())["command"], "surface");
}

#[test]
fn fit_and_asymptotics_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["fit", "--set", "models=[\"matern1\"]", "--set", "fit_size=12", "--set", "fit_replicates=10"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fits = fs::read_to_string(dir.path().join("fits.csv")).unwrap();
    assert_eq!(fits.lines().count(), 4);

    let o = run(dir.path(), &["asymptotics", "--regressor", "polyharmonic", "--model", "ar1xar2", "--approx", "ar1xar1"]);
    assert!(o.status.success());
    let text = fs::read_to_string(dir.path().join("asymptotics.csv")).unwrap();
    let line = text.lines().nth(1).unwrap();
    assert!(line.starts_with("ar1xar2,polyharmonic,ar1xar1,"), "{line}");
    let pbe_ratio: f64 = line.split(',').nth(7).unwrap().parse().unwrap();
    assert!((pbe_ratio - 1.283).abs() < 0.01, "{pbe_ratio}");
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| run(dir.path(), args).status.code();

    assert_eq!(code(&["experiment1", "--set", "replicatez=3"]), Some(2));
    assert_eq!(code(&["experiment1", "--set", "replicates=1"]), Some(2));
    assert_eq!(code(&["estimate", "--model", "matern2", "--phi1", "0.5"]), Some(2));
    assert_eq!(code(&["frobnicate"]), Some(2));
    assert_eq!(code(&["surface", "--approx", "ar1xar1", "--params", "1.5,0.2"]), Some(3));

    let err = run(dir.path(), &["surface", "--approx", "ar1xar1", "--params", "1.5,0.2"]).stderr;
    let v: serde_json::Value = serde_json::from_slice(&err).unwrap();
    assert_eq!(v["category"], "numerical");

    let file = dir.path().join("not-a-dir");
    fs::write(&file, "").unwrap();
    assert_eq!(run(&file, &["estimate"]).status.code(), Some(4));
    assert_eq!(code(&["experiment1", "--config", "/nonexistent/cfg.toml"]), Some(4));
}
