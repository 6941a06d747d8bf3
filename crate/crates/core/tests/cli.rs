use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"
seed = 21

[kernel]
d = 2
alpha = 0.5
L = 4.0
profile = "linfty"

[percolation]
p = 0.99
n_max = 32
runs = 1200
k_mags = [0.5, 1.0, 1.5, 2.0]
r_values = [0.25]

[brw]
k_mags = [0.5, 1.0, 1.5, 2.0]
n_grid = [1000, 100000, 1000000]
"#;

fn lrperc(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_lrperc"))
        .arg("--config")
        .arg(dir.join("c.toml"))
        .args(args)
        .output()
        .unwrap()
}

fn setup(text: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), text).unwrap();
    dir
}

fn read(dir: &Path, out: &str, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(out).join(name)).unwrap()
}

#[test]
fn invalid_alpha_is_a_config_error_naming_the_field() {
    let dir = setup(&CONFIG.replace("alpha = 0.5", "alpha = -1.0"));
    let o = lrperc(dir.path(), &["kernel", "inspect"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpha"));
}

#[test]
fn csvs_do_not_depend_on_threads_and_carry_the_hash() {
    let dir = setup(CONFIG);
    let d = dir.path();
    for (t, out) in [("1", "a"), ("4", "b")] {
        let o = lrperc(d, &["--threads", t, "--out", d.join(out).to_str().unwrap(), "percolation", "run"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["percolation_summary.csv", "percolation_ratios.csv", "runs.bin"] {
        assert_eq!(read(d, "a", f), read(d, "b", f), "{f}");
    }
    let text = String::from_utf8(read(d, "a", "percolation_summary.csv")).unwrap();
    assert!(text.starts_with("# config_hash="));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = setup(CONFIG);
    let d = dir.path();
    let full = d.join("full");
    let cut = d.join("cut");
    assert!(lrperc(d, &["--out", full.to_str().unwrap(), "percolation", "run"]).status.success());
    assert!(lrperc(d, &["--out", cut.to_str().unwrap(), "percolation", "run"]).status.success());
    // simulate a crash part-way through a record
    let runs = cut.join("runs.bin");
    let len = std::fs::metadata(&runs).unwrap().len();
    std::fs::OpenOptions::new().write(true).open(&runs).unwrap().set_len(len * 2 / 5 + 3).unwrap();
    std::fs::remove_file(cut.join("percolation_summary.csv")).unwrap();
    let o = lrperc(d, &["--out", cut.to_str().unwrap(), "--resume", "percolation", "run"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["percolation_summary.csv", "percolation_ratios.csv", "runs.bin"] {
        assert_eq!(read(d, "full", f), read(d, "cut", f), "{f}");
    }
    // a different seed must not resume from this file
    let o = lrperc(d, &["--out", cut.to_str().unwrap(), "--resume", "--seed", "5", "percolation", "run"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empty_manifest_is_an_error() {
    let dir = setup(CONFIG);
    let out = dir.path().join("o");
    std::fs::create_dir_all(&out).unwrap();
    let empty = r#"{"config_hash":"","code_version":"","rng_algorithm":"","seed":0,"config":null,
        "created_unix":0,"updated_unix":0,"commands":{}}"#;
    std::fs::write(out.join("manifest.json"), empty).unwrap();
    let o = lrperc(dir.path(), &["--out", out.to_str().unwrap(), "report"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn brw_only_report_has_unit_constant() {
    let dir = setup(CONFIG);
    let out = dir.path().join("o");
    assert!(lrperc(dir.path(), &["--out", out.to_str().unwrap(), "brw", "limit"]).status.success());
    let o = lrperc(dir.path(), &["--out", out.to_str().unwrap(), "report"]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&read(dir.path(), "o", "report.json")).unwrap();
    let fit = report["measurements"]
        .as_array()
        .unwrap()
        .iter()
        .find(|m| m["command"] == "brw limit" && m["quantity"] == "fit")
        .expect("brw fit reported");
    let c = fit["value"]["c_hat"].as_f64().unwrap();
    assert!((c - 1.0).abs() < 0.02, "{c}");
    assert_eq!(fit["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn analysis_fit_reads_the_ratio_file() {
    let dir = setup(CONFIG);
    let out = dir.path().join("o");
    let o_arg = out.to_str().unwrap();
    assert!(lrperc(dir.path(), &["--out", o_arg, "brw", "limit"]).status.success());
    let o = lrperc(dir.path(), &["--out", o_arg, "analysis", "fit"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fit: serde_json::Value = serde_json::from_slice(&read(dir.path(), "o", "fit.json")).unwrap();
    assert!((fit["fit"]["c_hat"].as_f64().unwrap() - 1.0).abs() < 0.02);
}
