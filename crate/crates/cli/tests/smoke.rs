use std::fs;
use std::path::Path;
use std::process::Command;

fn matchprod(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_matchprod"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .unwrap()
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, "[sim]\nn_firms = 100\nyears = 6\n[decompose]\nwindows = [[2003, 2008]]\n").unwrap();
    p.display().to_string()
}

#[test]
fn stages_one_by_one_produce_every_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    for stage in ["simulate", "screen", "akm", "quality", "paretofit", "estimate-pf", "matcheff", "decompose"] {
        let out = matchprod(dir.path(), &[stage, "--config", &cfg, "--seed", "5"]);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["manifest.txt", "firms.csv", "matches.csv", "akm_matches.csv", "firm_quality.csv", "paretofit.csv",
        "pf_coefficients.csv", "tfp.csv", "match_efficiency.csv", "matcheff_coefficients.csv",
        "decomposition.csv", "growth.csv", "dispersion.csv", "series_long.csv"]
    {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("sim.seed = 5\n"));
}

#[test]
fn missing_input_fails_with_stage_tag() {
    let dir = tempfile::tempdir().unwrap();
    let out = matchprod(dir.path(), &["estimate-pf"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[estimate-pf] missing input"));
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    fs::write(&p, "[sim]\nbogus = 1\n").unwrap();
    let out = matchprod(dir.path(), &["simulate", "--config", p.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("config parse error"));
}

#[test]
fn paretofit_reads_a_value_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("v.txt");
    let values: String = (1..=200).map(|i| format!("{}\n", (200.0 / i as f64).powf(1.0 / 1.8))).collect();
    fs::write(&p, values).unwrap();
    let out = matchprod(dir.path(), &["paretofit", "--input", p.to_str().unwrap(), "--threshold", "-1e9"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("lambda_hat=1.8"));
}
