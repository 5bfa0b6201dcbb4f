// oracle digits are kept as printed by the high-precision reference
#![allow(clippy::excessive_precision)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn kinlmc(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_kinlmc"));
    c.args(args).env_remove("KLMC_THREADS").env_remove("KLMC_OUT_DIR");
    for (k, v) in envs {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn json_line(o: &Output) -> Value {
    let out = String::from_utf8_lossy(&o.stdout);
    let line = out.lines().last().unwrap_or_else(|| panic!("no stdout; stderr: {}", String::from_utf8_lossy(&o.stderr)));
    serde_json::from_str(line).expect("summary line is JSON")
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn sample_args<'a>(target: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "sample", "--target", target, "--kernel", "rm-ulmc", "--gamma", "2", "--h", "0.05", "--steps", "20",
        "--replicas", "16", "--thin", "10", "--seed", "3", "--out", out,
    ]
}

#[test]
fn sample_is_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let target = repo_file("configs/targets/kappa100.toml");
    let target = target.to_str().unwrap();
    let paths: Vec<PathBuf> = (0..3).map(|i| dir.path().join(format!("s{i}.csv"))).collect();
    for (p, threads) in paths.iter().zip(["1", "1", "3"]) {
        let o = kinlmc(&sample_args(target, p.to_str().unwrap()), &[("KLMC_THREADS", threads)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let first = read(&paths[0]);
    assert_eq!(first, read(&paths[1]));
    assert_eq!(first, read(&paths[2]));
    let mut lines = first.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    assert_eq!(lines.next().unwrap(), "step,replica,mean_x_norm,cov_trace_x,cov_trace_p,grad_evals");
    // 16 replicas, records at steps 10 and 20
    assert_eq!(lines.count(), 32);
}

#[test]
fn config_hash_tracks_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let target = repo_file("configs/targets/kappa100.toml");
    let target = target.to_str().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    kinlmc(&sample_args(target, a.to_str().unwrap()), &[]);
    let mut args = sample_args(target, b.to_str().unwrap());
    args[12] = "17"; // replicas
    kinlmc(&args, &[]);
    let head = |p: &Path| read(p).lines().next().unwrap().to_string();
    assert_ne!(head(&a), head(&b));
    assert!(head(&a).ends_with("seed=3"));
}

#[test]
fn missing_target_is_a_config_error_naming_the_path() {
    let o = kinlmc(&sample_args("/definitely/not/here.toml", "x.csv"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/definitely/not/here.toml"));
}

#[test]
fn bad_configs_and_flags_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[target]\nkind = \"gaussian\"\nspectrum = [1.0, -2.0]\n").unwrap();
    let o = kinlmc(&sample_args(bad.to_str().unwrap(), "x.csv"), &[("KLMC_OUT_DIR", dir.path().to_str().unwrap())]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::write(&bad, "[target\n").unwrap();
    assert_eq!(kinlmc(&sample_args(bad.to_str().unwrap(), "x.csv"), &[]).status.code(), Some(2));
    assert_eq!(kinlmc(&["sample", "--bogus"], &[]).status.code(), Some(2));
    assert_eq!(kinlmc(&["frobnicate"], &[]).status.code(), Some(2));
    let o = kinlmc(&["certify", "--regime", "strong"], &[("KLMC_THREADS", "zero")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bounds_prints_the_calculator_value() {
    let o = kinlmc(&["bounds", "--params", repo_file("configs/bounds/gaussian-kl.toml").to_str().unwrap()], &[]);
    assert!(o.status.success());
    let v = json_line(&o);
    let kl = v["result"].as_f64().unwrap();
    assert!((kl - 1.2915158642531614).abs() < 1e-12);
    let o = kinlmc(&["bounds", "--params", repo_file("configs/bounds/harnack-strong.toml").to_str().unwrap()], &[]);
    assert!((json_line(&o)["result"].as_f64().unwrap() - 19785.480106877772).abs() < 1e-8);
}

#[test]
fn certify_writes_into_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let o = kinlmc(
        &["certify", "--regime", "semiconvex", "--grid", "200", "--out", "cert.csv"],
        &[("KLMC_OUT_DIR", dir.path().to_str().unwrap())],
    );
    assert!(o.status.success());
    assert_eq!(json_line(&o)["violations"], 0);
    let csv = read(&dir.path().join("cert.csv"));
    assert_eq!(csv.lines().nth(1).unwrap(), "t,lambda,lambda_min,bound,slack");
    assert!(csv.lines().next().unwrap().ends_with("seed=none"));
}

#[test]
fn coupling_ibm_mode_reproduces_the_exact_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ibm.csv");
    let o = kinlmc(
        &["coupling", "--mode", "ibm-exact", "--gamma", "0.7", "--horizon", "1.5", "--dx", "1,-2", "--dp", "0.5,0", "--out", out.to_str().unwrap()],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(json_line(&o)["result"]["relative_gap"].as_f64().unwrap() < 1e-4);
    assert_eq!(read(&out).lines().nth(1).unwrap(), "t,twisted_dist,energy");
}

#[test]
fn local_error_reports_one_row_per_step_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("le.csv");
    let target = repo_file("configs/targets/kappa10.toml");
    let o = kinlmc(
        &[
            "local-error", "--target", target.to_str().unwrap(), "--kernel", "ulmc", "--gamma", "2", "--h-grid",
            "0.4,0.2,0.1,0.05", "--paths", "400", "--kref", "64", "--seed", "9", "--out", out.to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(&out);
    let mut lines = csv.lines().skip(1);
    assert_eq!(
        lines.next().unwrap(),
        "h,pos_strong,mom_strong,pos_weak,mom_weak,pos_strong_se,mom_strong_se,pos_weak_se,mom_weak_se"
    );
    assert_eq!(lines.count(), 4);
    let slope = json_line(&o)["exponents"]["pos_strong"]["exponent"].as_f64().unwrap();
    assert!((2.5..3.5).contains(&slope), "{slope}");
}

#[test]
fn accept_reports_every_selected_criterion() {
    let dir = tempfile::tempdir().unwrap();
    let o = kinlmc(&["accept", "--suite", "primary", "--only", "2,7", "--out-dir", dir.path().to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json_line(&o);
    assert_eq!((v["passed"].as_u64(), v["total"].as_u64()), (Some(2), Some(2)));
    assert!(dir.path().join("criterion-02-integrated-bm-limit.csv").exists());
    let summary = read(&dir.path().join("summary.csv"));
    assert_eq!(summary.lines().count(), 4);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("[PASS]  2") && stderr.contains("[PASS]  7"), "{stderr}");
}

#[test]
fn accept_does_not_mask_a_failing_criterion() {
    let dir = tempfile::tempdir().unwrap();
    let o = kinlmc(&["accept", "--only", "12", "--out-dir", dir.path().to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(json_line(&o)["failed"], serde_json::json!([12]));
}

#[test]
fn accept_rejects_unknown_criteria() {
    let o = kinlmc(&["accept", "--only", "15"], &[]);
    assert_eq!(o.status.code(), Some(2));
}
