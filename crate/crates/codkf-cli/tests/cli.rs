//! End-to-end tests against the compiled binary: artifact shape,
//! determinism of reruns, certify output, and error reporting.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn codkf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_codkf"))
        .args(args)
        .output()
        .expect("spawning the binary")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn run_batch(dir: &Path, extra: &[&str]) -> Output {
    let out_dir = dir.to_str().unwrap();
    let mut args = vec![
        "run", "--runs", "1", "--steps", "5", "--nodes", "2", "--seed", "11", "--out-dir", out_dir,
    ];
    args.extend_from_slice(extra);
    codkf(&args)
}

#[test]
fn run_writes_the_expected_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_batch(tmp.path(), &[]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    let steps = fs::read_to_string(tmp.path().join("steps.csv")).unwrap();
    let mut lines = steps.lines();
    assert_eq!(
        lines.next().unwrap(),
        "run_id,k,filter,node_id,sq_error,trace_M,rho,cert_rank,certified"
    );
    // 1 run x 5 steps x 3 families x 2 nodes.
    assert_eq!(lines.count(), 30);

    let agg = fs::read_to_string(tmp.path().join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().next().unwrap(), "k,filter,mean_MSE,mean_rho,cert_rate");
    assert_eq!(agg.lines().count(), 1 + 5 * 3);

    let summary = fs::read_to_string(tmp.path().join("summary.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(parsed["config"]["seed"].as_u64(), Some(11));
    assert_eq!(parsed["runs_completed"].as_u64(), Some(1));
    assert!(!tmp.path().join("mse.svg").exists(), "plots are opt-in");
    assert!(stdout(&out).contains("1 runs x 5 steps"));
}

#[test]
fn reruns_with_equal_seeds_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run_batch(a.path(), &[]).status.success());
    assert!(run_batch(b.path(), &[]).status.success());
    for name in ["steps.csv", "aggregate.csv"] {
        let left = fs::read(a.path().join(name)).unwrap();
        let right = fs::read(b.path().join(name)).unwrap();
        assert_eq!(left, right, "{name} differs between identical batches");
    }
}

#[test]
fn filters_flag_limits_the_families_in_the_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_batch(tmp.path(), &["--filters", "codkf,ckf"]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let steps = fs::read_to_string(tmp.path().join("steps.csv")).unwrap();
    assert!(!steps.contains(",cdkf,"));
    assert_eq!(steps.lines().count(), 1 + 5 * 2 * 2);
}

#[test]
fn plots_flag_writes_svg_documents() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_batch(tmp.path(), &["--plots"]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    for name in ["mse.svg", "rho.svg"] {
        let text = fs::read_to_string(tmp.path().join(name)).unwrap();
        assert!(text.starts_with("<svg"), "{name} is not an svg");
        assert!(text.trim_end().ends_with("</svg>"));
    }
}

#[test]
fn config_file_drives_the_run_and_flags_override_it() {
    let tmp = tempfile::tempdir().unwrap();
    let config_path = tmp.path().join("config.json");
    let out_dir = tmp.path().join("out");
    fs::write(
        &config_path,
        format!(
            "{{\"runs\": 2, \"steps\": 4, \"nodes\": 3, \"out_dir\": \"{}\"}}",
            out_dir.display()
        ),
    )
    .unwrap();
    let out = codkf(&[
        "run",
        "--config",
        config_path.to_str().unwrap(),
        "--runs",
        "1",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let steps = fs::read_to_string(out_dir.join("steps.csv")).unwrap();
    // The flag wins over runs=2; steps and nodes come from the file.
    assert_eq!(steps.lines().count(), 1 + 4 * 3 * 3);
}

#[test]
fn invalid_config_values_name_the_offending_key() {
    let tmp = tempfile::tempdir().unwrap();
    let config_path = tmp.path().join("bad.json");

    fs::write(&config_path, "{\"edge_density\": 1.5}").unwrap();
    let out = codkf(&["run", "--config", config_path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("edge_density"), "stderr: {}", stderr(&out));

    fs::write(&config_path, "{\"edge_dens\": 0.3}").unwrap();
    let out = codkf(&["run", "--config", config_path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("edge_dens"), "stderr: {}", stderr(&out));
}

fn write_instance(dir: &Path, body: &str) -> String {
    let path = dir.join("instance.json");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn certify_reports_an_uncertified_two_ellipsoid_tie() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_instance(
        tmp.path(),
        r#"{"ellipsoids": [
            {"s_mat": [[4.0, 0.0], [0.0, 1.0]], "s_vec": [0.0, 0.0]},
            {"s_mat": [[1.0, 0.0], [0.0, 4.0]], "s_vec": [0.0, 0.0]}
        ]}"#,
    );
    let out = codkf(&["certify", &path]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("Tr(S_star) = 5"), "stdout: {text}");
    assert!(text.contains("certified: no"), "stdout: {text}");
}

#[test]
fn certify_accepts_a_single_ellipsoid() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_instance(
        tmp.path(),
        r#"{"ellipsoids": [
            {"s_mat": [[2.0, 0.5], [0.5, 3.0]], "s_vec": [1.0, -1.0]}
        ]}"#,
    );
    let out = codkf(&["certify", &path]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("rank(X_star) = 1"), "stdout: {text}");
    assert!(text.contains("certified: yes"), "stdout: {text}");
}

#[test]
fn certify_rejects_an_indefinite_matrix_by_name() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_instance(
        tmp.path(),
        r#"{"ellipsoids": [
            {"s_mat": [[1.0, 0.0], [0.0, -2.0]], "s_vec": [0.0, 0.0]}
        ]}"#,
    );
    let out = codkf(&["certify", &path]);
    assert!(!out.status.success());
    assert!(
        stderr(&out).contains("positive definite"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn certify_rejects_malformed_json_with_the_file_name() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_instance(tmp.path(), "{\"ellipsoids\": [");
    let out = codkf(&["certify", &path]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("instance.json"), "stderr: {}", stderr(&out));
}
