use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_laica-lab"))
        .args(args)
        .env("LAICA_LAB_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, body).unwrap();
    p.display().to_string()
}

const SMALL_MAZE: &str = r#"{
    "env": {"type": "maze", "horizon": 20},
    "schedule": {"kind": "equal_split", "n_segments": 5, "episodes_per_segment": 4},
    "n_seeds": 2,
    "running_mean_window": 3,
    "learner": {"adaptation": {"iterations": 10, "trajectories": 3, "held_out_trajectories": 1}}
}"#;

#[test]
fn missing_config_exits_1_and_names_the_path() {
    let out = lab(&["run", "--config", "/definitely/not/here.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/definitely/not/here.json"), "{err}");
}

#[test]
fn malformed_config_exits_1_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "{\n  \"env\": {\"type\": \"maze\"},\n  \"schedule\": 3\n}");
    let out = lab(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line"), "{err}");
}

#[test]
fn unknown_field_exits_1_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"env": {"type": "maze", "stepscale": 0.1}, "schedule": {"kind": "equal_split", "n_segments": 5, "episodes_per_segment": 4}}"#,
    );
    let out = lab(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stepscale"));
}

#[test]
fn verify_theorem1_writes_one_row_per_change() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("t1");
    let out = lab(&[
        "verify-theorem1",
        "--instances",
        "4",
        "--seed",
        "9",
        "--grid",
        "16",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("theorem1.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4 * 5);
    assert!(rows.iter().all(|r| r.ends_with("true")));
}

#[test]
fn verify_corollary1_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("c1");
    let out = lab(&["verify-corollary1", "--seeds", "2", "--changes", "3", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("corollary1.json").exists());
}

#[test]
fn run_marks_four_changes_and_plot_data_reproduces_curves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_MAZE);
    let run_dir = dir.path().join("run");
    let out = lab(&["run", "--config", &cfg, "--seed", "5", "--out", run_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = fs::read_to_string(run_dir.join("curves.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "algorithm,episode,mean_return,std_error,is_change_marker");
    for alg in ["laica_ac", "baseline1", "baseline2"] {
        let markers: Vec<&str> = csv
            .lines()
            .filter(|l| l.starts_with(&format!("{alg},")) && l.ends_with(",1"))
            .collect();
        assert_eq!(markers.len(), 4, "{alg}");
    }
    assert_eq!(fs::read_dir(run_dir.join("trials")).unwrap().count(), 6);

    let replot = dir.path().join("replot.csv");
    let out = lab(&["plot-data", "--in", run_dir.to_str().unwrap(), "--out", replot.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(fs::read_to_string(replot).unwrap(), csv);
}

#[test]
fn adapt_report_prints_one_line_per_change() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_MAZE);
    let out = lab(&["adapt-report", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 5);
    assert!(stdout.lines().all(|l| l.contains("held_out_accuracy_post")));
}
