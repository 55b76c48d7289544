use std::path::Path;
use std::process::{Command, Output};

fn altiloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_altiloc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scenario() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/reference_scenario.toml")
        .to_string_lossy()
        .into_owned()
}

#[test]
fn montecarlo_writes_csv_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("summary.csv");
    let o = altiloc(&[
        "montecarlo",
        "--config",
        &scenario(),
        "--runs",
        "4",
        "--sweep",
        "1e-6,1e-4",
        "--jobs",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "sigma2,method,rmse_3d_m,rmse_alt_m,converged_fraction");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("1e-6,proposed,"));
    assert!(lines[2].starts_with("1e-6,baseline,"));
}

#[test]
fn montecarlo_is_reproducible_across_job_counts() {
    let run = |jobs: &str| {
        let o = altiloc(&[
            "montecarlo",
            "--runs",
            "5",
            "--sweep",
            "1e-4",
            "--seed",
            "3",
            "--jobs",
            jobs,
        ]);
        assert!(o.status.success());
        o.stdout
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn run_emits_json_lines_trace() {
    let o = altiloc(&["run", "--format", "json-lines"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 9);
    for (k, rec) in lines.iter().enumerate() {
        assert_eq!(rec["trial"], 0);
        assert_eq!(rec["iteration"], k + 1);
        assert_eq!(rec["grid"].as_array().unwrap().len(), 4);
        assert_eq!(rec["u"].as_array().unwrap().len(), 4);
        assert_eq!(rec["state"].as_array().unwrap().len(), 6);
        assert!(rec["h_ml"].is_f64());
    }
}

#[test]
fn montecarlo_trace_file() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.jsonl");
    let o = altiloc(&[
        "montecarlo",
        "--runs",
        "3",
        "--sweep",
        "0",
        "--format",
        "json-lines",
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&trace).unwrap();
    let trials: Vec<u64> = text
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["trial"]
                .as_u64()
                .unwrap()
        })
        .collect();
    assert_eq!(trials.len(), 27);
    assert_eq!(trials[0], 0);
    assert_eq!(trials[26], 2);
    let summary = String::from_utf8(o.stdout).unwrap();
    assert_eq!(summary.lines().count(), 2);
}

#[test]
fn table1_prints_iteration_rows() {
    let o = altiloc(&["table1"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().next().unwrap().contains("i = 4"));
    assert_eq!(text.lines().count(), 1 + 2 * 10);
}

#[test]
fn synth_writes_one_row_per_epoch() {
    let o = altiloc(&["synth", "--sigma2", "1e-4", "--seed", "9"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("epoch,time_s,r10_m,r20_m,rdot10_mps,rdot20_mps,x_m,y_m,h_m\n"));
    assert_eq!(text.lines().count(), 1 + 26);
    assert_eq!(
        altiloc(&["synth", "--sigma2", "1e-4", "--seed", "9"]).stdout,
        text.as_bytes()
    );
}

#[test]
fn strict_flags_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.toml");
    let text = std::fs::read_to_string(scenario())
        .unwrap()
        .replace("max_iterations = 20", "max_iterations = 2");
    std::fs::write(&cfg, text).unwrap();
    let lenient = altiloc(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(lenient.status.success());
    let strict = altiloc(&["run", "--strict", "--config", cfg.to_str().unwrap()]);
    assert_eq!(strict.status.code(), Some(2));
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(scenario())
        .unwrap()
        .replace("runs = 1000", "runs = 0");
    std::fs::write(&cfg, text).unwrap();
    let o = altiloc(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`runs`"));
}

#[test]
fn collinear_layout_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("collinear.toml");
    let text = std::fs::read_to_string(scenario())
        .unwrap()
        .replace("[10000.0, 10000.0]", "[20000.0, 0.0]");
    std::fs::write(&cfg, text).unwrap();
    let o = altiloc(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("collinear"));
}

#[test]
fn failed_trials_give_nonzero_exit() {
    let o = altiloc(&["montecarlo", "--runs", "4", "--sweep", "1e10", "--jobs", "2"]);
    let stderr = String::from_utf8_lossy(&o.stderr);
    if stderr.contains("failed") {
        assert_eq!(o.status.code(), Some(1));
    } else {
        assert!(o.status.success());
    }
}
