use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_gmopt");

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture(name: &str) -> PathBuf {
    repo().join("crates/core/tests/fixtures").join(name)
}

fn gmopt(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn quick_afe(out: &Path, extra_train: &str) -> String {
    format!(
        r#"{{
  "mode": "train-afe",
  "seed": 3,
  "out_dir": "{}",
  "afe": {{
    "dataset": {{"synthetic": {{"train_per_class": 12, "test_per_class": 4, "duration_s": 0.25}}}},
    "train": {{"epochs": 2{extra_train}}},
    "eval_snr_db": [0.0]
  }}
}}"#,
        out.display()
    )
}

#[test]
fn unknown_subcommand_prints_usage() {
    let o = gmopt(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn eval_filter_peaks_near_unit_frequency() {
    let o = gmopt(&["eval-filter", "--phi-g", "1", "--phi-c", "1", "--freqs", "10:1000:100"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("f_hz,mag,mag_db,phase_rad"));
    let rows: Vec<(f64, f64)> = lines
        .map(|l| {
            let c: Vec<f64> = l.split(',').map(|v| v.parse().unwrap()).collect();
            (c[0], c[1])
        })
        .collect();
    assert_eq!(rows.len(), 100);
    let peak = rows.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
    let f_unit = 3.84e-9 / (4.0 * std::f64::consts::PI * 3.2e-12);
    let nearest = rows
        .iter()
        .map(|r| r.0)
        .min_by(|a, b| (a - f_unit).abs().total_cmp(&(b - f_unit).abs()))
        .unwrap();
    assert_eq!(peak, nearest);
}

#[test]
fn eval_filter_writes_file_and_rejects_bad_grids() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("h.csv");
    let o = gmopt(&[
        "eval-filter", "--phi-g", "2", "--phi-c", "0.5", "--freqs", "1:100:5", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 6);
    for bad in [["--freqs", "100:1:5"], ["--freqs", "1:100"]] {
        let o = gmopt(&["eval-filter", "--phi-g", "1", "--phi-c", "1", bad[0], bad[1]]);
        assert_eq!(o.status.code(), Some(2));
    }
    let o = gmopt(&["eval-filter", "--phi-g", "0", "--phi-c", "1", "--freqs", "1:2:3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_errors_are_line_anchored_and_leave_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let o = out.display();
    let cases: [(&str, String, &str, &str); 7] = [
        (
            "optimize",
            format!("{{\n  \"seed\": 1,\n  \"out_dir\": \"{o}\",\n  \"bogus\": true\n}}"),
            ":4:",
            "unknown field",
        ),
        (
            "optimize",
            format!("{{\n  \"out_dir\": \"{o}\"\n}}"),
            ":3:",
            "missing field `seed`",
        ),
        (
            "optimize",
            format!("{{\n  \"seed\": 1,\n  \"out_dir\": \"{o}\",\n  \"mobo\": {{\n    \"n_init\": 1\n  }}\n}}"),
            ":4:",
            "n_init",
        ),
        (
            "optimize",
            format!("{{\n  \"mode\": \"train-afe\",\n  \"seed\": 1,\n  \"out_dir\": \"{o}\"\n}}"),
            ":2:",
            "not optimize",
        ),
        (
            "optimize",
            format!("{{\n  \"seed\": 1,\n  \"out_dir\": \"{o}\",\n  \"mobo\": {{\"acq\": {{\n \"seed\": 9}}}}\n}}"),
            ":5:",
            "top-level seed",
        ),
        (
            "train-afe",
            format!("{{\n  \"seed\": 1,\n  \"out_dir\": \"{o}\",\n  \"afe\": {{\n    \"dataset\": {{\"wav_dir\": \"missing\"}}\n  }}\n}}"),
            ":5:",
            "missing",
        ),
        (
            "spice-render",
            format!("{{\n  \"seed\": 1,\n  \"out_dir\": \"{o}\",\n  \"render\": {{\n    \"template\": \"nope.cir\"\n  }}\n}}"),
            ":5:",
            "nope.cir",
        ),
    ];
    for (i, (cmd, text, line, needle)) in cases.iter().enumerate() {
        let cfg = write(dir.path(), &format!("c{i}.json"), text);
        let r = gmopt(&[cmd, "--config", cfg.to_str().unwrap()]);
        let err = stderr(&r);
        assert_eq!(r.status.code(), Some(2), "case {i}: {err}");
        assert!(err.contains(&format!("c{i}.json{line}")), "case {i}: {err}");
        assert!(err.contains(needle), "case {i}: {err}");
        assert!(!out.exists(), "case {i} created the output directory");
    }
}

#[test]
fn bundled_analytic_optimization_runs_the_full_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = repo().join("configs/optimize_analytic.json");
    let o = gmopt(&["optimize", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let trials = fs::read_to_string(out.join("trials.csv")).unwrap();
    let rows: Vec<&str> = trials.lines().skip(1).collect();
    assert_eq!(rows.len(), 35);
    assert_eq!(rows.iter().filter(|r| r.split(',').nth(1) == Some("init")).count(), 10);
    for f in ["state.json", "hv_trace.csv", "pareto.csv", "report.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["n_trials"], 35);
}

#[test]
fn resumed_run_matches_an_uninterrupted_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "small.json",
        r#"{"seed": 4, "out_dir": "unused", "mobo": {"n_init": 4, "n_acq": 3, "acq": {"restarts": 3, "probe_count": 64}}}"#,
    );
    let full = dir.path().join("full");
    let part = dir.path().join("part");
    for d in [&full, &part] {
        let o = gmopt(&["optimize", "--config", cfg.to_str().unwrap(), "--out", d.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    // Cut the second run back to its first five trials.
    let state_path = part.join("state.json");
    let mut state: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&state_path).unwrap()).unwrap();
    state["trials"].as_array_mut().unwrap().truncate(5);
    state["hv_trace"].as_array_mut().unwrap().truncate(5);
    fs::write(&state_path, serde_json::to_string(&state).unwrap()).unwrap();
    fs::remove_file(part.join("trials.csv")).unwrap();

    let o = gmopt(&[
        "optimize", "--config", cfg.to_str().unwrap(), "--out", part.to_str().unwrap(), "--resume",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["trials.csv", "hv_trace.csv", "pareto.csv"] {
        assert_eq!(fs::read(full.join(f)).unwrap(), fs::read(part.join(f)).unwrap(), "{f}");
    }

    let other = write(dir.path(), "other.json", r#"{"seed": 5, "out_dir": "unused", "mobo": {"n_init": 4, "n_acq": 3}}"#);
    let o = gmopt(&[
        "optimize", "--config", other.to_str().unwrap(), "--out", part.to_str().unwrap(), "--resume",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_simulator_exits_with_simulator_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!(
        r#"{{
  "seed": 1,
  "out_dir": "{}",
  "mobo": {{"n_init": 3, "n_acq": 1}},
  "spice": {{
    "path": "/nonexistent/simulator",
    "template": "{}",
    "map": {{"w1": "w1", "w2": "w2", "w3": "w3", "w4": "w4", "vcm": "vcm"}},
    "gm_plot": "dc",
    "ac_plot": "ac",
    "power": {{"plot": "m", "var": "power"}},
    "noise": {{"plot": "m", "var": "inoise"}}
  }}
}}"#,
        dir.path().join("out").display(),
        fixture("transconductor.cir").display()
    );
    let cfg = write(dir.path(), "spice.json", &cfg);
    let o = Command::new(BIN)
        .args(["optimize", "--backend", "spice", "--config", cfg.to_str().unwrap()])
        .env_remove("ANALOG_SPICE_PATH")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    // The analytic backend refuses a space it cannot evaluate.
    let cfg = write(
        dir.path(),
        "space.json",
        &format!(
            r#"{{"seed": 1, "out_dir": "{}", "design_space": {{"parameters": [{{"name": "x", "unit": "", "lower": 0, "upper": 1, "scale": "linear"}}]}}}}"#,
            dir.path().join("out2").display()
        ),
    );
    let o = gmopt(&["optimize", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_afe_writes_all_artifacts_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let ca = write(dir.path(), "a.json", &quick_afe(&a, ""));
    let cb = write(dir.path(), "b.json", &quick_afe(&b, ""));
    let o = gmopt(&["train-afe", "--config", ca.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = gmopt(&["--threads", "1", "train-afe", "--config", cb.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "model.json",
        "history.csv",
        "response_initial.csv",
        "response_learned.csv",
        "bank_initial.csv",
        "bank_learned.csv",
        "eval.json",
    ] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read_to_string(a.join("history.csv")).unwrap().lines().count(), 4);
}

#[test]
fn divergence_exits_with_code_4_and_keeps_last_good_state() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write(
        dir.path(),
        "d.json",
        &quick_afe(&out, r#", "lr_classifier": 50.0, "lr_phi": 50.0"#),
    );
    let o = gmopt(&["train-afe", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
    assert!(out.join("model_last_good.json").is_file());
    assert!(!out.join("model.json").exists());
}

#[test]
fn spice_render_matches_golden_and_accepts_trained_models() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "r.json",
        &format!(
            r#"{{"mode": "spice-render", "seed": 1, "out_dir": "{}", "render": {{"template": "{}", "values": {{"w1": 10.5, "w2": 3.25, "w3": 20.0, "w4": 1.0, "vcm": 0.85}}}}}}"#,
            dir.path().join("r").display(),
            fixture("transconductor.cir").display()
        ),
    );
    let o = gmopt(&["spice-render", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(dir.path().join("r/netlist.cir")).unwrap(),
        fs::read(fixture("transconductor.rendered.cir")).unwrap()
    );

    // A bank template filled from a trained model.
    let model_dir = dir.path().join("m");
    let afe = write(dir.path(), "afe.json", &quick_afe(&model_dir, ""));
    assert!(gmopt(&["train-afe", "--config", afe.to_str().unwrap()]).status.success());
    let cfg = write(
        dir.path(),
        "b.json",
        &format!(
            r#"{{"seed": 1, "out_dir": "{}", "render": {{"template": "{}", "model": "m/model.json", "output": "bank.cir"}}}}"#,
            dir.path().join("b").display(),
            repo().join("configs/templates/bank.cir").display()
        ),
    );
    let o = gmopt(&["spice-render", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let netlist = fs::read_to_string(dir.path().join("b/bank.cir")).unwrap();
    assert!(!netlist.contains('{'));
    assert_eq!(netlist.lines().filter(|l| l.starts_with("GI_")).count(), 16);
}

#[test]
fn spice_parse_writes_one_csv_per_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p");
    let cfg = write(
        dir.path(),
        "p.json",
        &format!(
            r#"{{"seed": 1, "out_dir": "{}", "parse": {{"raw": "{}"}}}}"#,
            out.display(),
            fixture("rc_lowpass.raw").display()
        ),
    );
    let o = gmopt(&["spice-parse", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let plots: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("plots.json")).unwrap()).unwrap();
    let plots = plots.as_array().unwrap();
    assert_eq!(plots.len(), 2);
    assert_eq!(plots[1]["n_points"], 51);
    let csv = fs::read_to_string(out.join("plot1.csv")).unwrap();
    assert_eq!(csv.lines().count(), 52);

    let bad = write(dir.path(), "bad.raw", "Title: x\nPlotname: y\nFlags: real\nNo. Variables: 2\n");
    let cfg = write(
        dir.path(),
        "q.json",
        &format!(
            r#"{{"seed": 1, "out_dir": "{}", "parse": {{"raw": "{}"}}}}"#,
            dir.path().join("q").display(),
            bad.display()
        ),
    );
    let o = gmopt(&["spice-parse", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}
