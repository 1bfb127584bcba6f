use std::path::Path;
use std::process::{Command, Output};

fn overtone(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_overtone")).args(args).output().expect("binary runs")
}

fn overtone_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_overtone")).args(args).env(key, value).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

type Exported = (Vec<(String, String)>, Vec<(f64, f64)>);

/// (metadata, rows) of an exported two-column CSV.
fn read_csv(path: &Path) -> Exported {
    let text = std::fs::read_to_string(path).unwrap();
    let mut meta = Vec::new();
    let mut rows = Vec::new();
    for line in text.lines().skip_while(|l| l.starts_with('#') && {
        let (k, v) = l[1..].split_once('=').unwrap();
        meta.push((k.trim().to_string(), v.trim().to_string()));
        true
    }).skip(1) {
        let (x, y) = line.split_once(',').unwrap();
        rows.push((x.parse().unwrap(), y.parse().unwrap()));
    }
    (meta, rows)
}

fn meta_value<'a>(meta: &'a [(String, String)], key: &str) -> &'a str {
    &meta.iter().find(|(k, _)| k == key).unwrap_or_else(|| panic!("no `{key}` in metadata")).1
}

#[test]
fn pentacene_field_profile_sits_about_3_5_mt_below_half_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("profile.csv");
    let o = overtone(&["field-profile", "--system", "pentacene", "--mw-ghz", "11.6", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (meta, rows) = read_csv(&out);
    let reference: f64 = meta_value(&meta, "reference_field_mt").parse().unwrap();
    assert!((reference - 207.0).abs() < 0.1);
    assert!((meta_value(&meta, "shift_mt").parse::<f64>().unwrap() + 3.5).abs() < 0.1);

    // both edge singularities of the profile lie in the −3…−4 mT band
    let mut peaks: Vec<(f64, f64)> = rows
        .windows(3)
        .filter(|w| w[1].1 > w[0].1 && w[1].1 >= w[2].1)
        .map(|w| (w[1].1, w[1].0 - reference))
        .collect();
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (first, second) = (peaks[0].1, peaks[1].1);
    for offset in [first, second] {
        assert!((-4.5..=-2.5).contains(&offset), "peak offset {offset} mT");
    }
    assert!((0.5 * (first + second) + 3.5).abs() < 0.3);
}

#[test]
fn nv_rabi_matches_the_closed_form_nutation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rabi.csv");
    let o = overtone(&["rabi", "--system", "nv", "--chi", "90", "--b0", "0.196", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let predicted = summary["predicted_nutation_mhz"].as_f64().unwrap();
    let fitted = summary["fitted_nutation_mhz"].as_f64().unwrap();
    assert!((fitted / predicted - 1.0).abs() < 0.1, "fitted {fitted} vs predicted {predicted}");

    // the exported trace fits back to the same frequency
    let fit = overtone(&["fit", "--input", out.to_str().unwrap(), "--model", "sinusoid"]);
    assert_eq!(code(&fit), 0, "{}", stderr(&fit));
    let refit: serde_json::Value = serde_json::from_slice(&fit.stdout).unwrap();
    assert!((refit["frequency_mhz"].as_f64().unwrap() / 2.0 / fitted - 1.0).abs() < 1e-6);
}

#[test]
fn outputs_are_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let args = |p: &Path| {
        ["powder", "--system", "nv", "--b0", "0.196", "--orientations", "3000", "--out"]
            .iter()
            .map(|s| s.to_string())
            .chain([p.to_str().unwrap().to_string()])
            .collect::<Vec<_>>()
    };
    let run = |p: &Path, threads: &str| {
        let args = args(p);
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = overtone_env(&refs, "OVERTONE_THREADS", threads);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    };
    run(&a, "1");
    run(&b, "4");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn usage_errors_exit_2() {
    let o = overtone(&["spectrum", "--no-such-flag"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(code(&overtone(&["no-such-command"])), 2);
    assert_eq!(code(&overtone(&["spectrum", "--chi", "120"])), 2);
    assert_eq!(code(&overtone(&["spectrum", "--system", "custom"])), 2);
    assert_eq!(code(&overtone_env(&["spectrum"], "OVERTONE_THREADS", "many")), 2);
}

#[test]
fn perturbative_guard_violation_exits_3() {
    // D = 5 GHz at 0.05 T is far outside the small-ε regime
    let o = overtone(&["rabi", "--system", "custom", "--d-mhz", "5000", "--b0", "0.05", "--frame", "rotating"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("numeric validity"));
}

#[test]
fn empty_trace_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    std::fs::write(&path, "# nothing\ntime_s,value\n").unwrap();
    assert_eq!(code(&overtone(&["fit", "--input", path.to_str().unwrap()])), 2);
}

#[test]
fn missing_input_reports_the_path() {
    let o = overtone(&["fit", "--input", "/nonexistent/trace.csv"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("/nonexistent/trace.csv"));
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# NV run\nsystem = nv\nb0 = 0.3\nomega1_mhz = 2\nbins = 50\n").unwrap();
    let out = dir.path().join("nut.csv");
    let o = overtone(&[
        "nutation-dist",
        "--config",
        cfg.to_str().unwrap(),
        "--b0",
        "0.196",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (meta, rows) = read_csv(&out);
    assert_eq!(meta_value(&meta, "system"), "nv");
    assert_eq!(meta_value(&meta, "b0_t"), "0.196");
    assert_eq!(meta_value(&meta, "omega1_mhz"), "2");
    assert_eq!(rows.len(), 50);
}

#[test]
fn json_export_mirrors_the_spectrum_fields() {
    let o = overtone(&["spectrum", "--system", "pentacene", "--bins", "64", "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["axis_kind"], "frequency");
    assert_eq!(v["axis"]["bins"], 64);
    assert_eq!(v["intensity"].as_array().unwrap().len(), 64);
    assert_eq!(v["normalized"], true);
    assert_eq!(v["metadata"]["system"], "pentacene");
}

#[test]
fn svg_export_is_a_labelled_polyline() {
    let o = overtone(&["field-profile", "--system", "nv", "--format", "svg"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let svg = String::from_utf8(o.stdout).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert!(svg.contains("<polyline") && svg.contains("field_mt") && svg.contains("intensity"));
}

#[test]
fn validate_lineshape_suite() {
    let ok = overtone(&["validate", "--suite", "lineshape", "--shift-model", "second-order"]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    let report: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["outcomes"].as_array().unwrap().len(), 3);

    // the full-commutator closed forms miss the oracle comparison: exit 4
    let full = overtone(&["validate", "--suite", "lineshape"]);
    assert_eq!(code(&full), 4, "{}", stderr(&full));
    assert!(stderr(&full).contains("[FAIL] criterion 2"));
}
