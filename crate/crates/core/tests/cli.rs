use std::path::Path;
use std::process::Command;

use serde_json::Value;

use latfun::cli::{run, EXIT_IO, EXIT_OK, EXIT_USAGE};
use latfun::sweep::{CSV_HEADER, CSV_SCHEMA};

fn latfun(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("latfun").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn json(args: &[&str]) -> Value {
    let (code, out, err) = latfun(args);
    assert_eq!(code, EXIT_OK, "{args:?}: {err}");
    serde_json::from_str(&out).unwrap()
}

fn num(v: &Value, key: &str) -> f64 {
    v[key].as_f64().unwrap_or_else(|| panic!("{key} missing in {v}"))
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn lattice_region() {
    let v = json(&["region", "--scheme", "lattice", "--rho", "0.8", "--c", "0.8", "--d", "0.1"]);
    assert!((num(&v, "min_sum_rate_bits") - 7.2f64.log2()).abs() < 1e-12);
    assert!((num(&v, "sigma_z2") - 0.36).abs() < 1e-12);
}

#[test]
fn bt_region() {
    let v = json(&["region", "--scheme", "bt", "--rho", "0.8", "--c", "0.8", "--d", "0.1"]);
    assert_eq!(v["regime"], "interior");
    assert!((num(&v, "q1_star") - 0.0288 / 0.416).abs() < 1e-12);
    assert!((num(&v, "q2_star") - 0.036 / 0.2968).abs() < 1e-12);
    assert!((num(&v, "sum_rate_bits") - 0.5 * 66.56f64.log2()).abs() < 1e-12);

    let v = json(&["region", "--scheme", "bt", "--rho", "0.8", "--c", "0.8", "--d", "0.3"]);
    assert_eq!(v["regime"], "q2_infinite");
    assert!(v["q2_star"].is_null());

    let v = json(&["region", "--scheme", "bt", "--rho", "0.8", "--c", "0.8", "--d", "0.5"]);
    assert_eq!(v["regime"], "zero_rate");
    assert_eq!(num(&v, "sum_rate_bits"), 0.0);
}

#[test]
fn kuser_region_matches_the_two_user_schemes() {
    let dir = tempfile::tempdir().unwrap();
    let (s2, d) = (0.36f64, 0.1);
    let qa = s2 * d / (s2 - d);
    let single = write(
        dir.path(),
        "single.json",
        &format!(r#"{{"partition": [[1, 2]], "order": [1], "q": [{}, {}]}}"#, qa / 2.0, qa / 2.0),
    );
    let v = json(&["region", "--scheme", "kuser", "--rho", "0.8", "--c", "0.8", "--plan", &single]);
    let lat = json(&["region", "--scheme", "lattice", "--rho", "0.8", "--c", "0.8", "--d", "0.1"]);
    assert!((num(&v, "sum_rate_bits") - num(&lat, "min_sum_rate_bits")).abs() < 1e-12);
    assert!((num(&v, "distortion") - d).abs() < 1e-12);

    let (q1, q2) = (0.1, 0.1);
    let split = write(
        dir.path(),
        "split.json",
        &format!(r#"{{"partition": [[1], [2]], "order": [1, 2], "q": [{q1}, {q2}]}}"#),
    );
    let v = json(&["region", "--scheme", "kuser", "--rho", "0.8", "--c", "0.8", "--plan", &split]);
    let rates: Vec<f64> = v["rates_bits"].as_array().unwrap().iter().map(|r| r.as_f64().unwrap()).collect();
    assert!((rates[0] - 0.5 * 11f64.log2()).abs() < 1e-12);
    let model = latfun::SourceModel::two_user(0.8, 0.8).unwrap();
    let bt = latfun::regions::bt_rate_point(&model, q1, q2 / 0.64).unwrap();
    assert!((rates[1] - bt.r2).abs() < 1e-12);
    assert!((num(&v, "distortion") - bt.distortion).abs() < 1e-12);
}

#[test]
fn model_file_and_vector_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(
        dir.path(),
        "model.json",
        r#"{"K": 3, "cov": [1, 0, 0, 0, 1, 0, 0, 0, 1], "coeffs": [1, 1, 1]}"#,
    );
    let plan = write(dir.path(), "plan.json", r#"{"partition": [[1, 2, 3]], "order": [1], "q": [0.1, 0.1, 0.1]}"#);
    let v = json(&["region", "--scheme", "kuser", "--model", &m, "--plan", &plan]);
    assert!((num(&v, "distortion") - 0.9 / 3.3).abs() < 1e-12);
    let w = json(&["region", "--scheme", "kuser", "--model", &m, "--c", "2,-1,0.5", "--plan", &plan]);
    assert!((num(&w, "sigma_z2") - 5.25).abs() < 1e-12);
}

#[test]
fn sweep_presets() {
    let (code, out, _) = latfun(&["sweep", "--preset", "fig4"]);
    assert_eq!(code, EXIT_OK);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], CSV_SCHEMA);
    assert_eq!(lines[1], CSV_HEADER);
    assert_eq!(lines.len(), 2 + 256);
    assert!(lines[2].starts_with("0.8,0.8,0.02,"));
    assert_eq!(latfun(&["sweep", "--preset", "fig4"]).1, out);

    let (code, out, _) = latfun(&["sweep", "--preset", "fig5"]);
    assert_eq!(code, EXIT_OK);
    let rows: Vec<&str> = out.lines().skip(2).collect();
    assert_eq!(rows.len(), 9 * 81);
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        let c: f64 = cols[1].parse().unwrap();
        assert_eq!(cols[6].ends_with(";bt_tight"), c < 0.0);
    }
}

#[test]
fn sweep_grid_flags_and_file_output() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gap.csv");
    let (code, out, err) = latfun(&[
        "sweep", "--rho", "0.8", "--c", "-1:1:5", "--d", "0.1:1:4:log", "--d-relative", "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    let summary: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary["rows"], 20);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 2 + 5 * 4);

    let (code, out, _) = latfun(&["sweep", "--rho", "0.8", "--c", "-1:1:5", "--d", "0.1:1:4:log", "--d-relative", "--max-gap"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out.lines().count(), 2 + 5);

    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"rho": {"min": 0.8, "max": 0.8, "count": 1}, "c": {"min": 0.8, "max": 0.8, "count": 1},
            "d": {"min": 0.02, "max": 0.36, "count": 256, "log": true}, "reduce": "none"}"#,
    )
    .unwrap();
    let from_spec = latfun(&["sweep", "--spec", spec.to_str().unwrap()]).1;
    assert_eq!(from_spec, latfun(&["sweep", "--preset", "fig4"]).1);
}

#[test]
fn simulate_is_deterministic() {
    let args = ["simulate", "--rho", "0.8", "--c", "0.8", "--d", "0.1", "--q1", "0.06", "--trials", "20000", "--seed", "3", "--margin", "2"];
    let (code, a, _) = latfun(&args);
    assert_eq!(code, EXIT_OK);
    assert_eq!(latfun(&args).1, a);
    let v: Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["experiment"], "two_user");
    assert_eq!(v["trials"], 20000);
    assert!((num(&v, "dither_moment_target") - 0.36 * 0.36 / 0.26).abs() < 1e-12);

    let mut other = args.to_vec();
    other[12] = "4";
    assert_ne!(latfun(&other).1, a);
}

#[test]
fn simulate_variants() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["simulate", "--rho", "0.8", "--c", "0.8", "--trials", "20000", "--margin", "2"];

    let mut side = base.to_vec();
    side.extend(["--d", "0.03", "--side-info", "0.1"]);
    let v = json(&side);
    assert_eq!(v["experiment"], "side_info");
    assert!((num(&v, "conditional_distortion") - 0.03).abs() < 5.0 * num(&v, "conditional_std_error"));

    let plan = write(dir.path(), "plan.json", r#"{"partition": [[1], [2]], "order": [1, 2], "q": [0.1, 0.1]}"#);
    let mut k = base.to_vec();
    k.extend(["--plan", &plan]);
    let v = json(&k);
    assert_eq!(v["experiment"], "kuser");
    assert_eq!(v["cell_overload_rates"].as_array().unwrap().len(), 2);

    let mut snapped = base.to_vec();
    snapped.extend(["--d", "0.1", "--commensurate", "--fixed-dither"]);
    let v = json(&snapped);
    assert!(num(&v, "target_distortion") <= 0.1);
}

#[test]
fn simulate_appends_csv_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("runs.csv");
    let csv = csv.to_str().unwrap();
    for seed in ["1", "2"] {
        let (code, _, err) = latfun(&[
            "simulate", "--rho", "0.8", "--c", "0.8", "--d", "0.1", "--trials", "10000", "--seed", seed, "--csv", csv,
        ]);
        assert_eq!(code, EXIT_OK, "{err}");
    }
    let text = std::fs::read_to_string(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "# schema=1");
    assert!(lines[1].starts_with("experiment,trials,n,seed"));
    assert!(lines[2].starts_with("two_user,10000,1,1,"));
    assert!(lines[3].starts_with("two_user,10000,1,2,"));
}

#[test]
fn lattice_commands() {
    let v = json(&["lattice", "--op", "nsm", "--dim", "1"]);
    assert!((num(&v, "nsm") - 1.0 / 12.0).abs() < 1e-12);
    assert_eq!(v["exact"], true);

    let v = json(&["lattice", "--op", "cosets", "--dim", "2", "--scale", "2"]);
    assert_eq!(v["coset_count"], 4);
    assert_eq!(v["index"], 4);

    let v = json(&["lattice", "--op", "construction-a", "--dim", "2", "--p", "3", "--k", "1", "--seed", "5"]);
    assert_eq!(v["coset_count"], 3);
    assert_eq!(v["nested"], true);
    assert!((num(&v, "nesting_ratio") - 3f64.sqrt()).abs() < 1e-12);

    let v = json(&["lattice", "--lattice", "a2", "--op", "moment", "--samples", "20000", "--seed", "1"]);
    assert_eq!(v["exact"], false);
    assert!(num(&v, "second_moment_std_error") > 0.0);

    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "lat.json", r#"{"dim": 2, "gen": [2, 0, 0, 2]}"#);
    let v = json(&["lattice", "--lattice", "file", "--file", &file, "--op", "moment"]);
    assert!((num(&v, "second_moment") - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn usage_and_io_errors() {
    let (code, _, err) = latfun(&["simulate", "--rho", "0.8", "--c", "0.8", "--d", "0.1", "--q1", "0.5"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("--q1 0.5 outside the valid interval"), "{err}");

    assert_eq!(latfun(&["region", "--scheme", "lattice", "--rho", "0.8", "--c", "0.8"]).0, EXIT_USAGE);
    assert_eq!(latfun(&["region", "--scheme", "bt", "--rho", "0.8", "--c", "0.8", "--d", "-1"]).0, EXIT_USAGE);
    assert_eq!(latfun(&["region", "--scheme", "kuser", "--rho", "0.8", "--c", "0.8"]).0, EXIT_USAGE);
    assert_eq!(latfun(&["sweep", "--preset", "fig9"]).0, EXIT_USAGE);
    assert_eq!(latfun(&["sweep", "--rho", "0.8", "--c", "1:0:3", "--d", "0.1"]).0, EXIT_USAGE);
    assert_eq!(latfun(&["lattice", "--op", "construction-a", "--dim", "2"]).0, EXIT_USAGE);
    assert_eq!(latfun(&["bogus"]).0, EXIT_USAGE);
    assert_eq!(latfun(&["simulate", "--rho", "0.8", "--c", "0.8", "--d", "0.1", "--trials", "10"]).0, EXIT_USAGE);

    let (code, _, err) = latfun(&["region", "--scheme", "kuser", "--rho", "0.8", "--c", "0.8", "--plan", "/nonexistent/plan.json"]);
    assert_eq!(code, EXIT_IO, "{err}");
    assert_eq!(latfun(&["lattice", "--lattice", "file", "--file", "/nonexistent/l.json", "--op", "moment"]).0, EXIT_IO);
}

#[test]
fn help_documents_the_csv_schemas() {
    let (code, out, _) = latfun(&["--help"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("schema=1"));
    assert!(out.contains(CSV_HEADER));
    assert!(out.contains("LATFUN_THREADS"));
}

#[test]
fn binary_honours_thread_limit() {
    let bin = env!("CARGO_BIN_EXE_latfun");
    let args = ["sweep", "--rho", "0.2:0.8:4", "--c", "-1:2:7", "--d", "0.05:0.9:9", "--d-relative"];
    let one = Command::new(bin).args(args).env("LATFUN_THREADS", "1").output().unwrap();
    let many = Command::new(bin).args(args).env("LATFUN_THREADS", "4").output().unwrap();
    assert!(one.status.success() && many.status.success());
    assert_eq!(one.stdout, many.stdout);

    let bad = Command::new(bin).args(args).env("LATFUN_THREADS", "zero").output().unwrap();
    assert_eq!(bad.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("LATFUN_THREADS"));
}
