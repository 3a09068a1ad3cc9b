//! End-to-end runs of the `hjlab` binary: exit codes, artifacts, schema
//! conformance and byte-level determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn hjlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hjlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn schema_errors(report: &Value) -> Vec<String> {
    let text = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/schema/report.schema.json")).unwrap();
    let schema: Value = serde_json::from_str(&text).unwrap();
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    validator.iter_errors(report).map(|e| format!("{e} at {}", e.instance_path())).collect()
}

/// Reads the report, checks the schema and that the exit code matches `pass`.
fn report(out: &Output, path: &Path) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let r: Value = serde_json::from_str(&fs::read_to_string(path).unwrap_or_else(|e| panic!("{e}; stderr: {stderr}"))).unwrap();
    let errs = schema_errors(&r);
    assert!(errs.is_empty(), "schema violations: {errs:?}");
    let expected = if r["pass"].as_bool().unwrap() { 0 } else { 1 };
    assert_eq!(out.status.code(), Some(expected), "stderr: {stderr}");
    r
}

const ABS_CONFIG: &str = "\
# |x| terminal data on [-1, 1]
grid.nx = 33
grid.nt = 17
grid.x0 = -1
grid.x1 = 1
grid.boundary = clamped
hamiltonian.p = 2
terminal.kind = abs
solver.interpolate = true
";

fn run_solve(dir: &TempDir, cfg: &Path, out_dir: &str) -> Output {
    let out_dir = dir.path().join(out_dir);
    hjlab(&["solve", "--config", cfg.to_str().unwrap(), "--out", "u.csv", "--out-dir", out_dir.to_str().unwrap()])
}

#[test]
fn solve_writes_field_and_report() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "abs.cfg", ABS_CONFIG);
    let out = run_solve(&dir, &cfg, "run");
    let r = report(&out, &dir.path().join("run/report.json"));
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(r["command"], "solve");
    assert_eq!(r["solve_report"]["iterations"], 16);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let first: Value = serde_json::from_str(stdout.lines().next().unwrap()).unwrap();
    assert_eq!(first["iterations"], 16);
    assert!(stdout.contains("report: "));
    let csv = fs::read_to_string(dir.path().join("run/u.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,x1,value"));
    assert_eq!(csv.lines().count(), 1 + 33 * 17);
    // At t = 1 the field equals the terminal data.
    assert!(csv.lines().any(|l| l == "1,-1,1"));
}

#[test]
fn solve_reads_terminal_and_source_files() {
    let dir = TempDir::new().unwrap();
    let mut level = String::from("t,x1,value\n");
    let mut field = String::from("t,x1,value\n");
    for i in 0..5 {
        let x = i as f64 * 0.25;
        level.push_str(&format!("1,{x},{x}\n"));
    }
    for k in 0..3 {
        for i in 0..5 {
            field.push_str(&format!("{},{},0\n", k as f64 * 0.5, i as f64 * 0.25));
        }
    }
    write(dir.path(), "uT.csv", &level);
    write(dir.path(), "f.csv", &field);
    let cfg = write(
        dir.path(),
        "files.cfg",
        "grid.nx = 5\ngrid.nt = 3\nhamiltonian.p = 2\nterminal_file = uT.csv\nf_file = f.csv\n",
    );
    let out = run_solve(&dir, &cfg, "run");
    report(&out, &dir.path().join("run/report.json"));
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn malformed_config_exits_2_with_line_number() {
    let dir = TempDir::new().unwrap();
    for (text, line) in [
        ("grid.nx = 8\ngrid.nt = 8\nthis line is broken\n", 3),
        ("grid.nx = 8\n\ngrid.nxx = 8\n", 3),
        ("grid.nx = 8\ngrid.nx = 9\n", 2),
        ("grid.nx = eight\n", 1),
    ] {
        let cfg = write(dir.path(), "bad.cfg", text);
        let out = run_solve(&dir, &cfg, "bad");
        assert_eq!(out.status.code(), Some(2), "{text}");
        let stderr = String::from_utf8(out.stderr).unwrap();
        assert!(stderr.contains(&format!("line {line}")), "{stderr}");
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(hjlab(&["solve"]).status.code(), Some(2));
    assert_eq!(hjlab(&["diagnose", "--config", "x.cfg", "--check", "nope"]).status.code(), Some(2));
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "abs.cfg", ABS_CONFIG);
    let out = hjlab(&["solve", "--config", cfg.to_str().unwrap(), "--set", "grid.typo=3"]);
    assert_eq!(out.status.code(), Some(2));
    let missing = hjlab(&["solve", "--config", dir.path().join("absent.cfg").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn version_prints_build_identifier() {
    let out = hjlab(&["--version"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), format!("hjlab {}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn sharpness_reports_exact_thresholds() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = hjlab(&["sharpness", "--gamma", "0.75", "--q", "2", "--out", "report.json", "--out-dir", out_dir]);
    let r = report(&out, &dir.path().join("report.json"));
    assert!((r["eps_star"].as_f64().unwrap() - 2.5).abs() < 1e-12);
    assert!((r["m_min"].as_f64().unwrap() - 1.125).abs() < 1e-12);
    assert!((r["g_min"].as_f64().unwrap() - 0.5625).abs() < 1e-12);
    assert_eq!(r["m"], 2.0);
    assert_eq!(r["g_scale"], 1.0);
}

#[test]
fn sharpness_scan_report_conforms() {
    let dir = TempDir::new().unwrap();
    let out = hjlab(&[
        "sharpness",
        "--gamma",
        "0.75",
        "--q",
        "2",
        "--epsilons",
        "1,3",
        "--resolutions",
        "16,32,64",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    let r = report(&out, &dir.path().join("report.json"));
    assert_eq!(r["scan"]["verdicts"].as_array().unwrap().len(), 2);
    assert_eq!(r["expected_verdicts"], serde_json::json!(["bounded", "diverging"]));
}

#[test]
fn sharpness_rejects_gamma_out_of_range() {
    let out = hjlab(&["sharpness", "--gamma", "0.4", "--q", "2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn char_writes_path_csv() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "abs.cfg", &format!("{ABS_CONFIG}char.c = 4\n"));
    let out_dir = dir.path().join("run");
    let out = hjlab(&[
        "char",
        "--config",
        cfg.to_str().unwrap(),
        "--start",
        "0,0.5",
        "--out",
        "path.csv",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    let r = report(&out, &out_dir.join("report.json"));
    assert_eq!(r["exit_reason"], "reached_horizon");
    assert_eq!(r["steps"], 16);
    let csv = fs::read_to_string(out_dir.join("path.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("k,t,x1,speed_q,cum_energy"));
    assert_eq!(csv.lines().count(), 18);
}

const MFG_CONFIG: &str = "\
grid.nx = 16
grid.nt = 9
mfg.T = 0.5
mfg.c = 1
mfg.r_prime = 2
hamiltonian.p = 2
solver.tol = 1e-9
";

fn run_mfg(dir: &Path, cfg: &Path, sub: &str, seed: Option<&str>) -> (Output, PathBuf) {
    let out_dir = dir.join(sub);
    let mut args = vec!["mfg", "--config", cfg.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()];
    if let Some(s) = seed {
        args.extend(["--seed", s]);
    }
    (hjlab(&args), out_dir)
}

#[test]
fn mfg_writes_fields_and_certificate() {
    let dir = TempDir::new().unwrap();
    let mut m0 = String::from("t,x1,value\n");
    for i in 0..16 {
        let x = i as f64 / 16.0;
        m0.push_str(&format!("0,{x},{}\n", 1.0 + 0.1 * (2.0 * std::f64::consts::PI * x).sin()));
    }
    write(dir.path(), "m0.csv", &m0);
    let cfg = write(dir.path(), "mfg.cfg", &format!("{MFG_CONFIG}mfg.m0_file = m0.csv\n"));
    let (out, out_dir) = run_mfg(dir.path(), &cfg, "run", None);
    let r = report(&out, &out_dir.join("report.json"));
    assert_eq!(out.status.code(), Some(0));
    assert!(r["certification"]["mass_defect"].as_f64().unwrap() < 1e-8);
    for f in ["u.csv", "m.csv"] {
        let text = fs::read_to_string(out_dir.join(f)).unwrap();
        assert_eq!(text.lines().count(), 1 + 16 * 9);
    }
}

#[test]
fn mfg_rejects_unnormalized_density() {
    let dir = TempDir::new().unwrap();
    let mut m0 = String::from("t,x1,value\n");
    for i in 0..16 {
        m0.push_str(&format!("0,{},2\n", i as f64 / 16.0));
    }
    write(dir.path(), "m0.csv", &m0);
    let cfg = write(dir.path(), "mfg.cfg", &format!("{MFG_CONFIG}mfg.m0_file = m0.csv\n"));
    let (out, _) = run_mfg(dir.path(), &cfg, "run", None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn identical_inputs_give_identical_csv() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "abs.cfg", ABS_CONFIG);
    run_solve(&dir, &cfg, "a");
    run_solve(&dir, &cfg, "b");
    assert_eq!(
        fs::read(dir.path().join("a/u.csv")).unwrap(),
        fs::read(dir.path().join("b/u.csv")).unwrap()
    );
    let mcfg = write(dir.path(), "mfg.cfg", MFG_CONFIG);
    let (_, a) = run_mfg(dir.path(), &mcfg, "ma", Some("11"));
    let (_, b) = run_mfg(dir.path(), &mcfg, "mb", Some("11"));
    for f in ["u.csv", "m.csv"] {
        let (x, y) = (fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        assert!(x == y, "{f} differs between identical runs");
    }
    // Reports differ only in the output paths.
    let strip = |d: &Path| {
        let mut r: Value = serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
        r.as_object_mut().unwrap().remove("outputs");
        r
    };
    assert_eq!(strip(&a), strip(&b));
}

fn diagnose(dir: &Path, cfg_text: &str, check: &str) -> (Output, Value) {
    let cfg = write(dir, &format!("{check}.cfg"), cfg_text);
    let out_dir = dir.join(check);
    let out = hjlab(&[
        "diagnose",
        "--config",
        cfg.to_str().unwrap(),
        "--check",
        check,
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    let r = report(&out, &out_dir.join("report.json"));
    assert_eq!(r["check"], check);
    (out, r)
}

#[test]
fn diagnose_maximal_weak_type() {
    let dir = TempDir::new().unwrap();
    let text = "diagnose.values = 0, 3, 1, 0.5, 7, 0\ndiagnose.lo = -1\ndiagnose.hi = 1\ndiagnose.alphas = 0.5, 1, 4\n\
                hamiltonian.p = 2\n";
    let (out, r) = diagnose(dir.path(), text, "maximal");
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(r["windows"].as_array().unwrap().len(), 3);
}

const SLOPE2_CONFIG: &str = "\
grid.nx = 65
grid.nt = 65
grid.x0 = -1
grid.x1 = 1
hamiltonian.p = 2
terminal.kind = abs
terminal.slope = 2
solver.interpolate = true
";

#[test]
fn diagnose_window_checks_conform() {
    let dir = TempDir::new().unwrap();
    let common = format!(
        "{SLOPE2_CONFIG}diagnose.centers = 0.5:0, 0.5:0.3\ndiagnose.h = 0.05\ndiagnose.lambda = 1.5\ndiagnose.constant = 100\n"
    );
    for check in ["goodtime", "revholder", "stopradius", "goodlambda", "dtcube"] {
        diagnose(dir.path(), &common, check);
    }
}

#[test]
fn diagnose_blowup_separates_kink_from_smooth_points() {
    let dir = TempDir::new().unwrap();
    // Concave data keeps its kink at x = 0; convex data is smoothed there.
    let concave = format!(
        "{SLOPE2_CONFIG}terminal.value = 0\ndiagnose.centers = 0.5:0, 0.5:0.5\ndiagnose.rhos = 0.4, 0.25, 0.125\n"
    )
    .replace("terminal.slope = 2", "terminal.slope = -2");
    let (_, r) = diagnose(dir.path(), &concave, "blowup");
    let verdicts: Vec<&str> = r["windows"].as_array().unwrap().iter().map(|w| w["verdict"].as_str().unwrap()).collect();
    assert_eq!(verdicts, ["not_differentiable", "differentiable_like"]);
    let convex = format!("{SLOPE2_CONFIG}diagnose.centers = 0.5:0\ndiagnose.rhos = 0.4, 0.25, 0.125\n");
    let (_, r) = diagnose(dir.path(), &convex, "blowup");
    assert_eq!(r["windows"][0]["verdict"], "differentiable_like");
}

#[test]
fn diagnose_violated_inequality_exits_1() {
    let dir = TempDir::new().unwrap();
    let text = format!("{SLOPE2_CONFIG}diagnose.centers = 0.5:0.3\ndiagnose.h = 0.1\ndiagnose.constant = 1e-9\n");
    let (out, r) = diagnose(dir.path(), &text, "dtcube");
    assert_eq!(r["pass"], false);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sobolev_scan_and_diagnose_agree() {
    let dir = TempDir::new().unwrap();
    let base = "grid.x0 = -1\ngrid.x1 = 1\nhamiltonian.p = 2\nterminal.kind = linear\nsolver.interpolate = true\n";
    let (_, r) = diagnose(
        dir.path(),
        &format!("{base}diagnose.epsilons = 0.5, 1\ndiagnose.resolutions = 17, 33, 65\n"),
        "sobolev",
    );
    let verdicts: Vec<&str> = r["windows"].as_array().unwrap().iter().map(|w| w["verdict"].as_str().unwrap()).collect();
    assert_eq!(verdicts, ["bounded", "bounded"]);
    let cfg = write(dir.path(), "scan.cfg", base);
    let out_dir = dir.path().join("scan");
    let out = hjlab(&[
        "scan",
        "--config",
        cfg.to_str().unwrap(),
        "--epsilons",
        "0.5,1",
        "--resolutions",
        "17,33,65",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    let s = report(&out, &out_dir.join("report.json"));
    assert_eq!(s["scan"]["verdicts"], serde_json::json!(["bounded", "bounded"]));
}
