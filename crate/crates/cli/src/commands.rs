//! Subcommand implementations.
//!
//! Every command writes `report.json` (or its `--out`) under `out_dir`. The
//! report carries `command`, `version`, `pass` and `outputs`, followed by
//! command-specific fields; `schema/report.schema.json` describes them.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hjlab::characteristics::{
    endpoint_displacement_holds, extract_characteristic, verify_supersolution_inequality, StopRule,
};
use hjlab::grid::read_level_csv;
use hjlab::hopf_lax::{solve_backward, HJProblem};
use hjlab::mfg::{certify_solution, coupling_primitives, solve_mfg_variational, MFGProblem, MfgOptions};
use hjlab::regularity::{
    blowup_differentiability_check, good_lambda_check, maximal_superlevel_measure, reverse_holder_check_fields,
    select_good_time, sobolev_exponent_scan, stopping_radius, time_derivative_cube_bound, CellFunction,
    DerivedFields, DtCubeParams, ExponentScanReport, GoodTime, IntrinsicScaleConfig, ScanRule, ScanVerdict,
    WindowTriple,
};
use hjlab::sharpness::{divergence_scan, sharpness_thresholds, SharpnessParams};
use hjlab::{Boundary, CubeWindow, GridSpec, ScalarField};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{config_error, Config};
use crate::problem::{
    grid_from_config, problem_from_config, problem_keys, solve_options, source_from_config, HamiltonianParams,
    HAMILTONIAN_KEYS,
};
use crate::{
    Check, CharArgs, DiagnoseArgs, MfgArgs, Outcome, RunConfig, RunError, ScanArgs, SharpnessArgs, SolveArgs,
};

const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Keys accepted by the Hamilton-Jacobi commands, so one file serves all of them.
fn hj_keys() -> Vec<&'static str> {
    [problem_keys().as_slice(), CHAR_KEYS, DIAGNOSE_KEYS].concat()
}

fn load(rc: &RunConfig, path: &Path, allowed: &[&str]) -> Result<Config, RunError> {
    let mut cfg = Config::load(path, allowed)?;
    cfg.apply_overrides(&rc.overrides, allowed)?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>, RunError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| RunError::Output(format!("cannot write {}: {e}", path.display())))
}

fn write_field(path: &Path, field: &ScalarField) -> Result<(), RunError> {
    field.write_csv(create(path)?)?;
    Ok(())
}

/// Writes the report envelope plus `body` (a JSON object) and returns the outcome.
fn finish(
    rc: &RunConfig,
    command: &str,
    report_path: PathBuf,
    pass: bool,
    outputs: &[&Path],
    body: Value,
    summary: String,
) -> Result<Outcome, RunError> {
    let mut report = json!({
        "command": command,
        "version": VERSION,
        "pass": pass,
        "seed": rc.seed,
        "outputs": outputs.iter().chain([&report_path.as_path()]).map(|p| p.display().to_string()).collect::<Vec<_>>(),
    });
    if let (Value::Object(dst), Value::Object(src)) = (&mut report, body) {
        dst.extend(src);
    }
    let mut w = create(&report_path)?;
    serde_json::to_writer_pretty(&mut w, &report).map_err(|e| RunError::Output(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| RunError::Output(e.to_string()))?;
    Ok(Outcome {
        pass,
        summary: format!("{command}: {} ({summary})", if pass { "PASS" } else { "FAIL" }),
        report_path,
        stdout: Vec::new(),
    })
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

// ---------------------------------------------------------------------------
// solve

pub fn solve(rc: &RunConfig, args: &SolveArgs) -> Result<Outcome, RunError> {
    let cfg = load(rc, &args.config, &hj_keys())?;
    let problem = problem_from_config(&cfg, None)?;
    let opts = solve_options(&cfg)?;
    let (u, report) = solve_backward(&problem, &opts)?;
    let u_path = rc.output(&args.out);
    write_field(&u_path, &u)?;
    let body = json!({
        "grid": problem.grid,
        "hamiltonian": HamiltonianParams::from_config(&cfg)?,
        "options": opts,
        "solve_report": report,
        "u_min": u.min(),
        "u_max": u.max(),
    });
    let summary = format!("{} steps, {} radius doublings", report.iterations, report.radius_doublings);
    let mut out = finish(rc, "solve", rc.out_dir.join("report.json"), true, &[&u_path], body, summary)?;
    out.stdout
        .push(serde_json::to_string(&report).map_err(|e| RunError::Output(e.to_string()))?);
    Ok(out)
}

// ---------------------------------------------------------------------------
// char

const CHAR_KEYS: &[&str] = &["char.c", "char.tol", "char.half_width", "char.time_cap"];

fn parse_point(s: &str, d: usize) -> Result<(f64, Vec<f64>), RunError> {
    let v = crate::config::parse_f64_list(s).map_err(config_error)?;
    if v.len() != d + 1 {
        return Err(config_error(format!("start point needs {} coordinates t,x1..., found {}", d + 1, v.len())).into());
    }
    Ok((v[0], v[1..].to_vec()))
}

pub fn characteristic(rc: &RunConfig, args: &CharArgs) -> Result<Outcome, RunError> {
    let cfg = load(rc, &args.config, &hj_keys())?;
    let problem = problem_from_config(&cfg, None)?;
    let opts = solve_options(&cfg)?;
    let (t0, x0) = parse_point(&args.start, problem.grid.d)?;
    let stop = match cfg.f64("char.half_width")? {
        Some(half_width) => StopRule::Window {
            center: x0.clone(),
            half_width,
            time_cap: cfg.f64_or("char.time_cap", problem.grid.t_hi - t0)?,
        },
        None => StopRule::Horizon,
    };
    let (u, _) = solve_backward(&problem, &opts)?;
    let path = extract_characteristic(&u, &problem, (t0, &x0), &stop, &opts)?;
    let out = rc.output(&args.out);
    path.write_csv(create(&out)?)?;
    let tol = cfg.f64_or("char.tol", 1e-8)?;
    let c = cfg.f64("char.c")?;
    let check = verify_supersolution_inequality(&u, &path, c.unwrap_or(1.0), tol)?;
    let displacement_ok = endpoint_displacement_holds(&path);
    let pass = displacement_ok && (c.is_none() || check.pass);
    let body = json!({
        "start": { "t": path.times[0], "x": path.points[0] },
        "end": { "t": path.times.last(), "x": path.points.last() },
        "steps": path.steps(),
        "energy": path.energy_xi,
        "exit_time": path.exit_time_tau,
        "exit_reason": path.exit_reason,
        "stop_rule": stop,
        "endpoint_displacement_holds": displacement_ok,
        "supersolution": {
            "c": c,
            "tolerance": tol,
            "margin": c.map(|_| check.margin),
            "pass": c.map(|_| check.pass),
            "min_c": check.min_c,
        },
    });
    let summary = format!("{} steps, energy {}, min C {}", path.steps(), path.energy_xi, check.min_c);
    finish(rc, "char", rc.out_dir.join("report.json"), pass, &[&out], body, summary)
}

// ---------------------------------------------------------------------------
// diagnose

const DIAGNOSE_KEYS: &[&str] = &[
    "u_file",
    "diagnose.centers",
    "diagnose.h",
    "diagnose.lambda",
    "diagnose.lambda0",
    "diagnose.kappa",
    "diagnose.c1",
    "diagnose.c2",
    "diagnose.eta",
    "diagnose.r1",
    "diagnose.constant",
    "diagnose.h_max",
    "diagnose.c_bar",
    "diagnose.rhos",
    "diagnose.epsilons",
    "diagnose.resolutions",
    "diagnose.values",
    "diagnose.lo",
    "diagnose.hi",
    "diagnose.alphas",
    "diagnose.samples_per_cell",
];

/// One row of a diagnose report.
#[derive(Clone, Debug, Serialize)]
pub struct WindowResult {
    pub center: Vec<f64>,
    pub h: Option<f64>,
    pub lambda: Option<f64>,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub min_constant: Option<f64>,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<String>,
}

impl WindowResult {
    fn new(center: Vec<f64>, pass: bool) -> Self {
        WindowResult {
            center,
            h: None,
            lambda: None,
            lhs: None,
            rhs: None,
            min_constant: None,
            pass,
            verdict: None,
        }
    }
}

fn required_list(cfg: &Config, key: &str) -> Result<Vec<f64>, RunError> {
    cfg.f64_list(key)?
        .ok_or_else(|| config_error(format!("missing required key `{key}`")).into())
}

fn centers(cfg: &Config, d: usize) -> Result<Vec<(f64, Vec<f64>)>, RunError> {
    let pts = cfg
        .point_list("diagnose.centers")?
        .ok_or_else(|| config_error("missing required key `diagnose.centers`"))?;
    pts.into_iter()
        .map(|p| {
            if p.len() != d + 1 {
                Err(cfg
                    .invalid("diagnose.centers", format!("centers need {} coordinates t:x1...", d + 1))
                    .into())
            } else {
                Ok((p[0], p[1..].to_vec()))
            }
        })
        .collect()
}

fn intrinsic_config(cfg: &Config, p: f64, d: usize) -> Result<IntrinsicScaleConfig, RunError> {
    let r1 = cfg.f64_or("diagnose.r1", 2.0 + d as f64 / p)?;
    let ic = IntrinsicScaleConfig {
        lambda0: cfg.f64_or("diagnose.lambda0", 1.0)?,
        kappa: cfg.f64_or("diagnose.kappa", 1.0)?,
        c1: cfg.f64_or("diagnose.c1", 2.0)?,
        c2: cfg.f64_or("diagnose.c2", 10.0)?,
        eta: cfg.f64_or("diagnose.eta", 0.5)?,
        r1,
        p,
    }
    .normalized()
    .map_err(|e| config_error(e.to_string()))?;
    ic.check_dimension(d).map_err(|e| config_error(e.to_string()))?;
    Ok(ic)
}

/// The value field: read from `u_file` or solved from the problem keys.
fn value_field(cfg: &Config) -> Result<(ScalarField, ScalarField), RunError> {
    if cfg.contains("u_file") {
        let grid = grid_from_config(cfg, None)?;
        let path = cfg.path("u_file").expect("checked");
        let file = File::open(&path).map_err(|e| cfg.invalid("u_file", format!("cannot open {}: {e}", path.display())))?;
        let u = ScalarField::read_csv(file, &grid)?;
        let f = source_from_config(cfg, &grid)?;
        return Ok((u, f));
    }
    let problem = problem_from_config(cfg, None)?;
    let (u, _) = solve_backward(&problem, &solve_options(cfg)?)?;
    Ok((u, problem.f))
}

fn require_constant(cfg: &Config) -> Result<f64, RunError> {
    let c = cfg.require_f64("diagnose.constant")?;
    if !(c > 0.0) {
        return Err(cfg.invalid("diagnose.constant", "diagnose.constant must be positive").into());
    }
    Ok(c)
}

fn verdict_name(v: ScanVerdict) -> &'static str {
    match v {
        ScanVerdict::Bounded => "bounded",
        ScanVerdict::Diverging => "diverging",
        ScanVerdict::Inconclusive => "inconclusive",
    }
}

pub fn diagnose(rc: &RunConfig, args: &DiagnoseArgs) -> Result<Outcome, RunError> {
    let cfg = load(rc, &args.config, &hj_keys())?;
    let mut params = serde_json::Map::new();
    let windows = match args.check {
        Check::Maximal => diagnose_maximal(&cfg, &mut params)?,
        Check::Sobolev => diagnose_sobolev(&cfg, &mut params)?,
        check => {
            let (u, f) = value_field(&cfg)?;
            let grid = u.grid().clone();
            let hp = HamiltonianParams::from_config(&cfg)?;
            params.insert("grid".into(), to_value(&grid));
            params.insert("p".into(), json!(hp.p));
            match check {
                Check::Blowup => {
                    let rhos = required_list(&cfg, "diagnose.rhos")?;
                    params.insert("rhos".into(), json!(rhos));
                    centers(&cfg, grid.d)?
                        .into_iter()
                        .map(|(t, x)| {
                            let rep = blowup_differentiability_check(&u, (t, &x), &rhos)?;
                            let mut w = WindowResult::new([vec![t], x].concat(), true);
                            w.lhs = rep.levels.last().map(|l| l.fit_error);
                            w.rhs = rep.levels.first().map(|l| l.fit_error);
                            w.verdict = Some(if rep.differentiable_like { "differentiable_like" } else { "not_differentiable" }.into());
                            Ok(w)
                        })
                        .collect::<Result<Vec<_>, RunError>>()?
                }
                Check::Dtcube => {
                    let ic = intrinsic_config(&cfg, hp.p, grid.d)?;
                    let dp = DtCubeParams {
                        c_bar: cfg.f64_or("diagnose.c_bar", 2.0)?,
                        r1: ic.r1,
                        p: hp.p,
                        c: require_constant(&cfg)?,
                    };
                    params.insert("dt_cube".into(), to_value(&dp));
                    let hs = required_list(&cfg, "diagnose.h")?;
                    let mut out = Vec::new();
                    for (t, x) in centers(&cfg, grid.d)? {
                        for &h in &hs {
                            let win = CubeWindow::new(t, x.clone(), 0.5 * h, 0.5 * h)?;
                            let rep = time_derivative_cube_bound(&u, &f, &win, &dp)?;
                            let mut w = WindowResult::new([vec![t], x.clone()].concat(), rep.margin >= -1e-12 * rep.rhs.abs().max(1.0));
                            w.h = Some(h);
                            w.lhs = Some(rep.lhs);
                            w.rhs = Some(rep.rhs);
                            w.min_constant = Some(rep.min_c);
                            out.push(w);
                        }
                    }
                    out
                }
                _ => {
                    let ic = intrinsic_config(&cfg, hp.p, grid.d)?;
                    params.insert("intrinsic".into(), to_value(&ic));
                    let fields = DerivedFields::new(&u, &f, hp.p, ic.r1)?;
                    let lambdas = required_list(&cfg, "diagnose.lambda")?;
                    match check {
                        Check::Goodlambda => {
                            let c = require_constant(&cfg)?;
                            params.insert("constant".into(), json!(c));
                            let rep = good_lambda_check(&fields.grad_abs, &f, &lambdas, &ic)?;
                            rep.stats
                                .iter()
                                .map(|s| {
                                    let mut w = WindowResult::new(vec![], s.integral_gp <= c * s.integral_data * (1.0 + 1e-12));
                                    w.lambda = Some(s.lambda);
                                    w.lhs = Some(s.integral_gp);
                                    w.rhs = Some(s.integral_data);
                                    w.min_constant = Some(if s.integral_gp == 0.0 { 0.0 } else { s.integral_gp / s.integral_data });
                                    w
                                })
                                .collect()
                        }
                        Check::Stopradius => {
                            let h_max = cfg.f64_or("diagnose.h_max", 0.25 * (grid.t_hi - grid.t_lo).min(grid.x_hi[0] - grid.x_lo[0]))?;
                            params.insert("h_max".into(), json!(h_max));
                            let mut out = Vec::new();
                            for (t, x) in centers(&cfg, grid.d)? {
                                for &lambda in &lambdas {
                                    let r = stopping_radius(&fields.combined, (t, &x), lambda, &ic, h_max)?;
                                    // Without a radius there is nothing to certify.
                                    let mut w = WindowResult::new([vec![t], x.clone()].concat(), true);
                                    w.lambda = Some(lambda);
                                    w.rhs = Some(lambda.powf(hp.p));
                                    if let Some(r) = r {
                                        w.h = Some(r.h);
                                        w.lhs = Some(r.dilated_average);
                                        w.min_constant = Some(r.dilated_average / lambda.powf(hp.p));
                                        w.pass = r.certified;
                                    } else {
                                        w.verdict = Some("no_radius".into());
                                    }
                                    out.push(w);
                                }
                            }
                            out
                        }
                        _ => {
                            let c = require_constant(&cfg)?;
                            params.insert("constant".into(), json!(c));
                            let hs = required_list(&cfg, "diagnose.h")?;
                            let mut out = Vec::new();
                            for (t, x) in centers(&cfg, grid.d)? {
                                for &h in &hs {
                                    for &lambda in &lambdas {
                                        let triple = WindowTriple::new(t, x.clone(), h, lambda, &ic)?;
                                        let mut w = WindowResult::new([vec![t], x.clone()].concat(), true);
                                        w.h = Some(h);
                                        w.lambda = Some(lambda);
                                        if check == Check::Goodtime {
                                            match select_good_time(&fields.grad_p, &f, &triple, &ic, c)? {
                                                GoodTime::Found { t, constant, .. } => {
                                                    w.lhs = Some(constant);
                                                    w.min_constant = Some(constant);
                                                    w.verdict = Some(format!("t = {t}"));
                                                }
                                                GoodTime::Infeasible { min_constant } => {
                                                    w.lhs = Some(min_constant);
                                                    w.min_constant = Some(min_constant);
                                                    w.pass = false;
                                                }
                                            }
                                            w.rhs = Some(c);
                                        } else {
                                            if !triple.inside(&grid) {
                                                return Err(config_error(format!(
                                                    "outer window at t = {t}, x = {x:?}, h = {h}, lambda = {lambda} leaves the grid"
                                                ))
                                                .into());
                                            }
                                            let rep = reverse_holder_check_fields(&fields, &triple, &ic)?;
                                            w.lhs = Some(rep.lhs);
                                            w.rhs = Some(rep.rhs_gradient + rep.rhs_data);
                                            w.min_constant = rep.min_c_hat;
                                            w.pass = rep.min_c_hat.is_none_or(|m| m <= c);
                                            w.verdict = Some(if rep.hypothesis_met { "hypothesis_met" } else { "hypothesis_not_met" }.into());
                                        }
                                        out.push(w);
                                    }
                                }
                            }
                            out
                        }
                    }
                }
            }
        }
    };
    let check_name = format!("{:?}", args.check).to_lowercase();
    let pass = windows.iter().all(|w| w.pass);
    let passed = windows.iter().filter(|w| w.pass).count();
    let summary = format!("{check_name}: {passed}/{} windows pass", windows.len());
    let body = json!({ "check": check_name, "params": params, "windows": windows });
    finish(rc, "diagnose", rc.output(&args.out), pass, &[], body, summary)
}

fn diagnose_maximal(cfg: &Config, params: &mut serde_json::Map<String, Value>) -> Result<Vec<WindowResult>, RunError> {
    let values = required_list(cfg, "diagnose.values")?;
    let lo = cfg.f64_or("diagnose.lo", 0.0)?;
    let hi = cfg.f64_or("diagnose.hi", 1.0)?;
    let samples = cfg.usize_or("diagnose.samples_per_cell", 64)?;
    let g = CellFunction::new(lo, hi, values).map_err(|e| config_error(e.to_string()))?;
    let norm = g.l1_norm();
    params.insert("interval".into(), json!([lo, hi]));
    params.insert("l1_norm".into(), json!(norm));
    params.insert("weak_type_constant".into(), json!(2.0));
    required_list(cfg, "diagnose.alphas")?
        .into_iter()
        .map(|alpha| {
            let measure = maximal_superlevel_measure(&g, alpha, samples)?;
            let rhs = 2.0 * norm / alpha;
            let mut w = WindowResult::new(vec![], measure <= rhs * (1.0 + 1e-12));
            w.lambda = Some(alpha);
            w.lhs = Some(measure);
            w.rhs = Some(rhs);
            w.min_constant = Some(if norm > 0.0 { measure * alpha / norm } else { 0.0 });
            Ok(w)
        })
        .collect()
}

fn scan_problems(cfg: &Config, resolutions: &[usize]) -> Result<(Vec<HJProblem>, CubeWindow), RunError> {
    if resolutions.len() < 3 || resolutions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(config_error("need at least 3 increasing resolutions").into());
    }
    let problems = resolutions
        .iter()
        .map(|&n| problem_from_config(cfg, Some(n)))
        .collect::<Result<Vec<_>, _>>()?;
    let g = &problems[0].grid;
    let region = CubeWindow::from_bounds((g.t_lo, g.t_hi), (g.x_lo[0], g.x_hi[0]), g.d)?;
    Ok((problems, region))
}

fn run_scan(cfg: &Config, epsilons: &[f64], resolutions: &[usize]) -> Result<ExponentScanReport, RunError> {
    let (problems, region) = scan_problems(cfg, resolutions)?;
    let opts = solve_options(cfg)?;
    let fields = problems
        .iter()
        .map(|pr| solve_backward(pr, &opts).map(|r| r.0))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(sobolev_exponent_scan(&fields, problems[0].model.p, epsilons, &region, &ScanRule::default())?)
}

fn diagnose_sobolev(cfg: &Config, params: &mut serde_json::Map<String, Value>) -> Result<Vec<WindowResult>, RunError> {
    let epsilons = required_list(cfg, "diagnose.epsilons")?;
    let resolutions = cfg
        .usize_list("diagnose.resolutions")?
        .ok_or_else(|| config_error("missing required key `diagnose.resolutions`"))?;
    let rep = run_scan(cfg, &epsilons, &resolutions)?;
    params.insert("resolutions".into(), json!(resolutions));
    params.insert("norms_per_level".into(), json!(rep.norms_per_level));
    params.insert("critical_epsilon_estimate".into(), json!(rep.critical_epsilon_estimate));
    Ok(epsilons
        .iter()
        .enumerate()
        .map(|(j, &eps)| {
            let first = rep.norms_per_level[0][j];
            let last = rep.norms_per_level.last().expect("three levels")[j];
            let mut w = WindowResult::new(vec![], true);
            w.lambda = Some(eps);
            w.lhs = Some(last);
            w.rhs = Some(first);
            w.min_constant = Some(last / first);
            w.verdict = Some(verdict_name(rep.verdicts[j]).into());
            w
        })
        .collect())
}

// ---------------------------------------------------------------------------
// sharpness

pub fn sharpness(rc: &RunConfig, args: &SharpnessArgs) -> Result<Outcome, RunError> {
    let usage = |e: hjlab::Error| RunError::Config(config_error(e.to_string()));
    let th = sharpness_thresholds(args.gamma, args.q).map_err(usage)?;
    let m = args.m.unwrap_or((1.5 * th.m_min).max(2.0));
    let g = args.g_scale.unwrap_or((1.5 * th.g_min).max(1.0));
    let params = SharpnessParams::new(args.gamma, args.q, m, g).map_err(usage)?;
    let mut body = json!({
        "gamma": args.gamma,
        "q": args.q,
        "p": params.p(),
        "m": m,
        "g_scale": g,
        "m_min": th.m_min,
        "g_min": th.g_min,
        "eps_star": th.eps_star,
        "sigma_slope": params.sigma_slope,
        "dt_constant": params.dt_constant(),
    });
    let mut pass = true;
    let mut summary = format!("eps_star = {}", th.eps_star);
    match (&args.epsilons, &args.resolutions) {
        (Some(eps), Some(res)) => {
            let rep = divergence_scan(&params, &eps.0, &res.0, &ScanRule::default())?;
            // A definite verdict must agree with the exact boundary at eps_star.
            let expected: Vec<&str> = eps
                .0
                .iter()
                .map(|&e| if e < th.eps_star { "bounded" } else { "diverging" })
                .collect();
            let consistent: Vec<bool> = rep
                .verdicts
                .iter()
                .zip(&expected)
                .map(|(v, e)| *v == ScanVerdict::Inconclusive || verdict_name(*v) == *e)
                .collect();
            pass = consistent.iter().all(|&c| c);
            summary = format!(
                "{summary}, verdicts {:?}",
                rep.verdicts.iter().map(|v| verdict_name(*v)).collect::<Vec<_>>()
            );
            body["scan"] = to_value(&rep);
            body["expected_verdicts"] = json!(expected);
            body["consistent"] = json!(consistent);
        }
        (None, None) => {}
        _ => return Err(config_error("--epsilons and --resolutions go together").into()),
    }
    finish(rc, "sharpness", rc.output(&args.out), pass, &[], body, summary)
}

// ---------------------------------------------------------------------------
// mfg

const MFG_KEYS: &[&str] = &[
    "grid.d",
    "grid.nx",
    "grid.nt",
    "grid.x0",
    "grid.x1",
    "mfg.T",
    "mfg.c",
    "mfg.r_prime",
    "mfg.m0_file",
    "mfg.uT_file",
    "mfg.mollifier",
    "mfg.check_tol",
    "solver.max_iters",
    "solver.tol",
    "solver.memory",
    "solver.patience",
    "solver.init_scale",
];

fn read_level(cfg: &Config, key: &str, grid: &GridSpec) -> Result<Option<Vec<f64>>, RunError> {
    match cfg.path(key) {
        None => Ok(None),
        Some(path) => {
            let file = File::open(&path).map_err(|e| cfg.invalid(key, format!("cannot open {}: {e}", path.display())))?;
            Ok(Some(read_level_csv(file, grid)?))
        }
    }
}

pub fn mfg(rc: &RunConfig, args: &MfgArgs) -> Result<Outcome, RunError> {
    let keys = [MFG_KEYS, HAMILTONIAN_KEYS].concat();
    let cfg = load(rc, &args.config, &keys)?;
    let d = cfg.usize_or("grid.d", 1)?;
    let horizon = cfg.require_f64("mfg.T")?;
    let grid = GridSpec::new(
        d,
        cfg.require_usize("grid.nx")?,
        cfg.require_usize("grid.nt")?,
        (0.0, horizon),
        vec![cfg.f64_or("grid.x0", 0.0)?; d],
        vec![cfg.f64_or("grid.x1", 1.0)?; d],
        Boundary::Periodic,
    )
    .map_err(|e| config_error(e.to_string()))?;
    let coupling = coupling_primitives(cfg.f64_or("mfg.c", 1.0)?, cfg.require_f64("mfg.r_prime")?)
        .map_err(|e| config_error(e.to_string()))?;
    let hp = HamiltonianParams::from_config(&cfg)?;
    let volume: f64 = (0..grid.nodes()).map(|i| grid.node_volume(i)).sum();
    let m0 = read_level(&cfg, "mfg.m0_file", &grid)?.unwrap_or_else(|| vec![1.0 / volume; grid.nodes()]);
    let u_t = read_level(&cfg, "mfg.uT_file", &grid)?.unwrap_or_else(|| vec![0.0; grid.nodes()]);
    let problem = MFGProblem::new(grid.clone(), coupling, hp.model()?, m0, u_t).map_err(|e| config_error(e.to_string()))?;
    let defaults = MfgOptions::default();
    let opts = MfgOptions {
        max_iters: cfg.usize_or("solver.max_iters", defaults.max_iters)?,
        tol: cfg.f64_or("solver.tol", defaults.tol)?,
        memory: cfg.usize_or("solver.memory", defaults.memory)?,
        patience: cfg.usize_or("solver.patience", defaults.patience)?,
        seed: rc.seed,
        init_scale: cfg.f64_or("solver.init_scale", defaults.init_scale)?,
    };
    let sol = solve_mfg_variational(&problem, &opts)?;
    let mollifier = cfg.f64_or("mfg.mollifier", 0.25)?;
    let cert = certify_solution(&sol, &problem, mollifier)?;
    let check_tol = cfg.f64_or("mfg.check_tol", 1e-6)?;
    let u_path = rc.out_dir.join("u.csv");
    let m_path = rc.out_dir.join("m.csv");
    write_field(&u_path, &sol.u)?;
    write_field(&m_path, &sol.m)?;
    let pass = cert.mass_defect <= check_tol && cert.supersol_margin >= -check_tol;
    let summary = format!(
        "{} iterations, defect {:e}, mass defect {:e}",
        sol.iterations, sol.defect, cert.mass_defect
    );
    let body = json!({
        "grid": grid,
        "hamiltonian": hp,
        "coupling": to_value(&problem.coupling),
        "options": opts,
        "iterations": sol.iterations,
        "defect": sol.defect,
        "check_tol": check_tol,
        "mollifier": mollifier,
        "certification": cert,
    });
    finish(rc, "mfg", rc.out_dir.join("report.json"), pass, &[&u_path, &m_path], body, summary)
}

// ---------------------------------------------------------------------------
// scan

pub fn scan(rc: &RunConfig, args: &ScanArgs) -> Result<Outcome, RunError> {
    let cfg = load(rc, &args.config, &hj_keys())?;
    let rep = run_scan(&cfg, &args.epsilons.0, &args.resolutions.0)?;
    let summary = format!(
        "verdicts {:?}, critical estimate {:?}",
        rep.verdicts.iter().map(|v| verdict_name(*v)).collect::<Vec<_>>(),
        rep.critical_epsilon_estimate
    );
    let body = json!({ "scan": rep });
    finish(rc, "scan", rc.output(&args.out), true, &[], body, summary)
}
