//! Acceptance suite: every criterion prints one PASS/FAIL line, the test
//! fails if any criterion fails.
//!
//! Run with `cargo test -p hjlab --test acceptance -- --nocapture` to see the lines.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hjlab::characteristics::{endpoint_displacement_holds, extract_characteristic, verify_supersolution_inequality, StopRule};
use hjlab::grid::{Boundary, GridSpec, ScalarField};
use hjlab::hamiltonian::{Coefficient, HamiltonianModel};
use hjlab::hopf_lax::{distributional_subsolution_residual, solve_backward, HJProblem, SolveOptions};
use hjlab::mfg::{certify_solution, coupling_primitives, density_l1_distance, solve_mfg_variational, MFGProblem, MfgOptions};
use hjlab::regularity::{
    blowup_differentiability_check, geometric_grid, good_lambda_check, maximal_superlevel_measure, reverse_holder_check, time_singularity_check,
    CellFunction, ClosedForm, IntrinsicScaleConfig, ScanRule, ScanVerdict, WindowTriple,
};
use hjlab::sharpness::{closed_form_fields, closed_form_valid, divergence_scan, sharpness_problem, sharpness_thresholds, SharpnessParams};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn interp() -> SolveOptions {
    SolveOptions {
        interpolate: true,
        ..SolveOptions::default()
    }
}

fn quadratic() -> HamiltonianModel {
    HamiltonianModel::unit_power(2.0, 2.0).unwrap()
}

/// `H = |ξ|²/2` on `[0,1] × [-1,1]` with terminal `slope·|x|`.
fn kink_problem(n: usize, slope: f64) -> HJProblem {
    let g = GridSpec::line(n, n, (0.0, 1.0), (-1.0, 1.0), Boundary::Clamped).unwrap();
    let term = (0..n).map(|i| slope * g.coord(0, i).abs()).collect();
    HJProblem::homogeneous(g, quadratic(), term).unwrap()
}

fn kink_exact(t: f64, x: f64) -> f64 {
    let tau = 1.0 - t;
    if x.abs() >= tau {
        x.abs() - 0.5 * tau
    } else {
        x * x / (2.0 * tau)
    }
}

fn affine_problem(n: usize, b: f64) -> HJProblem {
    let g = GridSpec::line(n, n, (0.0, 1.0), (-1.0, 1.0), Boundary::Clamped).unwrap();
    let term = (0..n).map(|i| b * g.coord(0, i)).collect();
    HJProblem::homogeneous(g, quadratic(), term).unwrap()
}

fn reference_params() -> SharpnessParams {
    SharpnessParams::new(0.75, 2.0, 2.0, 1.0).unwrap()
}

fn solver_exactness() -> Outcome {
    // Affine terminal data: linear interpolation is exact, so the DP is exact
    // wherever its numerical domain of dependence (one cell upwind per step)
    // avoids the clamped boundary.
    let b = 0.37;
    let mut affine_err = 0.0f64;
    for n in [17, 64, 129, 256] {
        let pb = affine_problem(n, b);
        let (u, _) = solve_backward(&pb, &interp()).unwrap();
        let g = &pb.grid;
        for k in 0..g.nt {
            let tau = 1.0 - g.time(k);
            for i in 0..n {
                let x = g.coord(0, i);
                if x - tau * g.dx(0) / g.dt() > -1.0 + g.dx(0) {
                    affine_err = affine_err.max((u.at(k, i) - (b * x - 0.5 * tau * b * b)).abs());
                }
            }
        }
    }
    // 2D node mode with Δx = Δt and b = (1, 0): arrivals are nodes.
    let g = GridSpec::square(21, 11, (0.0, 1.0), (-1.0, 1.0), Boundary::Clamped).unwrap();
    let term = (0..g.nodes()).map(|i| g.node_point(i)[0]).collect();
    let pb = HJProblem::homogeneous(g.clone(), quadratic(), term).unwrap();
    let (u, _) = solve_backward(&pb, &SolveOptions::default()).unwrap();
    for k in 0..g.nt {
        let tau = 1.0 - g.time(k);
        for i in 0..g.nodes() {
            let x = g.node_point(i);
            if x[0] - tau >= -1.0 {
                affine_err = affine_err.max((u.at(k, i) - (x[0] - 0.5 * tau)).abs());
            }
        }
    }

    let mut errs = Vec::new();
    let mut slowest = 0.0f64;
    for n in [64, 128, 256] {
        let pb = kink_problem(n, 1.0);
        let start = Instant::now();
        let (u, _) = solve_backward(&pb, &interp()).unwrap();
        slowest = slowest.max(start.elapsed().as_secs_f64());
        let g = &pb.grid;
        let mut e = 0.0f64;
        for k in 0..g.nt {
            for i in 0..n {
                e = e.max((u.at(k, i) - kink_exact(g.time(k), g.coord(0, i))).abs());
            }
        }
        errs.push(e);
    }
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[1] / w[0]).collect();
    let errs_text: Vec<String> = errs.iter().map(|e| format!("{e:.3e}")).collect();
    let pass = affine_err <= 1e-12
        && errs[2] <= 1e-2
        && ratios.iter().all(|r| (0.4..=0.7).contains(r))
        && slowest <= 30.0;
    outcome(
        pass,
        format!("affine sup error {affine_err:.2e}; |x| sup errors {errs_text:?}, ratios {ratios:.3?}, slowest solve {slowest:.2}s"),
    )
}

fn thresholds() -> Outcome {
    let th = sharpness_thresholds(0.75, 2.0).unwrap();
    let pass = (th.m_min - 1.125).abs() < 1e-12 && (th.g_min - 0.5625).abs() < 1e-12 && (th.eps_star - 2.5).abs() < 1e-12;
    outcome(pass, format!("M_min {:.15}, G_min {:.15}, eps* {:.15}", th.m_min, th.g_min, th.eps_star))
}

fn sharpness_divergence() -> Outcome {
    let start = Instant::now();
    let rep = divergence_scan(&reference_params(), &[1.0, 3.0], &[64, 128, 256], &ScanRule::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let norms: Vec<Vec<f64>> = rep.norms_per_level.clone();
    let pass = rep.verdicts[0] == ScanVerdict::Bounded && rep.verdicts[1] == ScanVerdict::Diverging && secs <= 300.0;
    outcome(
        pass,
        format!("verdicts eps=1: {:?}, eps=3: {:?}; norms per level {norms:.3?}; {secs:.1}s", rep.verdicts[0], rep.verdicts[1]),
    )
}

fn closed_form_cross_validation() -> Outcome {
    let p = reference_params();
    let mut errs = Vec::new();
    for n in [64, 128, 256] {
        let pb = sharpness_problem(&p, n, n).unwrap();
        let (u, _) = solve_backward(&pb, &interp()).unwrap();
        let g = &pb.grid;
        let margin = 2.0 * g.dx(0);
        let mut e = 0.0f64;
        for k in 0..g.nt {
            let t = g.time(k);
            for i in 0..n {
                let x = g.coord(0, i);
                // O shrunk by two cells in every direction.
                let inner = t > margin && x > margin && x < 1.0 - margin && x.powf(1.0 / p.gamma) - t > margin;
                if inner {
                    if let Ok(c) = closed_form_fields(t, x, &p) {
                        e = e.max((u.at(k, i) - c.u).abs());
                    }
                }
            }
        }
        errs.push(e);
    }
    let pass = errs[2] <= 5e-2 && errs[1] < errs[0] && errs[2] < errs[1];
    outcome(pass, format!("sup errors at n = nx = 64/128/256: {errs:.4?}"))
}

fn characteristic_energy() -> Outcome {
    struct Family {
        name: &'static str,
        build: Box<dyn Fn(usize) -> HJProblem>,
        starts: Vec<(f64, f64)>,
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut starts = |lo: f64, hi: f64| -> Vec<(f64, f64)> {
        (0..40).map(|_| (rng.gen_range(0.0..0.5), rng.gen_range(lo..hi))).collect()
    };
    let p = reference_params();
    let families = vec![
        Family {
            name: "affine",
            build: Box::new(|n| affine_problem(n, 0.37)),
            starts: starts(-0.5, 0.5),
        },
        Family {
            name: "|x|",
            build: Box::new(|n| kink_problem(n, 1.0)),
            starts: starts(-0.9, 0.9),
        },
        Family {
            name: "sharpness",
            build: Box::new(move |n| sharpness_problem(&p, n, n).unwrap()),
            starts: starts(0.05, 0.95),
        },
    ];
    let mut paths = 0;
    let mut displacement_ok = true;
    let mut all_pass = true;
    let mut stable = true;
    let mut details = Vec::new();
    for fam in &families {
        let mut constants = Vec::new();
        for n in [64, 128] {
            let pb = (fam.build)(n);
            let (u, _) = solve_backward(&pb, &interp()).unwrap();
            let tol = pb.grid.dx(0) + pb.grid.dt();
            let extracted: Vec<_> = fam
                .starts
                .iter()
                .map(|&(t, x)| extract_characteristic(&u, &pb, (t, &[x]), &StopRule::Horizon, &interp()).unwrap())
                .collect();
            let c = extracted
                .iter()
                .map(|path| verify_supersolution_inequality(&u, path, 1.0, tol).unwrap().min_c)
                .fold(0.0f64, f64::max)
                .max(1e-9);
            for path in &extracted {
                paths += 1;
                displacement_ok &= endpoint_displacement_holds(path);
                all_pass &= verify_supersolution_inequality(&u, path, c * (1.0 + 1e-9), tol).unwrap().pass;
            }
            constants.push(c);
        }
        stable &= (constants[1] / constants[0] - 1.0).abs() <= 0.2;
        details.push(format!("{} C {:.3}/{:.3}", fam.name, constants[0], constants[1]));
    }
    let pass = paths >= 100 && displacement_ok && all_pass && stable;
    outcome(
        pass,
        format!("{paths} paths; {}; displacement exact on all: {displacement_ok}", details.join(", ")),
    )
}

fn maximal_weak_type() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut checks = 0;
    for _ in 0..50 {
        let cells = rng.gen_range(1..20);
        let lo = rng.gen_range(-2.0..0.0);
        let hi = lo + rng.gen_range(0.5..3.0);
        let values: Vec<f64> = (0..cells)
            .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..5.0) })
            .collect();
        let g = CellFunction::new(lo, hi, values).unwrap();
        let norm = g.l1_norm();
        if norm == 0.0 {
            continue;
        }
        for alpha in geometric_grid(0.05, 2.0, 8) {
            let measure = maximal_superlevel_measure(&g, alpha, 32).unwrap();
            worst = worst.max(measure * alpha / (5.0 * norm));
            checks += 1;
        }
    }
    outcome(worst <= 1.0, format!("{checks} (g, alpha) pairs; max |{{Mg >= a}}| a / (5 |g|_1) = {worst:.3}"))
}

fn reverse_holder_suite() -> Outcome {
    let cfg = IntrinsicScaleConfig::with_defaults(2.0, 2.0).unwrap();
    let windows: Vec<(f64, f64, f64, f64)> = {
        let mut w = Vec::new();
        for &lambda in &[1.2, 1.5, 1.8] {
            for &h in &[0.03, 0.05] {
                for it in 0..5 {
                    for ix in 0..21 {
                        w.push((0.25 + 0.1 * it as f64, -0.7 + 0.07 * ix as f64, h, lambda));
                    }
                }
            }
        }
        w
    };
    let mut per_level = Vec::new();
    for n in [128, 256] {
        let pb = kink_problem(n, 2.0);
        let (u, _) = solve_backward(&pb, &interp()).unwrap();
        let f = ScalarField::constant(pb.grid.clone(), 0.0).unwrap();
        let reports: Vec<_> = windows
            .iter()
            .map(|&(t, x, h, lambda)| {
                let triple = WindowTriple::new(t, vec![x], h, lambda, &cfg).unwrap();
                triple.inside(&pb.grid).then(|| reverse_holder_check(&u, &f, &triple, &cfg).unwrap())
            })
            .collect();
        per_level.push(reports);
    }
    let mut met = 0;
    let mut finite = true;
    let mut worst_ratio = 1.0f64;
    let mut both = 0;
    let mut unmet = 0;
    for (a, b) in per_level[0].iter().zip(&per_level[1]) {
        for r in [a, b].into_iter().flatten() {
            if r.hypothesis_met {
                met += 1;
                finite &= r.min_c_hat.is_some_and(f64::is_finite);
            } else {
                unmet += 1;
                finite &= r.min_c_hat.is_none();
            }
        }
        if let (Some(Some(ca)), Some(Some(cb))) = (a.as_ref().map(|r| r.min_c_hat), b.as_ref().map(|r| r.min_c_hat)) {
            both += 1;
            worst_ratio = worst_ratio.max(ca / cb).max(cb / ca);
        }
    }
    let pass = met > 0 && both > 0 && finite && worst_ratio <= 2.0;
    outcome(
        pass,
        format!("{met} windows meet the hypothesis ({unmet} reported as not met); {both} met at both levels; worst C-hat ratio {worst_ratio:.3}"),
    )
}

fn good_lambda() -> Outcome {
    let p = reference_params();
    let pb = sharpness_problem(&p, 128, 128).unwrap();
    let (u, _) = solve_backward(&pb, &interp()).unwrap();
    let (_, du) = hjlab::grid::finite_diff(&u);
    let g = du.norm();
    let f = ScalarField::constant(pb.grid.clone(), 0.0).unwrap();
    let cfg = IntrinsicScaleConfig::with_defaults(2.0, 2.0).unwrap();
    let lambdas = geometric_grid(cfg.lambda0.max(1.0), 1.3, 10);
    let rep = good_lambda_check(&g, &f, &lambdas, &cfg).unwrap();
    let nonempty = rep.stats.iter().filter(|s| s.measure > 0.0).count();
    let pass = rep.min_constant.is_finite() && rep.eta == 0.5 && nonempty > 0;
    outcome(
        pass,
        format!("uniform C {:.3} over lambda in [{:.2}, {:.2}] ({nonempty} nonempty level sets)", rep.min_constant, lambdas[0], lambdas[9]),
    )
}

fn blowup() -> Outcome {
    let p = reference_params();
    let rhos = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0];
    let closed = ClosedForm {
        d: 1,
        eval: move |t: f64, x: &[f64]| closed_form_fields(t, x[0], &p).map(|c| c.u).unwrap_or(f64::NAN),
        domain: move |t: f64, x: &[f64]| closed_form_valid(&p, t, x[0]),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut points = Vec::new();
    while points.len() < 20 {
        let t = rng.gen_range(0.0..1.0);
        let x = rng.gen_range(0.0..1.0);
        // The largest rescaled window must fit in the closed-form region.
        let r = rhos[0] * 1.01;
        let fits = [(-r, -r), (-r, r), (r, -r), (r, r), (0.0, 0.0)]
            .iter()
            .all(|&(a, b)| closed_form_valid(&p, t + a, x + b));
        if fits {
            points.push((t, x));
        }
    }
    let mut monotone = 0;
    for &(t, x) in &points {
        let rep = blowup_differentiability_check(&closed, (t, &[x]), &rhos).unwrap();
        if rep.fit_errors_decreasing {
            monotone += 1;
        }
    }
    let kink = ClosedForm {
        d: 1,
        eval: |_: f64, x: &[f64]| x[0].abs(),
        domain: |_: f64, _: &[f64]| true,
    };
    let rep = blowup_differentiability_check(&kink, (0.5, &[0.0]), &rhos).unwrap();
    let kink_errors: Vec<f64> = rep.levels.iter().map(|l| l.fit_error).collect();
    let kink_negative = !rep.differentiable_like && kink_errors.iter().all(|&e| e >= 0.5 * kink_errors[0] && e > 1e-2);
    outcome(
        monotone == 20 && kink_negative,
        format!("{monotone}/20 interior points with decreasing fit error; kink fit errors {kink_errors:.3?}"),
    )
}

fn mfg_uniform_and_perturbed() -> Outcome {
    let start = Instant::now();
    let n = 64;
    let grid = GridSpec::line(n, n, (0.0, 1.0), (0.0, 1.0), Boundary::Periodic).unwrap();
    let coupling = coupling_primitives(1.0, 2.0).unwrap();
    let uniform = MFGProblem::new(grid.clone(), coupling, quadratic(), vec![1.0; n], vec![0.0; n]).unwrap();
    let opts = MfgOptions::default();
    let sol = solve_mfg_variational(&uniform, &opts).unwrap();
    let mut uniform_err = 0.0f64;
    for k in 0..n {
        for i in 0..n {
            uniform_err = uniform_err
                .max((sol.u.at(k, i) - (1.0 - grid.time(k))).abs())
                .max((sol.m.at(k, i) - 1.0).abs());
        }
    }

    let perturbed = |n: usize| {
        let grid = GridSpec::line(n, n, (0.0, 1.0), (0.0, 1.0), Boundary::Periodic).unwrap();
        let m0 = (0..n)
            .map(|i| 1.0 + 0.1 * (2.0 * std::f64::consts::PI * grid.coord(0, i)).sin())
            .collect();
        MFGProblem::new(grid, coupling, quadratic(), m0, vec![0.0; n]).unwrap()
    };
    let coarse = perturbed(32);
    let fine = perturbed(64);
    let sc = solve_mfg_variational(&coarse, &opts).unwrap();
    let sf = solve_mfg_variational(&fine, &opts).unwrap();
    let rc = certify_solution(&sc, &coarse, 0.25).unwrap();
    let rf = certify_solution(&sf, &fine, 0.25).unwrap();
    let gap_ratio = rf.energy_gap / rc.energy_gap;
    let seeded = |seed| MfgOptions {
        seed: Some(seed),
        ..MfgOptions::default()
    };
    let a = solve_mfg_variational(&fine, &seeded(11)).unwrap();
    let b = solve_mfg_variational(&fine, &seeded(12)).unwrap();
    let l1 = density_l1_distance(&a.m, &b.m).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mass = rc.mass_defect.max(rf.mass_defect);
    let pass = uniform_err <= 1e-6 && mass <= 1e-8 && gap_ratio <= 0.7 && l1 <= 10.0 * opts.tol && secs <= 600.0;
    outcome(
        pass,
        format!(
            "uniform error {uniform_err:.1e}; mass defect {mass:.1e}; energy gap {:.2e} -> {:.2e} (ratio {gap_ratio:.3}); seed L1 {l1:.1e}; {secs:.1}s",
            rc.energy_gap, rf.energy_gap
        ),
    )
}

fn subsolution_only_counterexample() -> Outcome {
    let g = GridSpec::line(65, 129, (0.0, 1.0), (0.0, 1.0), Boundary::Clamped).unwrap();
    let step = ScalarField::from_fn(g.clone(), |t, _| if t < 0.5 { 0.0 } else { 1.0 }).unwrap();
    let model = HamiltonianModel::power(2.0, 2.0, Coefficient::Constant(1.0), 0.0).unwrap();
    let f = ScalarField::constant(g.clone(), 2.0).unwrap();
    let residual = distributional_subsolution_residual(&step, &f, &model, 0.1).unwrap();
    let singular = time_singularity_check(&step, &[0.25, 0.125, 0.0625]).unwrap();
    let pass = residual.worst <= 1e-9 && singular.singular;
    outcome(
        pass,
        format!("worst subsolution residual {:.2e}; time-derivative ratios {:.3?}, singular {}", residual.worst, singular.ratios, singular.singular),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

#[test]
fn acceptance_criteria() {
    let criteria: Vec<Criterion> = vec![
        ("solver exactness", solver_exactness),
        ("sharpness thresholds", thresholds),
        ("sharpness divergence", sharpness_divergence),
        ("closed-form cross-validation", closed_form_cross_validation),
        ("characteristic energy inequality", characteristic_energy),
        ("maximal function weak (1,1)", maximal_weak_type),
        ("reverse Holder suite", reverse_holder_suite),
        ("good-lambda inequality", good_lambda),
        ("blow-up differentiability", blowup),
        ("mean field game", mfg_uniform_and_perturbed),
        ("subsolution-only counterexample", subsolution_only_counterexample),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {tag}: {name}: {}", i + 1, o.detail);
        if !o.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
