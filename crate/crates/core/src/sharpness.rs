//! Explicit family showing that higher integrability of `∂t u` can fail
//! beyond a computable exponent.
//!
//! - running cost `a|ξ'|^q/q` with `a = 1/G` on the graph `x = t^γ` and `M/G` elsewhere
//! - terminal cost 0 at `x = 1`, 1 elsewhere
//! - thresholds on `M`, `G` and the critical exponent `ε*`
//! - the optimal-slope constant `σ`, the foliation of the region above the graph,
//!   closed-form `u`, `∂t u`, `|Du|` there
//! - Lipschitz approximations `a_n`, `g_n` and the refinement scan over DP solutions

use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::grid::{Boundary, CubeWindow, GridSpec, ScalarField};
use crate::hamiltonian::{golden_max, Coefficient, HamiltonianModel};
use crate::hopf_lax::{solve_backward, HJProblem, SolveOptions};
use crate::regularity::{sobolev_exponent_scan, ExponentScanReport, ScanRule};

/// Closed-form thresholds of the family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Thresholds {
    /// Lower bound on the off-graph coefficient `M`.
    pub m_min: f64,
    /// Lower bound on the scale `G`.
    pub g_min: f64,
    /// Critical integrability exponent.
    pub eps_star: f64,
}

/// `e = 1 - (1-γ)q`, positive on the admissible range.
fn exponent_e(gamma: f64, q: f64) -> f64 {
    1.0 - (1.0 - gamma) * q
}

/// `M_min = γ^q/e`, `G_min = γ^q/(q e)`, `ε* = (γ(q+1) + 1 - q)/(q(1-γ))`.
pub fn sharpness_thresholds(gamma: f64, q: f64) -> Result<Thresholds> {
    if !(q > 1.0 && q.is_finite()) {
        return domain(format!("q must exceed 1, got {q}"));
    }
    if !(gamma > 1.0 - 1.0 / q && gamma < 1.0) {
        return domain(format!("gamma = {gamma} must lie in ({}, 1)", 1.0 - 1.0 / q));
    }
    let e = exponent_e(gamma, q);
    let gq = gamma.powf(q);
    Ok(Thresholds {
        m_min: gq / e,
        g_min: gq / (q * e),
        eps_star: (gamma * (q + 1.0) + 1.0 - q) / (q * (1.0 - gamma)),
    })
}

/// Parameters of one member of the family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SharpnessParams {
    pub gamma: f64,
    pub q: f64,
    pub m: f64,
    pub g_scale: f64,
    /// Optimal-slope constant `σ > 1`.
    pub sigma_slope: f64,
    pub eps_star: f64,
}

impl SharpnessParams {
    pub fn new(gamma: f64, q: f64, m: f64, g_scale: f64) -> Result<Self> {
        let th = sharpness_thresholds(gamma, q)?;
        if !(m > th.m_min) {
            return domain(format!("M = {m} must exceed {}", th.m_min));
        }
        if !(g_scale > th.g_min) {
            return domain(format!("G = {g_scale} must exceed {}", th.g_min));
        }
        let sigma = slope_constant(gamma, q, m)?;
        Ok(SharpnessParams {
            gamma,
            q,
            m,
            g_scale,
            sigma_slope: sigma,
            eps_star: th.eps_star,
        })
    }

    pub fn p(&self) -> f64 {
        self.q / (self.q - 1.0)
    }

    fn e(&self) -> f64 {
        exponent_e(self.gamma, self.q)
    }

    /// Off-graph coefficient `M/G`.
    pub fn a_off(&self) -> f64 {
        self.m / self.g_scale
    }

    /// `C` in `∂t u = C x0^{-q(1/γ - 1)}`.
    pub fn dt_constant(&self) -> f64 {
        let s = self.sigma_slope;
        self.a_off() / self.p() * ((s.powf(self.gamma) - 1.0) / s).powf(self.q)
    }

    /// Exponent of `x0` in `∫∫_O |∂t u|^{1+ε}` after integrating in `t`.
    pub fn x0_integrand_exponent(&self, eps: f64) -> f64 {
        -self.q * (1.0 / self.gamma - 1.0) * (1.0 + eps) + 1.0 / self.gamma
    }

    /// Action of staying on the graph from time `theta` to 1.
    pub fn graph_action(&self, theta: f64) -> f64 {
        let e = self.e();
        self.gamma.powf(self.q) / (self.q * e * self.g_scale) * (1.0 - theta.powf(e))
    }

    /// Action of the straight segment from `(t, x)` to the graph at `theta`,
    /// then the graph to time 1.
    pub fn line_then_graph_action(&self, t: f64, x: f64, theta: f64) -> f64 {
        let rise = (theta.powf(self.gamma) - x).abs();
        self.a_off() / self.q * rise.powf(self.q) / (theta - t).powf(self.q - 1.0) + self.graph_action(theta)
    }

    /// Action of a polygonal path off the graph, plus its terminal cost.
    pub fn competitor_action(&self, nodes: &[(f64, f64)]) -> f64 {
        let mut total = 0.0;
        for w in nodes.windows(2) {
            let (t0, x0) = w[0];
            let (t1, x1) = w[1];
            let dt = t1 - t0;
            total += self.a_off() / self.q * (x1 - x0).abs().powf(self.q) / dt.powf(self.q - 1.0);
        }
        let end = nodes.last().map_or(0.0, |n| n.1);
        total + if end == 1.0 { 0.0 } else { 1.0 }
    }
}

/// `ψ(s) = M|s^γ - 1|^q / s^{q-1} - γ^q s^e / e`, the launch cost in scaled units.
fn slope_objective(gamma: f64, q: f64, m: f64, s: f64) -> f64 {
    let e = exponent_e(gamma, q);
    m * (s.powf(gamma) - 1.0).abs().powf(q) / s.powf(q - 1.0) - gamma.powf(q) * s.powf(e) / e
}

/// Minimizes `f` on `[lo, hi]` by a log-spaced scan followed by golden
/// section; fails when the scan shows several local minima or a boundary one.
fn unique_interior_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> Result<(f64, f64)> {
    let n = 2000;
    let pts: Vec<f64> = (0..=n).map(|i| lo * (hi / lo).powf(i as f64 / n as f64)).collect();
    let vals: Vec<f64> = pts.iter().map(|&s| f(s)).collect();
    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    if best == 0 || best == n {
        return Err(Error::Inconsistency("minimizer sits on the search boundary".into()));
    }
    // Count descent-to-ascent turns, ignoring steps at rounding level.
    let noise = 1e-12 * vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let signs: Vec<bool> = vals
        .windows(2)
        .filter(|w| (w[1] - w[0]).abs() > noise)
        .map(|w| w[1] > w[0])
        .collect();
    let local_minima = signs.windows(2).filter(|w| !w[0] && w[1]).count();
    if local_minima > 1 {
        return Err(Error::Inconsistency(format!("{local_minima} local minima found")));
    }
    let (s, v) = golden_max(|s| -f(s), pts[best - 1], pts[best + 1], 1e-15 * pts[best]);
    Ok((s, -v))
}

/// The constant `σ` with optimal junction time `θ̄ = σ x0^{1/γ}`.
///
/// Minimizes the launch cost in the scale-free variable `s = θ/x0^{1/γ}` and
/// cross-checks against direct minimizations in `θ` at two launch points a
/// decade apart.
pub fn slope_constant(gamma: f64, q: f64, m: f64) -> Result<f64> {
    let th = sharpness_thresholds(gamma, q)?;
    if !(m > th.m_min) {
        return domain(format!("M = {m} must exceed {}", th.m_min));
    }
    let f = |s: f64| slope_objective(gamma, q, m, s);
    let mut hi = 4.0;
    while f(hi) <= f(1.0) {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Inconsistency("launch cost does not grow".into()));
        }
    }
    // The minimizer can sit very close to 1, so scan the offset `s - 1` on a log scale.
    let (offset, _) = unique_interior_min(|d| f(1.0 + d), 1e-12, 2.0 * hi)?;
    let sigma = 1.0 + offset;
    if !(sigma > 1.0) {
        return Err(Error::Inconsistency(format!("slope constant {sigma} is not above 1")));
    }
    let x_ref = 0.25 * sigma.powf(-gamma);
    for x0 in [x_ref, 0.1 * x_ref] {
        let direct = slope_constant_at(gamma, q, m, x0)?;
        if ((direct - sigma) / sigma).abs() > 1e-6 {
            return Err(Error::Inconsistency(format!(
                "slope constant varies with the launch point: {direct} vs {sigma}"
            )));
        }
    }
    Ok(sigma)
}

/// `θ̄ / x0^{1/γ}` from a direct minimization in `θ ∈ (x0^{1/γ}, 1)`.
pub fn slope_constant_at(gamma: f64, q: f64, m: f64, x0: f64) -> Result<f64> {
    let e = exponent_e(gamma, q);
    let cost = |theta: f64| {
        m * (theta.powf(gamma) - x0).abs().powf(q) / (q * theta.powf(q - 1.0)) + gamma.powf(q) / (q * e) * (1.0 - theta.powf(e))
    };
    let lo = x0.powf(1.0 / gamma);
    let (offset, _) = unique_interior_min(|d| cost(lo * (1.0 + d)), 1e-12, 1.0 / lo - 1.0)?;
    Ok(1.0 + offset)
}

/// Launch ordinate of the segment through a point of the region above the graph.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FoliationPoint {
    pub x0: f64,
    /// Junction time `σ x0^{1/γ}`.
    pub theta_bar: f64,
    /// `(θ̄^γ - x0)/θ̄`.
    pub slope: f64,
}

/// Whether `0 < t < x^{1/γ} < 1`.
pub fn in_region_o(params: &SharpnessParams, t: f64, x: f64) -> bool {
    t > 0.0 && x > 0.0 && x < 1.0 && t < x.powf(1.0 / params.gamma)
}

fn foliation_at(params: &SharpnessParams, x0: f64) -> FoliationPoint {
    let theta = params.sigma_slope * x0.powf(1.0 / params.gamma);
    FoliationPoint {
        x0,
        theta_bar: theta,
        slope: (theta.powf(params.gamma) - x0) / theta,
    }
}

/// Finds `x0` with `x = slope(x0) t + x0` by bisection.
pub fn invert_foliation(t: f64, x: f64, params: &SharpnessParams) -> Result<FoliationPoint> {
    if !(t >= 0.0) || !(x > 0.0 && x < 1.0) || !(t < x.powf(1.0 / params.gamma)) {
        return domain(format!("({t}, {x}) is outside the region above the graph"));
    }
    if t == 0.0 {
        return Ok(foliation_at(params, x));
    }
    let line = |x0: f64| {
        let f = foliation_at(params, x0);
        f.slope * t + x0 - x
    };
    // At the lower end the junction is at `t` itself, below `x`.
    let mut lo = (t / params.sigma_slope).powf(params.gamma);
    let mut hi = x;
    if !(line(lo) <= 0.0 && line(hi) >= 0.0) {
        return Err(Error::Inconsistency("foliation bracket does not change sign".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if line(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    let x0 = 0.5 * (lo + hi);
    let res = line(x0).abs();
    if res > 1e-10 {
        return Err(Error::NonConvergence {
            message: format!("foliation residual {res}"),
            history: vec![res],
        });
    }
    Ok(foliation_at(params, x0))
}

/// Exact value and derivatives at a point of the region above the graph.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClosedFormFields {
    pub u: f64,
    pub dt_u: f64,
    pub abs_du: f64,
    pub x0: f64,
}

/// Value and derivatives along the segment through `(t, x)`.
///
/// Only valid where the segment reaches the graph before time 1 and the
/// resulting value is below the terminal penalty 1.
pub fn closed_form_fields(t: f64, x: f64, params: &SharpnessParams) -> Result<ClosedFormFields> {
    let fol = invert_foliation(t, x, params)?;
    if !(fol.theta_bar < 1.0) {
        return domain(format!("segment through ({t}, {x}) meets the graph after time 1"));
    }
    let a = params.a_off();
    let v = fol.slope;
    let u = a / params.q * v.powf(params.q) * (fol.theta_bar - t) + params.graph_action(fol.theta_bar);
    if !(u < 1.0) {
        return domain(format!("value at ({t}, {x}) reaches the terminal penalty"));
    }
    let dt_u = a / params.p() * v.powf(params.q);
    let abs_du = a * v.powf(params.q - 1.0);
    Ok(ClosedFormFields {
        u,
        dt_u,
        abs_du,
        x0: fol.x0,
    })
}

/// Whether [`closed_form_fields`] succeeds at `(t, x)`.
pub fn closed_form_valid(params: &SharpnessParams, t: f64, x: f64) -> bool {
    in_region_o(params, t, x) && closed_form_fields(t, x, params).is_ok()
}

/// Euclidean distance from `(t, x)` to `{(s, s^γ): 0 <= s <= 1}`.
pub fn graph_distance(gamma: f64, t: f64, x: f64, samples: usize) -> f64 {
    let n = samples.max(8);
    let dist2 = |s: f64| (s - t).powi(2) + (s.powf(gamma) - x).powi(2);
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for i in 0..=n {
        let d = dist2(i as f64 / n as f64);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    let lo = best.saturating_sub(1) as f64 / n as f64;
    let hi = (best + 1).min(n) as f64 / n as f64;
    let (_, v) = golden_max(|s| -dist2(s), lo, hi, 1e-13);
    best_d.min(-v).sqrt()
}

/// Lipschitz lower approximations of the coefficient and terminal cost.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SmoothedCoefficients {
    pub params: SharpnessParams,
    pub n: usize,
    /// Graph samples used for distances.
    pub samples: usize,
}

impl SmoothedCoefficients {
    /// `min(M/G, 1/G + n·dist((t,x), graph))`.
    pub fn a_n(&self, t: f64, x: f64) -> f64 {
        let g = self.params.g_scale;
        let d = graph_distance(self.params.gamma, t, x, self.samples);
        (self.params.m / g).min(1.0 / g + self.n as f64 * d)
    }

    /// `min(1, n|x - 1|)`.
    pub fn g_n(&self, x: f64) -> f64 {
        (self.n as f64 * (x - 1.0).abs()).min(1.0)
    }
}

pub fn smoothed_coefficients(params: &SharpnessParams, n: usize) -> Result<SmoothedCoefficients> {
    if n == 0 {
        return domain("smoothing index must be at least 1");
    }
    Ok(SmoothedCoefficients {
        params: *params,
        n,
        samples: 4 * n.max(64),
    })
}

/// DP problem on `[0,1]²` with `nx = nt = resolution` and smoothing index `n`.
pub fn sharpness_problem(params: &SharpnessParams, n: usize, resolution: usize) -> Result<HJProblem> {
    let grid = GridSpec::line(resolution, resolution, (0.0, 1.0), (0.0, 1.0), Boundary::Clamped)?;
    let sm = smoothed_coefficients(params, n)?;
    let a = ScalarField::from_fn(grid.clone(), |t, x| sm.a_n(t, x[0]))?;
    let p = params.p();
    let g = params.g_scale;
    let bar_c = (p * params.a_off().powf(p - 1.0))
        .max(g.powf(p - 1.0) / p)
        .max(1.0);
    let model = HamiltonianModel::power(p, bar_c, Coefficient::Nodal(a), 0.0)?;
    let terminal: Vec<f64> = (0..grid.nodes()).map(|i| sm.g_n(grid.coord(0, i))).collect();
    HJProblem::homogeneous(grid, model, terminal)
}

/// Solves the smoothed problem at each resolution (with `n` equal to the
/// resolution) and scans `‖∂t u_n‖_{1+ε}` over the unit square.
pub fn divergence_scan(
    params: &SharpnessParams,
    epsilons: &[f64],
    resolutions: &[usize],
    rule: &ScanRule,
) -> Result<ExponentScanReport> {
    if resolutions.windows(2).any(|w| w[1] <= w[0]) {
        return domain("resolutions must increase");
    }
    let fields = resolutions
        .iter()
        .map(|&n| {
            let pr = sharpness_problem(params, n, n)?;
            solve_backward(&pr, &SolveOptions::default()).map(|r| r.0)
        })
        .collect::<Result<Vec<_>>>()?;
    let region = CubeWindow::from_bounds((0.0, 1.0), (0.0, 1.0), 1)?;
    sobolev_exponent_scan(&fields, params.p(), epsilons, &region, rule)
}
