//! Regularity diagnostics on sampled solutions.
//!
//! - centered maximal function of piecewise-constant data and its weak-type bound
//! - intrinsic window triples, good-time selection, stopping radii
//! - reverse Hölder and good-λ checks with measured constants
//! - Sobolev exponent scans over refinement families
//! - time-derivative cube bound, blow-up affine fits, singular-time-derivative detection
//! - characteristic-based window diagnostics

use rayon::prelude::*;
use serde::Serialize;

use crate::characteristics::{energy_comparability, extract_characteristic, CharacteristicPath, StopRule};
use crate::error::{domain, precondition, Error, Result};
use crate::grid::{Boundary, cube_average, finite_diff, integrate, lebesgue_norm, CubeWindow, GridSpec, ScalarField};
use crate::hopf_lax::{solve_backward, HJProblem, SolveOptions};

// ---------------------------------------------------------------------------
// Maximal function

/// Piecewise-constant nonnegative data on `n` equal cells of `[lo, hi]`,
/// extended by zero.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellFunction {
    pub lo: f64,
    pub hi: f64,
    pub values: Vec<f64>,
}

impl CellFunction {
    pub fn new(lo: f64, hi: f64, values: Vec<f64>) -> Result<Self> {
        if !(hi > lo) || values.is_empty() {
            return domain("need lo < hi and at least one cell");
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return domain("values must be finite and nonnegative");
        }
        Ok(CellFunction { lo, hi, values })
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.values.len() as f64
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.width()
    }

    /// Primitive `∫_{-∞}^x g`.
    pub fn primitive(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 0.0;
        }
        let w = self.width();
        let s = ((x - self.lo) / w).min(self.values.len() as f64);
        let full = s.floor() as usize;
        let mut acc: f64 = self.values[..full.min(self.values.len())].iter().sum::<f64>() * w;
        if full < self.values.len() {
            acc += self.values[full] * (s - full as f64) * w;
        }
        acc
    }

    /// Average over `(t - τ, t + τ)`.
    pub fn centered_average(&self, t: f64, tau: f64) -> f64 {
        (self.primitive(t + tau) - self.primitive(t - tau)) / (2.0 * tau)
    }

    /// Limit of the centered average as `τ → 0`.
    fn point_limit(&self, t: f64) -> f64 {
        let w = self.width();
        let n = self.values.len();
        let at = |i: i64| if i < 0 || i >= n as i64 { 0.0 } else { self.values[i as usize] };
        let s = (t - self.lo) / w;
        let r = s.round();
        if (s - r).abs() < 1e-12 {
            0.5 * (at(r as i64 - 1) + at(r as i64))
        } else {
            at(s.floor() as i64)
        }
    }
}

/// `Mg(t) = sup_{0 < τ <= τ_max} ⨍_{t-τ}^{t+τ} g`, exact.
///
/// Between consecutive breakpoints the average is monotone in `τ`, so the
/// supremum is taken over `τ` equal to the distances to all cell edges, the
/// cap, and the `τ → 0` limit.
pub fn maximal_function_at(g: &CellFunction, t: f64, tau_max: Option<f64>) -> f64 {
    let cap = tau_max.unwrap_or(f64::INFINITY);
    let mut best = g.point_limit(t);
    let w = g.width();
    for j in 0..=g.values.len() {
        let tau = (t - (g.lo + j as f64 * w)).abs();
        if tau > 0.0 && tau <= cap {
            best = best.max(g.centered_average(t, tau));
        }
    }
    if cap.is_finite() && cap > 0.0 {
        best = best.max(g.centered_average(t, cap));
    }
    best
}

/// Centered maximal function at every cell midpoint.
pub fn maximal_function_1d(g: &CellFunction, tau_max: Option<f64>) -> Vec<f64> {
    (0..g.values.len())
        .into_par_iter()
        .map(|i| maximal_function_at(g, g.midpoint(i), tau_max))
        .collect()
}

/// Measure of `{Mg >= α}` on the real line, sampled on `samples_per_cell`
/// points per cell over the only region where `Mg` can reach `α`.
pub fn maximal_superlevel_measure(g: &CellFunction, alpha: f64, samples_per_cell: usize) -> Result<f64> {
    if !(alpha > 0.0) {
        return domain("alpha must be positive");
    }
    let reach = g.l1_norm() / (2.0 * alpha);
    let lo = g.lo - reach;
    let hi = g.hi + reach;
    let step = g.width() / samples_per_cell.max(1) as f64;
    let n = ((hi - lo) / step).ceil() as usize;
    let count: usize = (0..n)
        .into_par_iter()
        .filter(|&i| maximal_function_at(g, lo + (i as f64 + 0.5) * step, None) >= alpha)
        .count();
    Ok(count as f64 * step)
}

// ---------------------------------------------------------------------------
// Intrinsic windows

/// Constants of the intrinsic-scaling construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IntrinsicScaleConfig {
    pub lambda0: f64,
    pub kappa: f64,
    pub c1: f64,
    pub c2: f64,
    pub eta: f64,
    pub r1: f64,
    /// Growth exponent of the Hamiltonian.
    pub p: f64,
}

impl IntrinsicScaleConfig {
    /// Defaults `c1 = 2`, `c2 = 10`, `κ = 1`, `η = 0.5`, with `λ0` raised until `σ(λ0) <= 1`.
    pub fn with_defaults(p: f64, r1: f64) -> Result<Self> {
        IntrinsicScaleConfig {
            lambda0: 1.0,
            kappa: 1.0,
            c1: 2.0,
            c2: 10.0,
            eta: 0.5,
            r1,
            p,
        }
        .normalized()
    }

    /// Validates and raises `λ0` so that `σ(λ0) <= 1`.
    pub fn normalized(mut self) -> Result<Self> {
        if !(self.p > 1.0) {
            return domain("p must exceed 1");
        }
        if !(self.lambda0 >= 1.0) || !(self.kappa >= 1.0) {
            return domain("need lambda0 >= 1 and kappa >= 1");
        }
        if !(self.c1 >= 2.0) || !(self.c2 >= 5.0 * self.c1) {
            return domain(format!("need c1 >= 2 and c2 >= 5 c1, got c1 = {}, c2 = {}", self.c1, self.c2));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return domain("eta must lie in (0, 1]");
        }
        if !(self.r1 > 1.0) {
            return domain("r1 must exceed 1");
        }
        self.lambda0 = self.lambda0.max(self.kappa.powf(1.0 / (self.p - 1.0)));
        Ok(self)
    }

    /// Checks `r1 > 1 + d/p`.
    pub fn check_dimension(&self, d: usize) -> Result<()> {
        if self.r1 > 1.0 + d as f64 / self.p {
            Ok(())
        } else {
            domain(format!("r1 = {} must exceed 1 + d/p = {}", self.r1, 1.0 + d as f64 / self.p))
        }
    }

    /// `σ(λ) = κ λ^{1-p}`.
    pub fn sigma(&self, lambda: f64) -> f64 {
        self.kappa * lambda.powf(1.0 - self.p)
    }
}

/// Concentric windows `Q ⊂ Q' ⊂ Q''` of time lengths `σh, c1σh, c2σh` and
/// space sides `h, c1h, c2h`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowTriple {
    pub q: CubeWindow,
    pub qp: CubeWindow,
    pub qpp: CubeWindow,
    pub lambda: f64,
    pub h: f64,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
}

impl WindowTriple {
    pub fn new(center_t: f64, center_x: Vec<f64>, h: f64, lambda: f64, cfg: &IntrinsicScaleConfig) -> Result<Self> {
        if !(h > 0.0) || !(lambda > 0.0) {
            return domain("need h > 0 and lambda > 0");
        }
        let sigma = cfg.sigma(lambda);
        let q = CubeWindow::new(center_t, center_x.clone(), 0.5 * sigma * h, 0.5 * h)?;
        let qp = CubeWindow::new(center_t, center_x.clone(), 0.5 * cfg.c1 * sigma * h, 0.5 * cfg.c1 * h)?;
        let qpp = CubeWindow::new(center_t, center_x, 0.5 * cfg.c2 * sigma * h, 0.5 * cfg.c2 * h)?;
        Ok(WindowTriple {
            q,
            qp,
            qpp,
            lambda,
            h,
            sigma,
            c1: cfg.c1,
            c2: cfg.c2,
        })
    }

    pub fn inside(&self, grid: &GridSpec) -> bool {
        self.qpp.inside(grid)
    }

    /// Leave the closed cube of half-width `c1 h/2`, or run for `c2 σ h`.
    pub fn stop_rule(&self) -> StopRule {
        StopRule::Window {
            center: self.q.center_x.clone(),
            half_width: 0.5 * self.c1 * self.h,
            time_cap: self.c2 * self.sigma * self.h,
        }
    }
}

/// `|Du|`, `|Du|^p`, `f^{r1}` and `|Du|^p + f^{r1}` on the grid of `u`.
#[derive(Clone, Debug)]
pub struct DerivedFields {
    pub grad_abs: ScalarField,
    pub grad_p: ScalarField,
    pub f_r1: ScalarField,
    pub combined: ScalarField,
    pub time_derivative: ScalarField,
}

impl DerivedFields {
    pub fn new(u: &ScalarField, f: &ScalarField, p: f64, r1: f64) -> Result<Self> {
        if u.grid() != f.grid() {
            return domain("u and f live on different grids");
        }
        let (dt, du) = finite_diff(u);
        let grad_abs = du.norm();
        let grad_p = grad_abs.map(|g| g.powf(p))?;
        let f_r1 = f.map(|v| v.max(0.0).powf(r1))?;
        let combined = grad_p.zip_map(&f_r1, |a, b| a + b)?;
        Ok(DerivedFields {
            grad_abs,
            grad_p,
            f_r1,
            combined,
            time_derivative: dt,
        })
    }
}

// ---------------------------------------------------------------------------
// Good time

/// Outcome of [`select_good_time`].
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum GoodTime {
    Found {
        t: f64,
        level: usize,
        /// Smallest constant for which both bounds hold at `t`.
        constant: f64,
    },
    Infeasible {
        min_constant: f64,
    },
}

/// Picks the earliest level in `(t0 - σh, t0 - σh/2)` minimizing the constant in
/// `⨍_{Q_{c1h}}|Du(t)|^p <= C c2^{d+1} λ^p` and
/// `sup_τ ⨍_{t-τ}^{t+τ} g <= C c2 λ^p`, where `g(s) = ⨍_{Q_{c2h}} f^{r1}(s)` on
/// the time span of `Q''` and zero outside.
pub fn select_good_time(
    u_grad_p: &ScalarField,
    f: &ScalarField,
    triple: &WindowTriple,
    cfg: &IntrinsicScaleConfig,
    cap: f64,
) -> Result<GoodTime> {
    let grid = u_grad_p.grid();
    if f.grid() != grid {
        return domain("fields live on different grids");
    }
    if !triple.inside(grid) {
        return precondition("outer window leaves the domain");
    }
    let t0 = triple.q.center_t;
    let sh = triple.sigma * triple.h;
    let tol = 1e-12 * (1.0 + t0.abs());
    let candidates: Vec<usize> = (0..grid.nt)
        .filter(|&k| {
            let t = grid.time(k);
            t > t0 - sh + tol && t < t0 - 0.5 * sh - tol
        })
        .collect();
    if candidates.is_empty() {
        return domain("window contains no time level in the selection interval");
    }
    let x0 = &triple.q.center_x;
    let d = grid.d as f64;
    let lp = triple.lambda.powf(cfg.p);
    let inner = grid.spatial_quadrature(x0, 0.5 * cfg.c1 * triple.h);
    let outer = grid.spatial_quadrature(x0, 0.5 * cfg.c2 * triple.h);
    let avg = |field: &ScalarField, quad: &[(usize, f64)], k: usize| {
        let m: f64 = quad.iter().map(|e| e.1).sum();
        quad.iter().map(|&(n, w)| w * field.at(k, n)).sum::<f64>() / m
    };
    // g on time cells, weighted by the overlap with the span of Q''.
    let half_span = 0.5 * cfg.c2 * sh;
    let overlaps = grid.time_overlaps(t0 - half_span, t0 + half_span);
    let dt = grid.dt();
    let kmin = candidates[0].min(overlaps.first().map_or(candidates[0], |e| e.0));
    let kmax = candidates.last().copied().unwrap().max(overlaps.last().map_or(0, |e| e.0));
    let mut cells = vec![0.0; kmax - kmin + 1];
    for &(k, len) in &overlaps {
        cells[k - kmin] = avg(f, &outer, k) * len / dt;
    }
    let g = CellFunction::new(grid.time(kmin) - 0.5 * dt, grid.time(kmax) + 0.5 * dt, cells)?;
    let mut best: Option<(usize, f64)> = None;
    for &k in &candidates {
        let a = avg(u_grad_p, &inner, k);
        let mg = maximal_function_at(&g, grid.time(k), Some(half_span));
        let c = (a / (cfg.c2.powf(d + 1.0) * lp)).max(mg / (cfg.c2 * lp));
        match best {
            Some((_, bc)) if c >= bc * (1.0 - 1e-9) => {}
            _ => best = Some((k, c)),
        }
    }
    let (k, c) = best.unwrap();
    Ok(if c <= cap {
        GoodTime::Found {
            t: grid.time(k),
            level: k,
            constant: c,
        }
    } else {
        GoodTime::Infeasible { min_constant: c }
    })
}

// ---------------------------------------------------------------------------
// Stopping radius

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StoppingRadius {
    pub h: f64,
    /// `⨍_{Q_{σh,h}} g_p`, equal to `λ^p` up to bisection accuracy.
    pub average: f64,
    /// `⨍` over the `c2`-dilated window.
    pub dilated_average: f64,
    /// Whether the dilated average stays below `λ^p`.
    pub certified: bool,
}

/// Largest `h <= h_max` with `⨍_{Q_{σh,h}(t,x)} g_p = λ^p`.
///
/// Returns `None` when the point is not above `λ^p` or the average at `h_max`
/// still exceeds it.
pub fn stopping_radius(
    g_p: &ScalarField,
    point: (f64, &[f64]),
    lambda: f64,
    cfg: &IntrinsicScaleConfig,
    h_max: f64,
) -> Result<Option<StoppingRadius>> {
    let grid = g_p.grid();
    let (t, x) = point;
    if !grid.contains(t, x) {
        return domain("point outside the grid");
    }
    if !(h_max > 0.0) {
        return domain("h_max must be positive");
    }
    let sigma = cfg.sigma(lambda);
    let target = lambda.powf(cfg.p);
    let window = |h: f64, factor: f64| CubeWindow::new(t, x.to_vec(), 0.5 * factor * sigma * h, 0.5 * factor * h);
    let avg = |h: f64| -> Result<f64> { cube_average(g_p, &window(h, 1.0)?) };
    let finish = |h: f64, a: f64| -> Result<Option<StoppingRadius>> {
        let dil = cube_average(g_p, &window(h, cfg.c2)?)?;
        Ok(Some(StoppingRadius {
            h,
            average: a,
            dilated_average: dil,
            certified: dil <= target * (1.0 + 1e-9),
        }))
    };
    let top = avg(h_max)?;
    if (top - target).abs() <= 1e-9 * target.max(1.0) {
        return finish(h_max, top);
    }
    if g_p.interp(t, x) <= target || top > target {
        return Ok(None);
    }
    let scan = 256;
    let mut hi = h_max;
    let mut lo = None;
    for j in 1..scan {
        let h = h_max * (1.0 - j as f64 / scan as f64);
        if avg(h)? >= target {
            lo = Some(h);
            break;
        }
        hi = h;
    }
    let mut lo = match lo {
        Some(h) => h,
        None => {
            // Shrink until the average exceeds the level.
            let mut h = hi;
            loop {
                h *= 0.5;
                if h < 1e-12 * h_max {
                    return Ok(None);
                }
                if avg(h)? >= target {
                    break h;
                }
                hi = h;
            }
        }
    };
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if avg(mid)? >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = avg(lo)?;
    finish(lo, a)
}

// ---------------------------------------------------------------------------
// Reverse Hölder

#[derive(Clone, Debug, Serialize)]
pub struct ReverseHolderReport {
    pub hypothesis_met: bool,
    /// `⨍_Q (|Du|^p + f^{r1})`.
    pub avg_q: f64,
    /// `⨍_{Q''} (|Du|^p + f^{r1})`.
    pub avg_qpp: f64,
    /// `⨍_{Q''}|Du|^p`.
    pub lhs: f64,
    /// `(⨍_{Q'}|Du|)^p`.
    pub rhs_gradient: f64,
    /// `⨍_{Q'}(1 + f^{r1})`.
    pub rhs_data: f64,
    /// `lhs / (rhs_gradient + rhs_data)`; `None` when the hypothesis fails.
    pub min_c_hat: Option<f64>,
}

/// Checks the reverse Hölder conclusion on a window triple whose hypothesis holds.
pub fn reverse_holder_check(
    u: &ScalarField,
    f: &ScalarField,
    triple: &WindowTriple,
    cfg: &IntrinsicScaleConfig,
) -> Result<ReverseHolderReport> {
    let fields = DerivedFields::new(u, f, cfg.p, cfg.r1)?;
    reverse_holder_check_fields(&fields, triple, cfg)
}

/// [`reverse_holder_check`] with precomputed derivatives.
pub fn reverse_holder_check_fields(
    fields: &DerivedFields,
    triple: &WindowTriple,
    cfg: &IntrinsicScaleConfig,
) -> Result<ReverseHolderReport> {
    let d = fields.combined.grid().d as f64;
    let avg_q = cube_average(&fields.combined, &triple.q)?;
    let avg_qpp = cube_average(&fields.combined, &triple.qpp)?;
    let lp = triple.lambda.powf(cfg.p);
    let cd = cfg.c2.powf(d + 1.0);
    let rel = 1e-6;
    let hypothesis_met = triple.lambda >= cfg.lambda0 * (1.0 - 1e-12)
        && lp <= avg_q * (1.0 + rel)
        && avg_q <= cd * avg_qpp * (1.0 + rel)
        && avg_qpp <= lp * (1.0 + rel);
    let lhs = cube_average(&fields.grad_p, &triple.qpp)?;
    let rhs_gradient = cube_average(&fields.grad_abs, &triple.qp)?.powf(cfg.p);
    let rhs_data = 1.0 + cube_average(&fields.f_r1, &triple.qp)?;
    Ok(ReverseHolderReport {
        hypothesis_met,
        avg_q,
        avg_qpp,
        lhs,
        rhs_gradient,
        rhs_data,
        min_c_hat: hypothesis_met.then(|| lhs / (rhs_gradient + rhs_data)),
    })
}

// ---------------------------------------------------------------------------
// Good λ

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LevelSetStats {
    pub lambda: f64,
    /// `|E(λ)|`, `E(λ) = {g^p + f^{r1} > λ^p}`.
    pub measure: f64,
    /// `∫_{E(λ)} g^p`.
    pub integral_gp: f64,
    /// `∫_{E(ηλ)} (λ^{p-1} g + f^{r1})`.
    pub integral_data: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GoodLambdaReport {
    pub stats: Vec<LevelSetStats>,
    /// Smallest `C` with `∫_{E(λ)} g^p <= C ∫_{E(ηλ)} (...)` for every `λ`.
    pub min_constant: f64,
    pub eta: f64,
}

/// Level-set sums with cell-wise membership.
pub fn good_lambda_check(
    g: &ScalarField,
    f: &ScalarField,
    lambdas: &[f64],
    cfg: &IntrinsicScaleConfig,
) -> Result<GoodLambdaReport> {
    let grid = g.grid();
    if f.grid() != grid {
        return domain("fields live on different grids");
    }
    if let Some(l) = lambdas.iter().find(|&&l| l < cfg.lambda0) {
        return precondition(format!("lambda = {l} is below lambda0 = {}", cfg.lambda0));
    }
    let nn = grid.nodes();
    let weights: Vec<f64> = (0..grid.len())
        .map(|i| grid.time_weight(i / nn) * grid.node_volume(i % nn))
        .collect();
    let gp: Vec<f64> = g.values().iter().map(|v| v.powf(cfg.p)).collect();
    let fr: Vec<f64> = f.values().iter().map(|v| v.max(0.0).powf(cfg.r1)).collect();
    let mut stats = Vec::with_capacity(lambdas.len());
    let mut c = 0.0f64;
    for &lambda in lambdas {
        let hi = lambda.powf(cfg.p);
        let lo = (cfg.eta * lambda).powf(cfg.p);
        let lp1 = lambda.powf(cfg.p - 1.0);
        let mut measure = 0.0;
        let mut integral_gp = 0.0;
        let mut integral_data = 0.0;
        for i in 0..grid.len() {
            let level = gp[i] + fr[i];
            let w = weights[i];
            if level > hi {
                measure += w;
                integral_gp += w * gp[i];
            }
            if level > lo {
                integral_data += w * (lp1 * g.values()[i] + fr[i]);
            }
        }
        if integral_gp > 0.0 {
            c = c.max(if integral_data > 0.0 {
                integral_gp / integral_data
            } else {
                f64::INFINITY
            });
        }
        stats.push(LevelSetStats {
            lambda,
            measure,
            integral_gp,
            integral_data,
        });
    }
    Ok(GoodLambdaReport {
        stats,
        min_constant: c,
        eta: cfg.eta,
    })
}

/// Geometric grid `start, start·ratio, ...` with `n` points.
pub fn geometric_grid(start: f64, ratio: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| start * ratio.powi(i as i32)).collect()
}

// ---------------------------------------------------------------------------
// Sobolev exponent scan

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanVerdict {
    Bounded,
    Diverging,
    Inconclusive,
}

/// Thresholds of the bounded/diverging classification.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ScanRule {
    /// Minimal ratio between consecutive levels for "diverging".
    pub growth_factor: f64,
    /// Number of trailing levels that must grow.
    pub growth_levels: usize,
    /// Maximal `(max - min)/min` for "bounded".
    pub bounded_variation: f64,
}

impl Default for ScanRule {
    fn default() -> Self {
        ScanRule {
            growth_factor: 1.5,
            growth_levels: 3,
            bounded_variation: 0.2,
        }
    }
}

impl ScanRule {
    pub fn classify(&self, norms: &[f64]) -> ScanVerdict {
        let n = norms.len();
        let m = self.growth_levels.max(2);
        if n >= m && norms[n - m..].windows(2).all(|w| w[0] > 0.0 && w[1] >= self.growth_factor * w[0]) {
            return ScanVerdict::Diverging;
        }
        let lo = norms.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = norms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo > 0.0 && (hi - lo) / lo <= self.bounded_variation || hi == 0.0 {
            return ScanVerdict::Bounded;
        }
        ScanVerdict::Inconclusive
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExponentScanReport {
    pub epsilon_grid: Vec<f64>,
    /// Resolution label of each level (spatial nodes per axis).
    pub resolutions: Vec<usize>,
    /// `‖∂t u‖_{1+ε}`, indexed `[level][ε]`.
    pub norms_per_level: Vec<Vec<f64>>,
    /// `‖Du‖_{p(1+ε)}`, indexed `[level][ε]`.
    pub gradient_norms_per_level: Vec<Vec<f64>>,
    pub verdicts: Vec<ScanVerdict>,
    /// Midpoint between the largest bounded and smallest diverging `ε`.
    pub critical_epsilon_estimate: Option<f64>,
}

/// Norms of `∂t u` and `Du` over `region` for each field and `ε`, classified
/// by the time-derivative norm.
pub fn sobolev_exponent_scan(
    fields: &[ScalarField],
    p: f64,
    epsilons: &[f64],
    region: &CubeWindow,
    rule: &ScanRule,
) -> Result<ExponentScanReport> {
    if fields.len() < 3 {
        return precondition("need at least 3 refinement levels");
    }
    let mut norms = Vec::new();
    let mut gnorms = Vec::new();
    for u in fields {
        let (dt, du) = finite_diff(u);
        let g = du.norm();
        let mut row = Vec::new();
        let mut grow = Vec::new();
        for &e in epsilons {
            row.push(lebesgue_norm(&dt, 1.0 + e, region)?);
            grow.push(lebesgue_norm(&g, p * (1.0 + e), region)?);
        }
        norms.push(row);
        gnorms.push(grow);
    }
    let verdicts: Vec<ScanVerdict> = (0..epsilons.len())
        .map(|j| rule.classify(&norms.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect();
    let bounded = epsilons
        .iter()
        .zip(&verdicts)
        .filter(|(_, v)| **v == ScanVerdict::Bounded)
        .map(|(e, _)| *e)
        .fold(f64::NEG_INFINITY, f64::max);
    let diverging = epsilons
        .iter()
        .zip(&verdicts)
        .filter(|(_, v)| **v == ScanVerdict::Diverging)
        .map(|(e, _)| *e)
        .fold(f64::INFINITY, f64::min);
    let critical = (bounded.is_finite() && diverging.is_finite() && bounded < diverging).then_some(0.5 * (bounded + diverging));
    Ok(ExponentScanReport {
        epsilon_grid: epsilons.to_vec(),
        resolutions: fields.iter().map(|u| u.grid().nx).collect(),
        norms_per_level: norms,
        gradient_norms_per_level: gnorms,
        verdicts,
        critical_epsilon_estimate: critical,
    })
}

/// Solves each problem and scans the solutions.
pub fn sobolev_exponent_scan_problems(
    problems: &[HJProblem],
    opts: &SolveOptions,
    epsilons: &[f64],
    region: &CubeWindow,
    rule: &ScanRule,
) -> Result<ExponentScanReport> {
    let p = problems
        .first()
        .map(|pr| pr.model.p)
        .ok_or_else(|| Error::Precondition("no problems given".into()))?;
    let fields = problems
        .iter()
        .map(|pr| solve_backward(pr, opts).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    sobolev_exponent_scan(&fields, p, epsilons, region, rule)
}

// ---------------------------------------------------------------------------
// Time-derivative cube bound

/// Parameters of [`time_derivative_cube_bound`].
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DtCubeParams {
    /// Dilation of the right-hand window.
    pub c_bar: f64,
    pub r1: f64,
    pub p: f64,
    /// Constant whose margin is reported.
    pub c: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DtCubeReport {
    /// `∫_{Q_h}(u(t+h/2) - u(t-h/2))`.
    pub lhs: f64,
    /// `∫_{dilated}(|Du|^p + 1 + max f^{r1})`.
    pub rhs: f64,
    /// `c·rhs - lhs`.
    pub margin: f64,
    pub min_c: f64,
}

/// Bounds the time-derivative measure of a window by gradient and data integrals
/// over its `c_bar`-dilation; the maximum of `f^{r1}` is taken over the dilated window.
pub fn time_derivative_cube_bound(
    u: &ScalarField,
    f: &ScalarField,
    window: &CubeWindow,
    params: &DtCubeParams,
) -> Result<DtCubeReport> {
    let grid = u.grid();
    if f.grid() != grid {
        return domain("fields live on different grids");
    }
    let dilated = window.dilate(params.c_bar);
    if !dilated.inside(grid) {
        return precondition("dilated window leaves the domain");
    }
    let quad = grid.spatial_quadrature(&window.center_x, window.half_space);
    let t_hi = window.center_t + window.half_time;
    let t_lo = window.center_t - window.half_time;
    let lhs: f64 = quad
        .iter()
        .map(|&(n, w)| {
            let x = grid.node_point(n);
            w * (u.interp(t_hi, &x) - u.interp(t_lo, &x))
        })
        .sum();
    let (_, du) = finite_diff(u);
    let gp = du.norm().map(|g| g.powf(params.p))?;
    let (grad_int, measure) = integrate(&gp, &dilated);
    let q = grid.window_quadrature(&dilated);
    let mut fmax = 0.0f64;
    for &(k, _) in &q.time {
        for (n, _) in q.spatial(grid) {
            fmax = fmax.max(f.at(k, n).max(0.0).powf(params.r1));
        }
    }
    let rhs = grad_int + measure * (1.0 + fmax);
    Ok(DtCubeReport {
        lhs,
        rhs,
        margin: params.c * rhs - lhs,
        min_c: if rhs > 0.0 { lhs.max(0.0) / rhs } else { 0.0 },
    })
}

// ---------------------------------------------------------------------------
// Blow-up

/// A function of `(t, x)` that can be sampled.
pub trait SpaceTimeFn: Sync {
    fn dim(&self) -> usize;
    fn contains(&self, t: f64, x: &[f64]) -> bool;
    fn value(&self, t: f64, x: &[f64]) -> f64;
    /// Grid spacing, when the function comes from a grid.
    fn resolution(&self) -> Option<f64> {
        None
    }
}

impl SpaceTimeFn for ScalarField {
    fn dim(&self) -> usize {
        self.grid().d
    }
    fn contains(&self, t: f64, x: &[f64]) -> bool {
        self.grid().contains(t, x)
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.interp(t, x)
    }
    fn resolution(&self) -> Option<f64> {
        Some(self.grid().dt().max(self.grid().dx_max()))
    }
}

/// Closure-backed [`SpaceTimeFn`].
pub struct ClosedForm<F, D> {
    pub d: usize,
    pub eval: F,
    pub domain: D,
}

impl<F, D> SpaceTimeFn for ClosedForm<F, D>
where
    F: Fn(f64, &[f64]) -> f64 + Sync,
    D: Fn(f64, &[f64]) -> bool + Sync,
{
    fn dim(&self) -> usize {
        self.d
    }
    fn contains(&self, t: f64, x: &[f64]) -> bool {
        (self.domain)(t, x)
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        (self.eval)(t, x)
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct BlowupLevel {
    pub rho: f64,
    /// Sup-error of the least-squares affine fit of the rescaled function.
    pub fit_error: f64,
    /// Hölder seminorm of the rescaled function at exponent 1/2.
    pub holder_seminorm: f64,
    /// Fitted `(∂t u, Du...)`.
    pub slope_t: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BlowupReport {
    pub levels: Vec<BlowupLevel>,
    pub fit_errors_decreasing: bool,
    pub differentiable_like: bool,
}

const BLOWUP_POINTS: usize = 17;
const BLOWUP_THETA: f64 = 0.5;

/// Resamples `u_ρ(s,y) = (u(t+ρs, x+ρy) - u(t,x))/ρ` on `[-1,1]^{1+d}` for
/// each `ρ` and fits an affine map.
pub fn blowup_differentiability_check<U: SpaceTimeFn + ?Sized>(
    u: &U,
    point: (f64, &[f64]),
    rhos: &[f64],
) -> Result<BlowupReport> {
    let (t, x) = point;
    let d = u.dim();
    if x.len() != d {
        return domain("point has wrong dimension");
    }
    if rhos.windows(2).any(|w| !(w[1] < w[0])) || rhos.iter().any(|r| !(*r > 0.0)) {
        return domain("rhos must be positive and decreasing");
    }
    if let Some(res) = u.resolution() {
        if rhos.iter().any(|r| *r < 4.0 * res * (1.0 - 1e-9)) {
            return precondition("rho must cover at least 4 grid cells");
        }
    }
    let n = BLOWUP_POINTS;
    let axis: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
    if d != 1 && d != 2 {
        return domain("dimension must be 1 or 2");
    }
    let count = n.pow(d as u32 + 1);
    let lattice: Vec<Vec<f64>> = (0..count)
        .map(|mut i| {
            let mut z = vec![0.0; d + 1];
            for c in z.iter_mut().rev() {
                *c = axis[i % n];
                i /= n;
            }
            z
        })
        .collect();
    let base = u.value(t, x);
    let mut levels = Vec::new();
    for &rho in rhos {
        let mut samples = Vec::with_capacity(lattice.len());
        for z in &lattice {
            let tt = t + rho * z[0];
            let xx: Vec<f64> = (0..d).map(|a| x[a] + rho * z[1 + a]).collect();
            if !u.contains(tt, &xx) {
                return domain(format!("rescaled window at rho = {rho} leaves the domain"));
            }
            samples.push((u.value(tt, &xx) - base) / rho);
        }
        let coef = affine_least_squares(&lattice, &samples);
        let fit_error = lattice
            .iter()
            .zip(&samples)
            .map(|(z, v)| (v - coef[0] - z.iter().zip(&coef[1..]).map(|(a, b)| a * b).sum::<f64>()).abs())
            .fold(0.0, f64::max);
        let holder_seminorm = (0..lattice.len())
            .into_par_iter()
            .map(|i| {
                let mut m = 0.0f64;
                for j in i + 1..lattice.len() {
                    let dist = lattice[i].iter().zip(&lattice[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    m = m.max((samples[i] - samples[j]).abs() / dist.powf(BLOWUP_THETA));
                }
                m
            })
            .reduce(|| 0.0, f64::max);
        levels.push(BlowupLevel {
            rho,
            fit_error,
            holder_seminorm,
            slope_t: coef[1],
        });
    }
    let scale = levels.iter().map(|l| l.holder_seminorm).fold(0.0, f64::max);
    let floor = 1e-10 * (1.0 + scale);
    let decreasing = levels
        .windows(2)
        .all(|w| w[1].fit_error < w[0].fit_error || w[1].fit_error <= floor);
    let first = levels.first().map_or(0.0, |l| l.fit_error);
    let last = levels.last().map_or(0.0, |l| l.fit_error);
    let shrinking = last <= floor || last <= 0.75 * first;
    let smin = levels.iter().map(|l| l.holder_seminorm).fold(f64::INFINITY, f64::min);
    let bounded = scale <= 10.0 * smin.max(floor);
    Ok(BlowupReport {
        differentiable_like: decreasing && shrinking && bounded,
        fit_errors_decreasing: decreasing,
        levels,
    })
}

/// Coefficients `[c, a_0, a_1, ...]` of the least-squares fit `c + Σ a_i z_i`.
fn affine_least_squares(points: &[Vec<f64>], values: &[f64]) -> Vec<f64> {
    let m = points[0].len() + 1;
    let mut ata = vec![0.0; m * m];
    let mut atb = vec![0.0; m];
    for (z, v) in points.iter().zip(values) {
        let row: Vec<f64> = std::iter::once(1.0).chain(z.iter().copied()).collect();
        for i in 0..m {
            atb[i] += row[i] * v;
            for j in 0..m {
                ata[i * m + j] += row[i] * row[j];
            }
        }
    }
    solve_dense(&mut ata, &mut atb, m);
    atb
}

/// Gaussian elimination with partial pivoting; the solution overwrites `b`.
pub(crate) fn solve_dense(a: &mut [f64], b: &mut [f64], m: usize) {
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&i, &j| a[i * m + col].abs().total_cmp(&a[j * m + col].abs()))
            .unwrap();
        if piv != col {
            for j in 0..m {
                a.swap(col * m + j, piv * m + j);
            }
            b.swap(col, piv);
        }
        let p = a[col * m + col];
        if p == 0.0 {
            continue;
        }
        for i in col + 1..m {
            let factor = a[i * m + col] / p;
            for j in col..m {
                a[i * m + j] -= factor * a[col * m + j];
            }
            b[i] -= factor * b[col];
        }
    }
    for col in (0..m).rev() {
        let mut s = b[col];
        for j in col + 1..m {
            s -= a[col * m + j] * b[j];
        }
        let p = a[col * m + col];
        b[col] = if p == 0.0 { 0.0 } else { s / p };
    }
}

// ---------------------------------------------------------------------------
// Singular time derivative

#[derive(Clone, Debug, Serialize)]
pub struct TimeSingularityReport {
    pub scales: Vec<f64>,
    /// `max_x ∫_{Q_h(x)}|u(t+h/2,y) - u(t-h/2,y)|dy / h^d` per scale.
    pub ratios: Vec<f64>,
    /// Whether the ratio fails to vanish as `h` shrinks.
    pub singular: bool,
}

/// Detects a time derivative that is not absolutely continuous.
///
/// For `∂t u ∈ L¹` the normalized increments vanish linearly in `h`; a jump
/// in time keeps them of order one.
pub fn time_singularity_check(u: &ScalarField, scales: &[f64]) -> Result<TimeSingularityReport> {
    let grid = u.grid();
    if scales.len() < 2 || scales.windows(2).any(|w| !(w[1] < w[0])) {
        return domain("need at least two decreasing scales");
    }
    let d = grid.d as i32;
    let mut ratios = Vec::new();
    for &h in scales {
        if h < 2.0 * grid.dt().max(grid.dx_max()) {
            return precondition("scale must cover at least two cells");
        }
        let times: Vec<f64> = (0..grid.nt)
            .map(|k| grid.time(k))
            .filter(|t| t - 0.5 * h >= grid.t_lo && t + 0.5 * h <= grid.t_hi)
            .collect();
        let centers: Vec<usize> = (0..grid.nodes())
            .filter(|&n| {
                let x = grid.node_point(n);
                grid.boundary == Boundary::Periodic
                    || (0..grid.d).all(|a| x[a] - 0.5 * h >= grid.x_lo[a] && x[a] + 0.5 * h <= grid.x_hi[a])
            })
            .collect();
        if times.is_empty() || centers.is_empty() {
            return precondition(format!("scale {h} does not fit in the domain"));
        }
        let best = centers
            .par_iter()
            .map(|&c| {
                let quad = grid.spatial_quadrature(&grid.node_point(c), 0.5 * h);
                let pts: Vec<(Vec<f64>, f64)> = quad.iter().map(|&(n, w)| (grid.node_point(n), w)).collect();
                times
                    .iter()
                    .map(|&t| {
                        pts.iter()
                            .map(|(x, w)| w * (u.interp(t + 0.5 * h, x) - u.interp(t - 0.5 * h, x)).abs())
                            .sum::<f64>()
                    })
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max);
        ratios.push(best / h.powi(d));
    }
    let first = ratios[0];
    let last = *ratios.last().unwrap();
    Ok(TimeSingularityReport {
        scales: scales.to_vec(),
        singular: first > 0.0 && last >= 0.5 * first,
        ratios,
    })
}

// ---------------------------------------------------------------------------
// Characteristic window diagnostics

/// Measured constants of a characteristic started inside a window triple.
#[derive(Clone, Debug, Serialize)]
pub struct WindowCharacteristicReport {
    pub start_t: f64,
    pub start_x: Vec<f64>,
    pub path: CharacteristicPath,
    /// `τ / (σh)`.
    pub exit_time_ratio: f64,
    /// `max(ξ/E, E/ξ)` with `E = (c1h)^q/τ^{q-1}`.
    pub energy_comparability: Option<f64>,
    /// `max_s ξ / (c1^{p(d-1)} τ (⨍_{Q_{c1h}}|Du(s)|)^p)` over `s ∈ [t, t+τ/2]`.
    pub space_oscillation: Option<f64>,
    /// `⨍_{Q_h}(u(t0+σh/2) - u(t0-σh/2)) / ξ`.
    pub time_oscillation: Option<f64>,
    /// `ξ / min (u(t,x) - u(s,y))` over `[t,t+τ/2] × B(γ(t+τ), h)`.
    pub neighborhood_smallness: Option<f64>,
}

/// Starts a characteristic at the node of `Q_h` (level `start_level`) whose
/// value is closest to the spatial average, follows it with the triple's stop
/// rule and measures the window constants.
pub fn window_characteristic_diagnostics(
    u: &ScalarField,
    problem: &HJProblem,
    triple: &WindowTriple,
    start_level: usize,
    opts: &SolveOptions,
) -> Result<WindowCharacteristicReport> {
    let grid = &problem.grid;
    if u.grid() != grid {
        return domain("solution lives on a different grid than the problem");
    }
    let p = problem.model.p;
    let x0 = &triple.q.center_x;
    let quad = grid.spatial_quadrature(x0, 0.5 * triple.h);
    if quad.is_empty() {
        return domain("spatial window holds no node");
    }
    let m: f64 = quad.iter().map(|e| e.1).sum();
    let mean = quad.iter().map(|&(n, w)| w * u.at(start_level, n)).sum::<f64>() / m;
    let node = quad
        .iter()
        .map(|e| e.0)
        .min_by(|&a, &b| {
            (u.at(start_level, a) - mean)
                .abs()
                .total_cmp(&(u.at(start_level, b) - mean).abs())
                .then(a.cmp(&b))
        })
        .unwrap();
    let start_t = grid.time(start_level);
    let start_x = grid.node_point(node);
    let path = extract_characteristic(u, problem, (start_t, &start_x), &triple.stop_rule(), opts)?;
    let tau = path.exit_time_tau;
    let xi = path.energy_xi;
    let energy = energy_comparability(&path, triple.c1, triple.h);
    let (_, du) = finite_diff(u);
    let gabs = du.norm();
    let space_oscillation = (xi > 0.0 && tau > 0.0).then(|| {
        let inner = grid.spatial_quadrature(x0, 0.5 * triple.c1 * triple.h);
        let mi: f64 = inner.iter().map(|e| e.1).sum();
        let scale = triple.c1.powf(p * (grid.d as f64 - 1.0)) * tau;
        (0..grid.nt)
            .filter(|&k| grid.time(k) >= start_t - 1e-12 && grid.time(k) <= start_t + 0.5 * tau + 1e-12)
            .map(|k| {
                let a = inner.iter().map(|&(n, w)| w * gabs.at(k, n)).sum::<f64>() / mi;
                xi / (scale * a.powf(p))
            })
            .fold(0.0, f64::max)
    });
    let time_oscillation = (xi > 0.0).then(|| {
        let th = triple.q.center_t + triple.q.half_time;
        let tl = triple.q.center_t - triple.q.half_time;
        let inc = quad
            .iter()
            .map(|&(n, w)| {
                let x = grid.node_point(n);
                w * (u.interp(th, &x) - u.interp(tl, &x))
            })
            .sum::<f64>()
            / m;
        inc / xi
    });
    let neighborhood_smallness = (xi > 0.0 && tau > 0.0).then(|| {
        let end = path.points.last().unwrap();
        let u0 = u.at(start_level, node);
        let mut worst = f64::INFINITY;
        for k in 0..grid.nt {
            let t = grid.time(k);
            if t < start_t - 1e-12 || t > start_t + 0.5 * tau + 1e-12 {
                continue;
            }
            for n in 0..grid.nodes() {
                let y = grid.node_point(n);
                let dist = (0..grid.d)
                    .map(|a| {
                        let mut disp = y[a] - end[a];
                        if grid.boundary == Boundary::Periodic {
                            let l = grid.period(a);
                            disp -= (disp / l).round() * l;
                        }
                        disp * disp
                    })
                    .sum::<f64>()
                    .sqrt();
                if dist <= triple.h {
                    worst = worst.min(u0 - u.at(k, n));
                }
            }
        }
        if worst > 0.0 && worst.is_finite() {
            xi / worst
        } else {
            f64::INFINITY
        }
    });
    Ok(WindowCharacteristicReport {
        start_t,
        start_x,
        exit_time_ratio: tau / (triple.sigma * triple.h),
        energy_comparability: energy,
        space_oscillation,
        time_oscillation,
        neighborhood_smallness,
        path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maximal_function_of_constant_is_constant() {
        let g = CellFunction::new(0.0, 1.0, vec![2.5; 10]).unwrap();
        // Inside the support small windows give 2.5; larger ones only dilute.
        for v in maximal_function_1d(&g, None) {
            assert!((v - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn maximal_function_of_indicator_away_from_support() {
        let g = CellFunction::new(0.0, 1.0, vec![1.0; 4]).unwrap();
        assert!((maximal_function_at(&g, 2.0, None) - 0.25).abs() < 1e-15);
        // Brute-force oracle over a fine τ grid.
        let brute = (1..20000)
            .map(|i| g.centered_average(2.0, i as f64 * 1e-3))
            .fold(0.0, f64::max);
        assert!((brute - 0.25).abs() < 1e-9);
        let m = maximal_superlevel_measure(&g, 0.25, 64).unwrap();
        assert!((m - 3.0).abs() < 0.02, "measure {m}");
    }

    #[test]
    fn maximal_function_dominates_data() {
        let g = CellFunction::new(-1.0, 1.0, vec![0.0, 3.0, 1.0, 0.5, 7.0, 0.0]).unwrap();
        let mg = maximal_function_1d(&g, None);
        for (a, b) in mg.iter().zip(&g.values) {
            assert!(a >= b);
        }
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = IntrinsicScaleConfig::with_defaults(2.0, 2.0).unwrap();
        assert_eq!((cfg.c1, cfg.c2, cfg.kappa, cfg.eta), (2.0, 10.0, 1.0, 0.5));
        assert!(cfg.sigma(cfg.lambda0) <= 1.0);
        let raised = IntrinsicScaleConfig { kappa: 4.0, ..cfg }.normalized().unwrap();
        assert!((raised.lambda0 - 4.0).abs() < 1e-12);
        assert!(IntrinsicScaleConfig { c2: 9.0, ..cfg }.normalized().is_err());
        assert!(cfg.check_dimension(1).is_ok());
        assert!(IntrinsicScaleConfig::with_defaults(2.0, 1.4).unwrap().check_dimension(1).is_err());
    }

    fn unit_grid(n: usize) -> GridSpec {
        GridSpec::line(n, n, (0.0, 1.0), (0.0, 1.0), Boundary::Clamped).unwrap()
    }

    #[test]
    fn good_time_constant_fields_pick_first_candidate() {
        let g = unit_grid(201);
        let cfg = IntrinsicScaleConfig::with_defaults(2.0, 2.0).unwrap();
        let triple = WindowTriple::new(0.5, vec![0.5], 0.08, 1.0, &cfg).unwrap();
        let du = ScalarField::constant(g.clone(), 1.0).unwrap();
        let f = ScalarField::constant(g.clone(), 1.0).unwrap();
        match select_good_time(&du, &f, &triple, &cfg, 1e6).unwrap() {
            GoodTime::Found { t, constant, .. } => {
                assert!(t > 0.5 - 0.08 && t < 0.5 - 0.04);
                let first = (0..g.nt).map(|k| g.time(k)).find(|&s| s > 0.42 + 1e-12).unwrap();
                assert!((t - first).abs() < 1e-12);
                assert!(constant > 0.0);
            }
            other => panic!("{other:?}"),
        }
        match select_good_time(&du, &f, &triple, &cfg, 1e-6).unwrap() {
            GoodTime::Infeasible { min_constant } => assert!(min_constant > 1e-6),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stopping_radius_examples() {
        let g = unit_grid(101);
        let cfg = IntrinsicScaleConfig::with_defaults(2.0, 2.0).unwrap();
        let flat = ScalarField::constant(g.clone(), 4.0).unwrap();
        let r = stopping_radius(&flat, (0.5, &[0.5]), 2.0, &cfg, 0.05).unwrap().unwrap();
        assert_eq!(r.h, 0.05);
        let low = ScalarField::constant(g.clone(), 1.0).unwrap();
        assert!(stopping_radius(&low, (0.5, &[0.5]), 2.0, &cfg, 0.05).unwrap().is_none());
    }

    #[test]
    fn reverse_holder_affine_is_jensen_equality() {
        let g = unit_grid(101);
        let cfg = IntrinsicScaleConfig::with_defaults(2.0, 2.0).unwrap();
        let u = ScalarField::from_fn(g.clone(), |_, x| 2.0 * x[0]).unwrap();
        let f = ScalarField::constant(g.clone(), 0.0).unwrap();
        let triple = WindowTriple::new(0.5, vec![0.5], 0.05, 2.0, &cfg).unwrap();
        let rep = reverse_holder_check(&u, &f, &triple, &cfg).unwrap();
        assert!(rep.hypothesis_met);
        // 4 / (4 + 1)
        assert!((rep.min_c_hat.unwrap() - 0.8).abs() < 1e-9);
        let high = WindowTriple::new(0.5, vec![0.5], 0.05, 3.0, &cfg).unwrap();
        let rep = reverse_holder_check(&u, &f, &high, &cfg).unwrap();
        assert!(!rep.hypothesis_met && rep.min_c_hat.is_none());
    }

    #[test]
    fn good_lambda_empty_level_sets() {
        let g = unit_grid(41);
        let cfg = IntrinsicScaleConfig::with_defaults(2.0, 2.0).unwrap();
        let gf = ScalarField::constant(g.clone(), 0.5).unwrap();
        let f = ScalarField::constant(g.clone(), 0.0).unwrap();
        let rep = good_lambda_check(&gf, &f, &geometric_grid(1.0, 2.0, 5), &cfg).unwrap();
        assert_eq!(rep.min_constant, 0.0);
        assert!(rep.stats.iter().all(|s| s.measure == 0.0));
        assert!(good_lambda_check(&gf, &f, &[0.5], &cfg).is_err());
    }

    #[test]
    fn scan_rule_classification() {
        let rule = ScanRule::default();
        assert_eq!(rule.classify(&[1.0, 1.6, 2.6]), ScanVerdict::Diverging);
        assert_eq!(rule.classify(&[1.0, 1.1, 1.15]), ScanVerdict::Bounded);
        assert_eq!(rule.classify(&[1.0, 1.4, 2.2]), ScanVerdict::Inconclusive);
        assert_eq!(rule.classify(&[0.0, 0.0, 0.0]), ScanVerdict::Bounded);
    }

    #[test]
    fn linear_in_time_family_is_bounded() {
        let fields: Vec<ScalarField> = [21, 41, 81]
            .iter()
            .map(|&n| ScalarField::from_fn(unit_grid(n), |t, _| t).unwrap())
            .collect();
        let region = CubeWindow::from_bounds((0.25, 0.75), (0.25, 0.75), 1).unwrap();
        let rep = sobolev_exponent_scan(&fields, 2.0, &[1.0, 3.0], &region, &ScanRule::default()).unwrap();
        for row in &rep.norms_per_level {
            assert!((row[0] - 0.25f64.powf(0.5)).abs() < 1e-9);
            assert!((row[1] - 0.25f64.powf(0.25)).abs() < 1e-9);
        }
        assert!(rep.verdicts.iter().all(|v| *v == ScanVerdict::Bounded));
        assert!(rep.critical_epsilon_estimate.is_none());
    }

    #[test]
    fn dt_cube_examples() {
        let g = unit_grid(201);
        let params = DtCubeParams {
            c_bar: 2.0,
            r1: 2.0,
            p: 2.0,
            c: 1.0,
        };
        let w = CubeWindow::new(0.5, vec![0.5], 0.05, 0.05).unwrap();
        let one = ScalarField::constant(g.clone(), 1.0).unwrap();
        let u = ScalarField::from_fn(g.clone(), |t, _| t).unwrap();
        let rep = time_derivative_cube_bound(&u, &one, &w, &params).unwrap();
        let h: f64 = 0.1;
        assert!((rep.lhs - h * h).abs() < 1e-12);
        assert!((rep.min_c - h * h / (2.0 * (2.0 * h).powi(2))).abs() < 1e-9);
        let down = ScalarField::from_fn(g.clone(), |t, _| -t).unwrap();
        let rep = time_derivative_cube_bound(&down, &one, &w, &params).unwrap();
        assert!(rep.lhs < 0.0 && rep.min_c == 0.0 && rep.margin > 0.0);
    }

    #[test]
    fn blowup_affine_and_kink() {
        let affine = ClosedForm {
            d: 1,
            eval: |t: f64, x: &[f64]| 2.0 * t - 3.0 * x[0],
            domain: |_: f64, _: &[f64]| true,
        };
        let rep = blowup_differentiability_check(&affine, (0.5, &[0.1]), &[0.1, 0.05, 0.025]).unwrap();
        assert!(rep.levels.iter().all(|l| l.fit_error < 1e-12));
        assert!(rep.differentiable_like);
        assert!((rep.levels[0].slope_t - 2.0).abs() < 1e-9);
        let kink = ClosedForm {
            d: 1,
            eval: |_: f64, x: &[f64]| x[0].abs(),
            domain: |_: f64, _: &[f64]| true,
        };
        let rep = blowup_differentiability_check(&kink, (0.5, &[0.0]), &[0.1, 0.05, 0.025]).unwrap();
        assert!(!rep.differentiable_like);
        let e = rep.levels[0].fit_error;
        assert!(e > 0.1 && rep.levels.iter().all(|l| (l.fit_error - e).abs() < 1e-9));
    }

    #[test]
    fn step_in_time_is_singular_and_smooth_is_not() {
        let g = unit_grid(129);
        let step = ScalarField::from_fn(g.clone(), |t, _| if t < 0.5 { 0.0 } else { 1.0 }).unwrap();
        let smooth = ScalarField::from_fn(g.clone(), |t, x| t * t + x[0]).unwrap();
        let scales = [0.25, 0.125, 0.0625];
        assert!(time_singularity_check(&step, &scales).unwrap().singular);
        assert!(!time_singularity_check(&smooth, &scales).unwrap().singular);
    }

    #[test]
    fn dense_solver() {
        let mut a = vec![2.0, 1.0, 1.0, 3.0];
        let mut b = vec![3.0, 5.0];
        solve_dense(&mut a, &mut b, 2);
        assert!((b[0] - 0.8).abs() < 1e-12 && (b[1] - 1.4).abs() < 1e-12);
    }
}
