//! Discrete generalized characteristics.
//!
//! - [`extract_characteristic`] replays the solver's per-node argmin forward in time
//! - [`verify_supersolution_inequality`] checks the energy inequality along a path
//! - [`weak_reverse_inequality_check`] compares `⨍|γ̇|^q` with `(⨍|γ̇|)^q` on dyadic windows
//! - smaller helpers: endpoint displacement, energy comparability, path Hölder exponent

use std::io::Write;

use serde::Serialize;

use crate::error::{domain, precondition, Error, Result};
use crate::grid::{GridSpec, ScalarField};
use crate::hamiltonian::norm;
use crate::hopf_lax::{coefficient_level, HJProblem, SolveOptions, Stepper};

/// Why a path stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    /// Left the closed spatial cube of the stop window.
    HitSpatialBound,
    /// Ran for the window's time cap.
    HitTimeCap,
    /// Reached the last time level.
    ReachedHorizon,
}

/// When to stop following a path.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum StopRule {
    /// Follow to the final time.
    Horizon,
    /// Stop on leaving the sup-norm cube of `half_width` around `center`, or
    /// after `time_cap` has elapsed, whichever comes first.
    Window {
        center: Vec<f64>,
        half_width: f64,
        time_cap: f64,
    },
}

/// A discrete path `t_k ↦ x_k` with its energy and exit data.
#[derive(Clone, Debug, Serialize)]
pub struct CharacteristicPath {
    pub times: Vec<f64>,
    /// Positions, unwrapped on periodic axes.
    pub points: Vec<Vec<f64>>,
    /// `(x_{k+1} - x_k)/Δt`, one per step.
    pub velocities: Vec<Vec<f64>>,
    /// Conjugate exponent used for the energy.
    pub q: f64,
    /// `Σ Δt |γ̇|^q`.
    pub energy_xi: f64,
    /// Elapsed time at exit.
    pub exit_time_tau: f64,
    pub exit_reason: ExitReason,
}

impl CharacteristicPath {
    /// Builds a path from a start point and per-step velocities.
    pub fn from_velocities(t0: f64, x0: Vec<f64>, dt: f64, velocities: Vec<Vec<f64>>, q: f64) -> Result<Self> {
        if !(dt > 0.0) || !(q > 1.0) {
            return domain("need dt > 0 and q > 1");
        }
        let mut times = vec![t0];
        let mut points = vec![x0];
        for (k, v) in velocities.iter().enumerate() {
            let last = &points[k];
            if v.len() != last.len() {
                return domain("velocity dimension mismatch");
            }
            let next: Vec<f64> = last.iter().zip(v).map(|(x, v)| x + dt * v).collect();
            points.push(next);
            times.push(t0 + (k + 1) as f64 * dt);
        }
        let energy_xi = velocities.iter().map(|v| dt * norm(v).powf(q)).sum();
        let tau = times.last().unwrap() - t0;
        Ok(CharacteristicPath {
            times,
            points,
            velocities,
            q,
            energy_xi,
            exit_time_tau: tau,
            exit_reason: ExitReason::ReachedHorizon,
        })
    }

    pub fn steps(&self) -> usize {
        self.velocities.len()
    }

    pub fn step_length(&self, i: usize) -> f64 {
        self.times[i + 1] - self.times[i]
    }

    pub fn speeds(&self) -> Vec<f64> {
        self.velocities.iter().map(|v| norm(v)).collect()
    }

    /// `Σ Δt |γ̇|^q` up to each node (starts at 0).
    pub fn cumulative_energy(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = vec![0.0];
        for (i, v) in self.velocities.iter().enumerate() {
            acc += self.step_length(i) * norm(v).powf(self.q);
            out.push(acc);
        }
        out
    }

    /// Writes `k,t,x1[,x2],speed_q,cum_energy`; the speed column of node `k`
    /// is the step leaving it (0 at the last node).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.points[0].len();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["k".to_string(), "t".to_string()];
        header.extend((1..=d).map(|a| format!("x{a}")));
        header.push("speed_q".into());
        header.push("cum_energy".into());
        w.write_record(&header).map_err(csv_err)?;
        let cum = self.cumulative_energy();
        for k in 0..self.times.len() {
            let speed_q = self.velocities.get(k).map_or(0.0, |v| norm(v).powf(self.q));
            let mut row = vec![k.to_string(), self.times[k].to_string()];
            row.extend(self.points[k].iter().map(|x| x.to_string()));
            row.push(speed_q.to_string());
            row.push(cum[k].to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::FieldFile(e.to_string())
}

/// Follows the solver's argmin forward from `start` until `stop` fires.
///
/// `opts` must match the options of the solve that produced `u`. In node mode
/// the start snaps to the nearest node; the start time always snaps to the
/// nearest level.
pub fn extract_characteristic(
    u: &ScalarField,
    problem: &HJProblem,
    start: (f64, &[f64]),
    stop: &StopRule,
    opts: &SolveOptions,
) -> Result<CharacteristicPath> {
    let grid = &problem.grid;
    if u.grid() != grid {
        return domain("solution lives on a different grid than the problem");
    }
    let (t0, x0) = start;
    if !grid.contains(t0, x0) {
        return domain(format!("start ({t0}, {x0:?}) is outside the grid"));
    }
    let k0 = grid
        .nearest_level(t0)
        .ok_or_else(|| Error::Domain("start time outside the grid".into()))?;
    let mut x: Vec<f64> = if opts.interpolate {
        x0.to_vec()
    } else {
        grid.node_point(grid.nearest_node(x0)?)
    };
    let mut times = vec![grid.time(k0)];
    let mut points = vec![x.clone()];
    let mut velocities = Vec::new();
    let mut energy = 0.0;
    let q = problem.model.q;
    let mut reason = ExitReason::ReachedHorizon;
    if let StopRule::Window { .. } = stop {
        if outside(stop, grid, &x) {
            reason = ExitReason::HitSpatialBound;
        }
    }
    let mut k = k0;
    while reason == ExitReason::ReachedHorizon && k + 1 < grid.nt {
        let coef = coefficient_level(&problem.model, grid, k);
        let a_min = coef.as_ref().map(|c| c.iter().copied().fold(f64::INFINITY, f64::min));
        let stepper = Stepper::new(grid, &problem.model, k, u.level(k + 1), opts, a_min);
        let wrapped: Vec<f64> = (0..grid.d).map(|a| grid.wrap(a, x[a])).collect();
        let (a, fv) = if opts.interpolate {
            (
                problem.model.coefficient_at(grid.time(k), &wrapped),
                problem.f.interp_level(k, &wrapped),
            )
        } else {
            let node = grid.nearest_node(&wrapped)?;
            (coef.as_ref().map(|c| c[node]), problem.f.at(k, node))
        };
        let out = stepper.minimize(&wrapped, a, fv)?;
        let dt = stepper.dt;
        // Keep the path continuous across periodic seams.
        let y: Vec<f64> = (0..grid.d).map(|i| x[i] + (out.y[i] - wrapped[i])).collect();
        let v: Vec<f64> = (0..grid.d).map(|i| (y[i] - x[i]) / dt).collect();
        energy += dt * norm(&v).powf(q);
        velocities.push(v);
        x = y;
        k += 1;
        times.push(grid.time(k));
        points.push(x.clone());
        if let StopRule::Window { time_cap, .. } = stop {
            let elapsed = grid.time(k) - times[0];
            if outside(stop, grid, &x) {
                reason = ExitReason::HitSpatialBound;
            } else if elapsed >= time_cap - 1e-12 * (1.0 + time_cap.abs()) {
                reason = ExitReason::HitTimeCap;
            }
        }
    }
    let tau = times.last().unwrap() - times[0];
    Ok(CharacteristicPath {
        times,
        points,
        velocities,
        q,
        energy_xi: energy,
        exit_time_tau: tau,
        exit_reason: reason,
    })
}

fn outside(stop: &StopRule, grid: &GridSpec, x: &[f64]) -> bool {
    let StopRule::Window { center, half_width, .. } = stop else {
        return false;
    };
    let tol = 1e-12 * (1.0 + half_width.abs());
    (0..grid.d).any(|a| {
        // Unwrapped paths make the plain difference correct on periodic axes too.
        (x[a] - center[a]).abs() > half_width + tol
    })
}

/// Result of the energy inequality check along a path.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SupersolutionCheck {
    /// `min_s [u(t,x) - u(s,γ(s)) - (1/C)∫|γ̇|^q + C(s-t)]`.
    pub margin: f64,
    pub pass: bool,
    /// Smallest `C > 0` passing at the same tolerance.
    pub min_c: f64,
}

/// Checks `u(t,x) >= u(s,γ(s)) + (1/C)∫_t^s|γ̇|^q - C(s-t)` at every node of the path.
pub fn verify_supersolution_inequality(
    u: &ScalarField,
    path: &CharacteristicPath,
    c: f64,
    tolerance: f64,
) -> Result<SupersolutionCheck> {
    if !(c > 0.0) {
        return domain("constant must be positive");
    }
    let grid = u.grid();
    for (t, x) in path.times.iter().zip(&path.points) {
        let wrapped: Vec<f64> = (0..grid.d).map(|a| grid.wrap(a, x[a])).collect();
        if !grid.contains(*t, &wrapped) {
            return precondition("path leaves the grid domain");
        }
    }
    let value = |i: usize| {
        let x: Vec<f64> = (0..grid.d).map(|a| grid.wrap(a, path.points[i][a])).collect();
        u.interp(path.times[i], &x)
    };
    let u0 = value(0);
    let cum = path.cumulative_energy();
    let mut margin = f64::INFINITY;
    let mut min_c = 0.0f64;
    for i in 0..path.times.len() {
        let gap = path.times[i] - path.times[0];
        let drop = u0 - value(i);
        let e = cum[i];
        margin = margin.min(drop - e / c + c * gap);
        // C^2 gap + (drop + tol) C - e >= 0
        let b = drop + tolerance;
        let needed = if gap > 0.0 {
            (-b + (b * b + 4.0 * gap * e).sqrt()) / (2.0 * gap)
        } else if b >= 0.0 || e == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        min_c = min_c.max(needed);
    }
    Ok(SupersolutionCheck {
        margin,
        pass: margin >= -tolerance,
        min_c,
    })
}

/// Largest increase of `u(s,γ(s)) - C s` between consecutive nodes, and the
/// smallest `C` making it non-increasing.
pub fn monotone_value_check(u: &ScalarField, path: &CharacteristicPath, c: f64) -> (f64, f64) {
    let grid = u.grid();
    let value = |i: usize| {
        let x: Vec<f64> = (0..grid.d).map(|a| grid.wrap(a, path.points[i][a])).collect();
        u.interp(path.times[i], &x)
    };
    let mut worst = f64::NEG_INFINITY;
    let mut min_c = 0.0f64;
    for i in 0..path.steps() {
        let dt = path.step_length(i);
        let inc = value(i + 1) - value(i);
        worst = worst.max(inc - c * dt);
        min_c = min_c.max(inc / dt);
    }
    (worst, min_c)
}

/// One dyadic window of [`weak_reverse_inequality_check`].
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ReverseWindow {
    pub start: f64,
    pub length: f64,
    /// `⨍|γ̇|^q`.
    pub mean_speed_q: f64,
    /// `⨍|γ̇|`.
    pub mean_speed: f64,
    /// `lhs / (A (⨍|γ̇|)^q + B h^{α-1})`.
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct WeakReverseReport {
    pub holds: bool,
    /// Smallest `A` for which every window passes with the given `B`.
    pub min_a: f64,
    pub worst_ratio: f64,
    pub windows: Vec<ReverseWindow>,
}

/// Checks `⨍|γ̇|^q <= A(⨍|γ̇|)^q + B h^{α-1}` on dyadic windows of the path.
pub fn weak_reverse_inequality_check(path: &CharacteristicPath, a: f64, b: f64, alpha: f64) -> Result<WeakReverseReport> {
    let n = path.steps();
    if n < 4 {
        return precondition("path needs at least 4 steps");
    }
    let speeds = path.speeds();
    let q = path.q;
    let mut windows = Vec::new();
    let mut min_a = 0.0f64;
    let mut worst = 0.0f64;
    let mut m = n;
    while m >= 1 {
        for s in 0..n / m {
            let range = s * m..(s + 1) * m;
            let h: f64 = range.clone().map(|i| path.step_length(i)).sum();
            let lhs = range.clone().map(|i| path.step_length(i) * speeds[i].powf(q)).sum::<f64>() / h;
            let avg = range.clone().map(|i| path.step_length(i) * speeds[i]).sum::<f64>() / h;
            let extra = b * h.powf(alpha - 1.0);
            let rhs = a * avg.powf(q) + extra;
            let ratio = if rhs > 0.0 {
                lhs / rhs
            } else if lhs > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            worst = worst.max(ratio);
            let excess = lhs - extra;
            if excess > 0.0 {
                let need = if avg > 0.0 { excess / avg.powf(q) } else { f64::INFINITY };
                min_a = min_a.max(need);
            }
            windows.push(ReverseWindow {
                start: path.times[s * m],
                length: h,
                mean_speed_q: lhs,
                mean_speed: avg,
                ratio,
            });
        }
        m /= 2;
    }
    Ok(WeakReverseReport {
        holds: worst <= 1.0 + 1e-12,
        min_a,
        worst_ratio: worst,
        windows,
    })
}

/// Fits `max_window ∫|γ̇| ≈ C h^{1-1/θ}` over dyadic window sizes and returns `(θ, C)`.
///
/// Returns `θ = ∞` when the fitted slope reaches 1 (bounded speed).
pub fn path_holder_exponent(path: &CharacteristicPath) -> Result<(f64, f64)> {
    let n = path.steps();
    if n < 4 {
        return precondition("path needs at least 4 steps");
    }
    let speeds = path.speeds();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut m = n;
    while m >= 1 {
        let mut best = 0.0f64;
        let mut h = 0.0;
        for s in 0..n / m {
            let range = s * m..(s + 1) * m;
            h = range.clone().map(|i| path.step_length(i)).sum::<f64>();
            best = best.max(range.map(|i| path.step_length(i) * speeds[i]).sum::<f64>());
        }
        if best > 0.0 {
            xs.push(h.ln());
            ys.push(best.ln());
        }
        m /= 2;
    }
    if xs.len() < 2 {
        return Ok((f64::INFINITY, 0.0));
    }
    let (slope, icept) = linear_fit(&xs, &ys);
    let theta = if slope >= 1.0 { f64::INFINITY } else { 1.0 / (1.0 - slope) };
    Ok((theta, icept.exp()))
}

/// Least-squares line `y ≈ slope x + intercept`.
pub(crate) fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// `|γ(end) - γ(start)| <= ξ^{1/q} τ^{1/p}` up to rounding.
pub fn endpoint_displacement_holds(path: &CharacteristicPath) -> bool {
    let first = &path.points[0];
    let last = path.points.last().unwrap();
    let disp: Vec<f64> = first.iter().zip(last).map(|(a, b)| b - a).collect();
    let p = path.q / (path.q - 1.0);
    let bound = path.energy_xi.powf(1.0 / path.q) * path.exit_time_tau.powf(1.0 / p);
    norm(&disp) <= bound * (1.0 + 1e-12) + 1e-14
}

/// `max(ξ/E, E/ξ)` with `E = (c1 h)^q / τ^{q-1}`, for paths that left
/// their window through the side.
pub fn energy_comparability(path: &CharacteristicPath, c1: f64, h: f64) -> Option<f64> {
    if path.exit_reason != ExitReason::HitSpatialBound || path.exit_time_tau <= 0.0 || path.energy_xi <= 0.0 {
        return None;
    }
    let reference = (c1 * h).powf(path.q) / path.exit_time_tau.powf(path.q - 1.0);
    Some((path.energy_xi / reference).max(reference / path.energy_xi))
}
