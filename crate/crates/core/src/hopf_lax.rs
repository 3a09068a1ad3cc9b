//! Backward dynamic programming for `-∂t u + H(t,x,Du) = f`, `u(T) = terminal`.
//!
//! Each step applies the discrete Lax formula
//! `u(t_k,x) = min_y [Δt L(t_k,x,(y-x)/Δt) + Δt f(t_k,x) + u(t_{k+1},y)]`.
//! Candidates are grid nodes by default; with [`SolveOptions::interpolate`]
//! (one space dimension, power Hamiltonians) the next level is linearly
//! interpolated and minimized exactly on every cell. Ties go to the smallest
//! node index.
//!
//! Also here: the comparison-curve upper bounds and the distributional
//! subsolution residual.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, precondition, Error, Result};
use crate::grid::{level_gradient, lebesgue_norm, Boundary, CubeWindow, GridSpec, ScalarField};
use crate::hamiltonian::{norm, power_l, HamiltonianKind, HamiltonianModel};

/// Terminal-value problem on a grid.
#[derive(Clone, Debug)]
pub struct HJProblem {
    pub grid: GridSpec,
    pub model: HamiltonianModel,
    pub f: ScalarField,
    /// Values at `t_hi`, one per spatial node.
    pub terminal: Vec<f64>,
}

impl HJProblem {
    pub fn new(grid: GridSpec, model: HamiltonianModel, f: ScalarField, terminal: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if f.grid() != &grid {
            return domain("source term lives on a different grid");
        }
        if terminal.len() != grid.nodes() {
            return domain(format!(
                "terminal data has {} values, grid has {} nodes",
                terminal.len(),
                grid.nodes()
            ));
        }
        if terminal.iter().any(|v| !v.is_finite()) {
            return domain("terminal data contains NaN or infinity");
        }
        if !model.is_usable() {
            return precondition("custom Hamiltonian must pass the growth-envelope check first");
        }
        Ok(HJProblem {
            grid,
            model,
            f,
            terminal,
        })
    }

    /// Problem with `f ≡ 0`.
    pub fn homogeneous(grid: GridSpec, model: HamiltonianModel, terminal: Vec<f64>) -> Result<Self> {
        let f = ScalarField::constant(grid.clone(), 0.0)?;
        Self::new(grid, model, f, terminal)
    }
}

/// Solver settings.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SolveOptions {
    /// Minimize over the piecewise-linear interpolant of the next level
    /// instead of over nodes (1D power Hamiltonians only).
    pub interpolate: bool,
    /// Per-node cap on search-radius doublings.
    pub max_doublings: u32,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            interpolate: false,
            max_doublings: 30,
        }
    }
}

/// Diagnostics of a backward solve.
#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    /// Number of backward steps.
    pub iterations: usize,
    /// Largest search radius used at each step, indexed by the level being computed.
    pub search_radius_used: Vec<f64>,
    /// Largest `|u(t_k) - u(t_{k+1})|` over all nodes and steps.
    pub max_cell_update: f64,
    /// Number of per-node radius doublings.
    pub radius_doublings: usize,
}

/// Outcome of one discrete Lax minimization.
#[derive(Clone, Copy, Debug)]
pub(crate) struct StepOutcome {
    pub value: f64,
    /// Arrival point (unwrapped on periodic axes).
    pub y: [f64; 2],
    pub radius: f64,
    pub doublings: u32,
}

/// One backward step against a fixed next level.
pub(crate) struct Stepper<'a> {
    pub grid: &'a GridSpec,
    pub model: &'a HamiltonianModel,
    pub t: f64,
    pub dt: f64,
    pub next: &'a [f64],
    pub interpolate: bool,
    pub max_doublings: u32,
    pub base_radius: f64,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(
        grid: &'a GridSpec,
        model: &'a HamiltonianModel,
        k: usize,
        next: &'a [f64],
        opts: &SolveOptions,
        a_min: Option<f64>,
    ) -> Self {
        let dt = grid.time(k + 1) - grid.time(k);
        let lip = lipschitz_estimate(grid, next);
        let q = model.q;
        let dx = grid.dx_max();
        let base = match a_min {
            Some(a) => dt * (q * lip / a).powf(1.0 / (q - 1.0)) + dx,
            None => {
                let a_eff = (model.p * model.bar_c).powf(-1.0 / (model.p - 1.0));
                dt * (q * (lip + model.bar_c) / a_eff).powf(1.0 / (q - 1.0)) + 2.0 * dx
            }
        };
        Stepper {
            grid,
            model,
            t: grid.time(k),
            dt,
            next,
            interpolate: opts.interpolate,
            max_doublings: opts.max_doublings,
            base_radius: base.min(grid.diameter()).max(dx),
        }
    }

    /// Minimizes from `x` with coefficient `a` (power family) and source value `f`.
    pub(crate) fn minimize(&self, x: &[f64], a: Option<f64>, f: f64) -> Result<StepOutcome> {
        let cap = self.grid.diameter();
        let dx = self.grid.dx_max();
        let mut radius = self.base_radius;
        let mut doublings = 0;
        loop {
            let (value, y) = if self.interpolate {
                self.scan_segments(x, a.unwrap_or(1.0), f, radius)
            } else {
                self.scan_nodes(x, a, f, radius)?
            };
            let dist = (0..self.grid.d).map(|i| (y[i] - x[i]).powi(2)).sum::<f64>().sqrt();
            let on_edge = dist > radius - dx;
            if !on_edge || radius >= cap || doublings >= self.max_doublings {
                return Ok(StepOutcome {
                    value,
                    y,
                    radius,
                    doublings,
                });
            }
            radius = (2.0 * radius).min(cap);
            doublings += 1;
        }
    }

    fn lagrangian(&self, x: &[f64], a: Option<f64>, disp: &[f64]) -> Result<f64> {
        let inv = 1.0 / self.dt;
        match (&self.model.kind, a) {
            (HamiltonianKind::Power { offset, .. }, Some(a)) => {
                Ok(power_l(self.model.q, a, norm(disp) * inv) - offset)
            }
            _ => {
                let v: Vec<f64> = disp.iter().map(|c| c * inv).collect();
                self.model.legendre_transform(self.t, x, &v)
            }
        }
    }

    fn index_range(&self, axis: usize, lo: f64, hi: f64) -> (i64, i64) {
        let g = self.grid;
        let dx = g.dx(axis);
        let x0 = g.x_lo[axis];
        let mut a = ((lo - x0) / dx - 1e-12).ceil() as i64;
        let mut b = ((hi - x0) / dx + 1e-12).floor() as i64;
        if g.boundary == Boundary::Clamped {
            a = a.max(0);
            b = b.min(g.nx as i64 - 1);
        }
        (a, b)
    }

    fn wrap_index(&self, j: i64) -> usize {
        j.rem_euclid(self.grid.nx as i64) as usize
    }

    fn scan_nodes(&self, x: &[f64], a: Option<f64>, f: f64, radius: f64) -> Result<(f64, [f64; 2])> {
        let g = self.grid;
        let mut best = f64::INFINITY;
        let mut best_node = usize::MAX;
        let mut best_y = [x[0], if g.d == 2 { x[1] } else { 0.0 }];
        let fdt = self.dt * f;
        let r2 = radius * radius;
        let (a0, b0) = self.index_range(0, x[0] - radius, x[0] + radius);
        if g.d == 1 {
            for j in a0..=b0 {
                let y = g.x_lo[0] + j as f64 * g.dx(0);
                let node = self.wrap_index(j);
                let cost = self.dt * self.lagrangian(x, a, &[y - x[0]])? + fdt + self.next[node];
                if cost < best || (cost == best && node < best_node) {
                    best = cost;
                    best_node = node;
                    best_y = [y, 0.0];
                }
            }
        } else {
            let (a1, b1) = self.index_range(1, x[1] - radius, x[1] + radius);
            for j0 in a0..=b0 {
                let y0 = g.x_lo[0] + j0 as f64 * g.dx(0);
                let d0 = y0 - x[0];
                for j1 in a1..=b1 {
                    let y1 = g.x_lo[1] + j1 as f64 * g.dx(1);
                    let d1 = y1 - x[1];
                    if d0 * d0 + d1 * d1 > r2 {
                        continue;
                    }
                    let node = self.wrap_index(j0) * g.nx + self.wrap_index(j1);
                    let cost = self.dt * self.lagrangian(x, a, &[d0, d1])? + fdt + self.next[node];
                    if cost < best || (cost == best && node < best_node) {
                        best = cost;
                        best_node = node;
                        best_y = [y0, y1];
                    }
                }
            }
        }
        if best_node == usize::MAX {
            return domain("no candidate node within the search radius");
        }
        Ok((best, best_y))
    }

    fn scan_segments(&self, x: &[f64], a: f64, f: f64, radius: f64) -> (f64, [f64; 2]) {
        let g = self.grid;
        let dx = g.dx(0);
        let x0 = g.x_lo[0];
        let q = self.model.q;
        let off = self.model.offset();
        let mut j0 = ((x[0] - radius - x0) / dx).floor() as i64;
        let mut j1 = ((x[0] + radius - x0) / dx).ceil() as i64 - 1;
        if g.boundary == Boundary::Clamped {
            j0 = j0.max(0);
            j1 = j1.min(g.nx as i64 - 2);
        }
        let fdt = self.dt * f;
        let cost = |y: f64, u: f64| self.dt * (power_l(q, a, (y - x[0]).abs() / self.dt) - off) + fdt + u;
        let mut best = f64::INFINITY;
        let mut best_y = x[0];
        for j in j0..=j1 {
            let ya = x0 + j as f64 * dx;
            let yb = ya + dx;
            let ua = self.next[self.wrap_index(j)];
            let ub = self.next[self.wrap_index(j + 1)];
            let s = (ub - ua) / dx;
            let speed = if s == 0.0 {
                0.0
            } else if q == 2.0 {
                s.abs() / a
            } else {
                (s.abs() / a).powf(1.0 / (q - 1.0))
            };
            let ystar = (x[0] - s.signum() * speed * self.dt).clamp(ya, yb);
            let c = cost(ystar, ua + s * (ystar - ya));
            if c < best {
                best = c;
                best_y = ystar;
            }
        }
        (best, [best_y, 0.0])
    }
}

/// Largest nodal difference quotient of one level.
pub(crate) fn lipschitz_estimate(grid: &GridSpec, level: &[f64]) -> f64 {
    let nx = grid.nx;
    let mut lip = 0.0f64;
    for node in 0..grid.nodes() {
        let idx = grid.node_indices(node);
        for a in 0..grid.d {
            let stride = if grid.d == 1 || a == 1 { 1 } else { nx };
            let i = idx[a];
            let nb = if i + 1 < nx {
                node + stride
            } else if grid.boundary == Boundary::Periodic {
                node + stride - nx * stride
            } else {
                continue;
            };
            lip = lip.max((level[nb] - level[node]).abs() / grid.dx(a));
        }
    }
    lip
}

/// Coefficient `a(t_k, ·)` at every node, or `None` for custom models.
pub(crate) fn coefficient_level(model: &HamiltonianModel, grid: &GridSpec, k: usize) -> Option<Vec<f64>> {
    match &model.kind {
        HamiltonianKind::Power { coefficient, .. } => {
            let t = grid.time(k);
            Some(match coefficient {
                crate::hamiltonian::Coefficient::Nodal(field) if field.grid() == grid => field.level(k).to_vec(),
                c => (0..grid.nodes()).map(|n| c.at(t, &grid.node_point(n))).collect(),
            })
        }
        HamiltonianKind::Custom { .. } => None,
    }
}

/// Solves the terminal-value problem backward in time.
pub fn solve_backward(problem: &HJProblem, opts: &SolveOptions) -> Result<(ScalarField, SolveReport)> {
    let grid = &problem.grid;
    let model = &problem.model;
    if !model.is_usable() {
        return precondition("custom Hamiltonian must pass the growth-envelope check first");
    }
    if opts.interpolate && (grid.d != 1 || !matches!(model.kind, HamiltonianKind::Power { .. })) {
        return precondition("interpolated minimization supports one space dimension and power Hamiltonians");
    }
    let nn = grid.nodes();
    let nt = grid.nt;
    let mut values = vec![0.0; grid.len()];
    values[(nt - 1) * nn..].copy_from_slice(&problem.terminal);
    let points: Vec<Vec<f64>> = (0..nn).map(|n| grid.node_point(n)).collect();
    let mut radii = vec![0.0; nt - 1];
    let mut max_update = 0.0f64;
    let mut doublings = 0usize;
    for k in (0..nt - 1).rev() {
        let (head, tail) = values.split_at_mut((k + 1) * nn);
        let next = &tail[..nn];
        let current = &mut head[k * nn..];
        let coef = coefficient_level(model, grid, k);
        if let Some(c) = &coef {
            if c.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
                return domain(format!("coefficient is not positive at level {k}"));
            }
        }
        let a_min = coef.as_ref().map(|c| c.iter().copied().fold(f64::INFINITY, f64::min));
        let stepper = Stepper::new(grid, model, k, next, opts, a_min);
        let f = problem.f.level(k);
        let results: Vec<Result<StepOutcome>> = (0..nn)
            .into_par_iter()
            .map(|node| stepper.minimize(&points[node], coef.as_ref().map(|c| c[node]), f[node]))
            .collect();
        let mut rmax = 0.0f64;
        for (node, r) in results.into_iter().enumerate() {
            let out = r?;
            if !out.value.is_finite() {
                return domain(format!("non-finite value at level {k}"));
            }
            current[node] = out.value;
            max_update = max_update.max((out.value - next[node]).abs());
            rmax = rmax.max(out.radius);
            doublings += out.doublings as usize;
        }
        radii[k] = rmax;
    }
    let u = ScalarField::new(grid.clone(), values)?;
    Ok((
        u,
        SolveReport {
            iterations: nt - 1,
            search_radius_used: radii,
            max_cell_update: max_update,
            radius_doublings: doublings,
        },
    ))
}

/// Which comparison-curve bound to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVariant {
    /// `u(s,y) + C(ᾱh)^q/(s-t)^{q-1} + C(s-t)(⨍ f^{r1})^{1/r1}` with the
    /// average over `(t,s) × Q_{2ᾱh}`.
    LocalAverage,
    /// `u(s,y) + C|x-y|^q/(s-t)^{q-1} + C(‖f‖_r + 1)(s-t)^α`.
    GlobalLr,
}

/// Exponents of the comparison-curve construction.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BendingCurveParams {
    pub alpha_bar: f64,
    pub beta: f64,
    pub r1: f64,
    pub r: f64,
    pub p: f64,
    pub d: usize,
}

impl BendingCurveParams {
    pub fn new(alpha_bar: f64, beta: f64, r1: f64, r: f64, p: f64, d: usize) -> Result<Self> {
        if !(alpha_bar > 0.0) {
            return domain("alpha_bar must be positive");
        }
        let dd = d as f64;
        if !(r > 1.0 + dd / p) {
            return domain(format!("integrability exponent r = {r} must exceed 1 + d/p = {}", 1.0 + dd / p));
        }
        if !(r1 > 1.0 + dd / p && r1 < r) {
            return domain(format!("r1 = {r1} must lie in (1 + d/p, r)"));
        }
        let (lo, hi) = Self::beta_interval(p, r1, d)
            .ok_or_else(|| Error::Domain("empty interval for beta".into()))?;
        if !(beta > lo && beta < hi) {
            return domain(format!("beta = {beta} must lie in ({lo}, {hi})"));
        }
        Ok(BendingCurveParams {
            alpha_bar,
            beta,
            r1,
            r,
            p,
            d,
        })
    }

    /// `(1/p, (r1-1)/d)`, nonempty iff `r1 > 1 + d/p`.
    pub fn beta_interval(p: f64, r1: f64, d: usize) -> Option<(f64, f64)> {
        let lo = 1.0 / p;
        let hi = (r1 - 1.0) / d as f64;
        (hi > lo).then_some((lo, hi))
    }

    pub fn q(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    /// Bending amplitude `δ = ᾱ h (s-t)^{-β}`.
    pub fn delta(&self, h: f64, gap: f64) -> f64 {
        self.alpha_bar * h * gap.powf(-self.beta)
    }

    /// Time-Hölder exponent `α = (p(r-1) - d)/(p(r+1) - 1)`.
    pub fn holder_alpha(&self) -> f64 {
        holder_alpha(self.p, self.r, self.d)
    }
}

/// `(p(r-1) - d)/(p(r+1) - 1)`.
pub fn holder_alpha(p: f64, r: f64, d: usize) -> f64 {
    (p * (r - 1.0) - d as f64) / (p * (r + 1.0) - 1.0)
}

/// Right-hand side of a comparison-curve bound, split as `base + C·coefficient`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct UpperBound {
    pub bound: f64,
    /// `u(s,y)`.
    pub base: f64,
    /// Factor multiplying the caller's constant.
    pub coefficient: f64,
}

/// Evaluates the bound on `u(t,x)` obtained from `u(s,y)`, `s > t`.
#[allow(clippy::too_many_arguments)]
pub fn subsolution_upper_bound(
    u: &ScalarField,
    f: &ScalarField,
    from: (f64, &[f64]),
    to: (f64, &[f64]),
    params: &BendingCurveParams,
    c: f64,
    h: f64,
    variant: BoundVariant,
) -> Result<UpperBound> {
    let (t, x) = from;
    let (s, y) = to;
    let grid = u.grid();
    if !(s > t) {
        return precondition(format!("need s > t, got t = {t}, s = {s}"));
    }
    if !grid.contains(t, x) || !grid.contains(s, y) {
        return precondition("both points must lie in the grid domain");
    }
    let gap = s - t;
    let q = params.q();
    let base = u.interp(s, y);
    let coefficient = match variant {
        BoundVariant::LocalAverage => {
            let reach = params.alpha_bar * h;
            if x.iter().zip(y).any(|(a, b)| (a - b).abs() > reach) {
                return precondition("points are not inside a common cube Q_{ᾱh}");
            }
            let center: Vec<f64> = x.iter().zip(y).map(|(a, b)| 0.5 * (a + b)).collect();
            let window = CubeWindow::new(0.5 * (t + s), center, 0.5 * gap, reach)?;
            let q_w = grid.window_quadrature(&window);
            let m = q_w.measure();
            let avg = if m > 0.0 {
                q_w.integrate(grid, |k, n| f.at(k, n).max(0.0).powf(params.r1)) / m
            } else {
                0.0
            };
            reach.powf(q) / gap.powf(q - 1.0) + gap * avg.powf(1.0 / params.r1)
        }
        BoundVariant::GlobalLr => {
            let dist = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let whole = CubeWindow::new(
                0.5 * (grid.t_lo + grid.t_hi),
                (0..grid.d).map(|a| 0.5 * (grid.x_lo[a] + grid.x_hi[a])).collect(),
                0.5 * (grid.t_hi - grid.t_lo),
                0.5 * (0..grid.d).map(|a| grid.period(a)).fold(0.0, f64::max),
            )?;
            let fr = lebesgue_norm(f, params.r, &whole)?;
            dist.powf(q) / gap.powf(q - 1.0) + (fr + 1.0) * gap.powf(params.holder_alpha())
        }
    };
    Ok(UpperBound {
        bound: base + c * coefficient,
        base,
        coefficient,
    })
}

/// A pair of space-time points `((t,x), (s,y))`.
pub type PointPair = ((f64, Vec<f64>), (f64, Vec<f64>));

/// Smallest `C >= 0` for which the bound holds on every pair.
pub fn min_passing_constant(
    u: &ScalarField,
    f: &ScalarField,
    pairs: &[PointPair],
    params: &BendingCurveParams,
    h: f64,
    variant: BoundVariant,
) -> Result<f64> {
    let mut c = 0.0f64;
    for ((t, x), (s, y)) in pairs {
        let b = subsolution_upper_bound(u, f, (*t, x), (*s, y), params, 0.0, h, variant)?;
        let lhs = u.interp(*t, x);
        let excess = lhs - b.base;
        if excess > 0.0 {
            if b.coefficient <= 0.0 {
                return Ok(f64::INFINITY);
            }
            c = c.max(excess / b.coefficient);
        }
    }
    Ok(c)
}

/// Worst test-function residual of the subsolution inequality.
#[derive(Clone, Debug, Serialize)]
pub struct SubsolutionResidual {
    /// `max_φ ∫(u ∂tφ + (1/C̄)|Du|^p φ - f φ) / ∫φ`.
    pub worst: f64,
    pub worst_center_t: f64,
    pub worst_center_x: Vec<f64>,
    pub tests: usize,
}

/// Smooth bump `exp(-1/(1-z^2))` on `(-1,1)` and its derivative.
pub(crate) fn bump(z: f64) -> (f64, f64) {
    if z.abs() >= 1.0 {
        return (0.0, 0.0);
    }
    let w = 1.0 - z * z;
    let b = (-1.0 / w).exp();
    (b, b * (-2.0 * z / (w * w)))
}

/// Tests `-∂t u + (1/C̄)|Du|^p <= f` against a lattice of nonnegative tensor
/// bumps of radius `mollifier_scale` (same radius in time and space). The
/// time derivative falls on the test function, so `u` may jump in time.
pub fn distributional_subsolution_residual(
    u: &ScalarField,
    f: &ScalarField,
    model: &HamiltonianModel,
    mollifier_scale: f64,
) -> Result<SubsolutionResidual> {
    let grid = u.grid();
    if f.grid() != grid {
        return domain("source term lives on a different grid");
    }
    let s = mollifier_scale;
    if !(s >= 2.0 * grid.dt() && s >= 2.0 * grid.dx_max()) {
        return precondition("mollifier scale must cover at least two grid cells");
    }
    let nn = grid.nodes();
    let mut gp = vec![0.0; grid.len()];
    for k in 0..grid.nt {
        let grad = level_gradient(grid, u.level(k));
        for node in 0..nn {
            let g = norm(&grad[node * grid.d..(node + 1) * grid.d]);
            gp[k * nn + node] = g.powf(model.p) / model.bar_c - f.at(k, node);
        }
    }
    let half = 0.5 * s;
    let t_centers: Vec<f64> = lattice(grid.t_lo + s, grid.t_hi - s, half);
    let x_centers: Vec<Vec<f64>> = (0..grid.d)
        .map(|a| match grid.boundary {
            Boundary::Clamped => lattice(grid.x_lo[a] + s, grid.x_hi[a] - s, half),
            Boundary::Periodic => lattice(grid.x_lo[a], grid.x_hi[a] - 1e-12, half),
        })
        .collect();
    if t_centers.is_empty() || x_centers.iter().any(|c| c.is_empty()) {
        return precondition("mollifier scale too large for the domain");
    }
    let centers: Vec<(f64, Vec<f64>)> = t_centers
        .iter()
        .flat_map(|&t| {
            let xs: Vec<Vec<f64>> = if grid.d == 1 {
                x_centers[0].iter().map(|&x| vec![x]).collect()
            } else {
                x_centers[0]
                    .iter()
                    .flat_map(|&a| x_centers[1].iter().map(move |&b| vec![a, b]))
                    .collect()
            };
            xs.into_iter().map(move |x| (t, x))
        })
        .collect();
    let results: Vec<f64> = centers
        .par_iter()
        .map(|(tc, xc)| {
            let time = grid.time_overlaps(tc - s, tc + s);
            let axes: Vec<Vec<(usize, f64)>> =
                (0..grid.d).map(|a| grid.axis_overlaps(a, xc[a] - s, xc[a] + s)).collect();
            let mut num = 0.0;
            let mut mass = 0.0;
            let spatial: Vec<(usize, f64, f64)> = spatial_bumps(grid, &axes, xc, s);
            for &(k, _) in &time {
                let wt = grid.time_weight(k);
                let (bt, dbt) = bump((grid.time(k) - tc) / s);
                if bt == 0.0 && dbt == 0.0 {
                    continue;
                }
                for &(node, wx, bx) in &spatial {
                    let w = wt * wx;
                    let phi = bt * bx;
                    let dphi = dbt / s * bx;
                    num += w * (u.at(k, node) * dphi + gp[k * nn + node] * phi);
                    mass += w * phi;
                }
            }
            if mass > 0.0 {
                num / mass
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let (i, worst) = results
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    Ok(SubsolutionResidual {
        worst,
        worst_center_t: centers[i].0,
        worst_center_x: centers[i].1.clone(),
        tests: centers.len(),
    })
}

fn lattice(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut v = lo;
    while v <= hi + 1e-12 {
        out.push(v);
        v += step;
    }
    out
}

/// `(node, full cell weight, spatial bump value)` for nodes near `xc`.
fn spatial_bumps(grid: &GridSpec, axes: &[Vec<(usize, f64)>], xc: &[f64], s: f64) -> Vec<(usize, f64, f64)> {
    let per_axis: Vec<Vec<(usize, f64, f64)>> = (0..grid.d)
        .map(|a| {
            axes[a]
                .iter()
                .map(|&(i, _)| {
                    let mut disp = grid.coord(a, i) - xc[a];
                    if grid.boundary == Boundary::Periodic {
                        let l = grid.period(a);
                        disp -= (disp / l).round() * l;
                    }
                    (i, grid.axis_weight(a, i), bump(disp / s).0)
                })
                .filter(|e| e.2 > 0.0)
                .collect()
        })
        .collect();
    if grid.d == 1 {
        per_axis[0].clone()
    } else {
        let mut out = Vec::new();
        for &(i, wi, bi) in &per_axis[0] {
            for &(j, wj, bj) in &per_axis[1] {
                out.push((i * grid.nx + j, wi * wj, bi * bj));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> HamiltonianModel {
        HamiltonianModel::unit_power(2.0, 2.0).unwrap()
    }

    #[test]
    fn constants_are_preserved() {
        let g = GridSpec::line(21, 11, (0.0, 1.0), (-1.0, 1.0), Boundary::Clamped).unwrap();
        let p = HJProblem::homogeneous(g.clone(), quad(), vec![3.5; 21]).unwrap();
        let (u, rep) = solve_backward(&p, &SolveOptions::default()).unwrap();
        assert!(u.values().iter().all(|&v| v == 3.5));
        assert_eq!(rep.iterations, 10);
        assert_eq!(rep.max_cell_update, 0.0);
    }

    #[test]
    fn affine_terminal_on_aligned_nodes() {
        // Δt = Δx and b = 1: the exact arrival point is a node.
        let g = GridSpec::line(41, 21, (0.0, 1.0), (-1.0, 1.0), Boundary::Clamped).unwrap();
        let term: Vec<f64> = (0..41).map(|i| g.coord(0, i)).collect();
        let p = HJProblem::homogeneous(g.clone(), quad(), term).unwrap();
        let (u, _) = solve_backward(&p, &SolveOptions::default()).unwrap();
        for k in 0..g.nt {
            let tau = 1.0 - g.time(k);
            for i in 0..41 {
                let x = g.coord(0, i);
                if x - tau >= -1.0 {
                    assert!((u.at(k, i) - (x - 0.5 * tau)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn custom_model_matches_power_model() {
        let g = GridSpec::line(21, 6, (0.0, 0.5), (-1.0, 1.0), Boundary::Clamped).unwrap();
        let term: Vec<f64> = (0..21).map(|i| g.coord(0, i).abs()).collect();
        let (custom, _) = HamiltonianModel::custom(2.0, 2.0, std::sync::Arc::new(|_, _, xi: &[f64]| 0.5 * xi[0] * xi[0]))
            .unwrap()
            .certify(&crate::hamiltonian::envelope_samples(0.0, &[0.0], 100.0, 20, 1))
            .unwrap();
        let a = solve_backward(&HJProblem::homogeneous(g.clone(), quad(), term.clone()).unwrap(), &SolveOptions::default())
            .unwrap()
            .0;
        let b = solve_backward(&HJProblem::homogeneous(g, custom, term).unwrap(), &SolveOptions::default())
            .unwrap()
            .0;
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn holder_alpha_value() {
        assert!((holder_alpha(2.0, 3.0, 1) - 3.0 / 7.0).abs() < 1e-15);
        let params = BendingCurveParams::new(1.0, 0.6, 2.0, 3.0, 2.0, 1).unwrap();
        assert!((params.holder_alpha() - 3.0 / 7.0).abs() < 1e-15);
        assert!(BendingCurveParams::beta_interval(2.0, 1.4, 1).is_none());
        assert!(BendingCurveParams::new(1.0, 0.4, 2.0, 3.0, 2.0, 1).is_err());
    }

    #[test]
    fn bump_derivative_matches_difference_quotient() {
        for z in [-0.7, -0.2, 0.1, 0.55] {
            let h = 1e-6;
            let fd = (bump(z + h).0 - bump(z - h).0) / (2.0 * h);
            assert!((fd - bump(z).1).abs() < 1e-7);
        }
    }
}
