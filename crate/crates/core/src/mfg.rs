//! First-order mean field games with a local power coupling.
//!
//! - coupling `g(m) = c m^{r'-1}`, its primitive `G`, conjugate `G*` and `(G*)' = g^{-1}`
//! - discrete dual problem: minimize `ΣΣ G*(α) - Σ m0 w(0)` over fields `w` with
//!   `w(T) = u_T`, where `α = -D_t w + H_num(Dw)` uses an implicit monotone upwind Hamiltonian
//! - density recovery `m = (G*)'(α)`; at a stationary point `m` solves the
//!   discrete continuity equation exactly, so mass is conserved up to the
//!   optimizer tolerance
//! - certification: weak continuity residual, a.e. equation residual on
//!   `{m > 0}`, supersolution margin and energy-identity gap

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, precondition, Error, Result};
use crate::grid::{finite_diff, level_gradient, Boundary, GridSpec, ScalarField};
use crate::hamiltonian::{Coefficient, HamiltonianKind, HamiltonianModel};
use crate::hopf_lax::bump;

/// Closed-form maps attached to `g(m) = c m^{r'-1}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CouplingPrimitives {
    pub c: f64,
    pub r_prime: f64,
    /// Conjugate exponent of `r'`.
    pub r: f64,
}

pub fn coupling_primitives(c: f64, r_prime: f64) -> Result<CouplingPrimitives> {
    if !(c > 0.0 && c.is_finite()) {
        return domain(format!("coupling scale must be positive, got {c}"));
    }
    if !(r_prime > 1.0 && r_prime.is_finite()) {
        return domain(format!("coupling exponent must exceed 1, got {r_prime}"));
    }
    Ok(CouplingPrimitives {
        c,
        r_prime,
        r: r_prime / (r_prime - 1.0),
    })
}

impl CouplingPrimitives {
    /// `g(m) = c m^{r'-1}` for `m >= 0`.
    pub fn coupling(&self, m: f64) -> f64 {
        self.c * m.max(0.0).powf(self.r_prime - 1.0)
    }

    /// `G(m) = c m^{r'}/r'`, `+∞` for `m < 0`.
    pub fn primitive(&self, m: f64) -> f64 {
        if m < 0.0 {
            f64::INFINITY
        } else {
            self.c * m.powf(self.r_prime) / self.r_prime
        }
    }

    /// `G*(a) = c^{1-r} a₊^r / r`.
    pub fn conjugate(&self, a: f64) -> f64 {
        if a <= 0.0 {
            0.0
        } else {
            self.c.powf(1.0 - self.r) * a.powf(self.r) / self.r
        }
    }

    /// `(G*)'(a) = (a₊/c)^{1/(r'-1)}`.
    pub fn conjugate_derivative(&self, a: f64) -> f64 {
        if a <= 0.0 {
            0.0
        } else {
            (a / self.c).powf(1.0 / (self.r_prime - 1.0))
        }
    }
}

/// Mean field game on a periodic grid.
#[derive(Clone)]
pub struct MFGProblem {
    pub grid: GridSpec,
    pub coupling: CouplingPrimitives,
    /// Power model with a time-independent coefficient.
    pub model: HamiltonianModel,
    /// Initial density on the spatial nodes.
    pub m0: Vec<f64>,
    /// Terminal cost on the spatial nodes.
    pub u_terminal: Vec<f64>,
}

impl MFGProblem {
    pub fn new(
        grid: GridSpec,
        coupling: CouplingPrimitives,
        model: HamiltonianModel,
        m0: Vec<f64>,
        u_terminal: Vec<f64>,
    ) -> Result<Self> {
        grid.validate()?;
        if grid.boundary != Boundary::Periodic {
            return domain("mean field games need a periodic grid");
        }
        let nn = grid.nodes();
        if m0.len() != nn || u_terminal.len() != nn {
            return domain(format!("initial and terminal data need {nn} values"));
        }
        if m0.iter().chain(&u_terminal).any(|v| !v.is_finite()) {
            return domain("non-finite initial or terminal data");
        }
        if m0.iter().any(|&v| v < 0.0) {
            return domain("initial density must be nonnegative");
        }
        let mass: f64 = (0..nn).map(|i| grid.node_volume(i) * m0[i]).sum();
        if (mass - 1.0).abs() > 1e-12 {
            return domain(format!("initial density has mass {mass}, expected 1"));
        }
        match &model.kind {
            HamiltonianKind::Power { coefficient, .. } => {
                if coefficient.is_time_dependent() {
                    return domain("the Hamiltonian may depend on x only");
                }
                if let Coefficient::Nodal(f) = coefficient {
                    if f.grid().d != grid.d || f.grid().nx != grid.nx {
                        return domain("coefficient lives on a different spatial grid");
                    }
                }
            }
            HamiltonianKind::Custom { .. } => {
                return domain("the upwind scheme needs a power Hamiltonian");
            }
        }
        if !(coupling.r > 1.0 + grid.d as f64 / model.p) {
            return domain(format!(
                "coupling conjugate exponent {} must exceed 1 + d/p = {}",
                coupling.r,
                1.0 + grid.d as f64 / model.p
            ));
        }
        Ok(MFGProblem {
            grid,
            coupling,
            model,
            m0,
            u_terminal,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.grid.t_hi - self.grid.t_lo
    }
}

/// Optimizer settings.
#[derive(Clone, Debug, Serialize)]
pub struct MfgOptions {
    pub max_iters: usize,
    /// Bound on the nodal continuity defect, i.e. the gradient divided by the cell volume.
    pub tol: f64,
    /// L-BFGS history length.
    pub memory: usize,
    /// Iterations without objective decrease before giving up.
    pub patience: usize,
    /// Random initial perturbation of `w`; `None` starts from `u_T`.
    pub seed: Option<u64>,
    pub init_scale: f64,
}

impl Default for MfgOptions {
    fn default() -> Self {
        MfgOptions {
            max_iters: 20_000,
            tol: 1e-10,
            memory: 12,
            patience: 200,
            seed: None,
            init_scale: 0.1,
        }
    }
}

/// Converged fields and optimizer trace.
#[derive(Clone, Debug)]
pub struct MFGSolution {
    pub u: ScalarField,
    pub m: ScalarField,
    /// `-D_t u + H_num(Du)` clipped at 0; level `k+1` holds the interval `[t_k, t_{k+1}]`.
    pub alpha: ScalarField,
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    /// Final nodal continuity defect.
    pub defect: f64,
}

/// Certification residuals of a solution.
#[derive(Clone, Debug, Serialize)]
pub struct MfgReport {
    /// Worst weak continuity residual over the test lattice.
    pub continuity_residual: f64,
    /// `L¹` norm of `-∂t u + H(Du) - g(m)` on `{m > δ}`.
    pub ae_residual: f64,
    /// Minimum of `-∂t u + H(Du)` over the grid.
    pub supersol_margin: f64,
    /// `|∫∫ m(∂t u - ⟨Du, D_pH⟩) - (∫ m(T) u_T - ∫ m0 u(0))|`.
    pub energy_gap: f64,
    /// `max_k |∫ m(t_k) - 1|`.
    pub mass_defect: f64,
    pub objective_history: Vec<f64>,
}

/// Nodal upwind stencil: per axis the `(minus, plus)` neighbors.
fn neighbor_table(grid: &GridSpec) -> Vec<[[usize; 2]; 2]> {
    let nx = grid.nx;
    (0..grid.nodes())
        .map(|node| {
            let idx = grid.node_indices(node);
            let mut out = [[node; 2]; 2];
            for (a, slot) in out.iter_mut().enumerate().take(grid.d) {
                let mut lo = idx;
                let mut hi = idx;
                lo[a] = (idx[a] + nx - 1) % nx;
                hi[a] = (idx[a] + 1) % nx;
                *slot = [grid.node_from_indices(&lo[..grid.d]), grid.node_from_indices(&hi[..grid.d])];
            }
            out
        })
        .collect()
}

/// Discrete objective with cached stencil data.
struct DualObjective<'a> {
    pb: &'a MFGProblem,
    nbr: Vec<[[usize; 2]; 2]>,
    /// `1/a^{p-1}` per node.
    scale: Vec<f64>,
    vol: f64,
}

/// `H_num` at one node and its partials with respect to
/// `(center, [minus, plus] per axis)`.
struct Upwind {
    h: f64,
    d_center: f64,
    d_side: [[f64; 2]; 2],
}

impl<'a> DualObjective<'a> {
    fn new(pb: &'a MFGProblem) -> Self {
        let g = &pb.grid;
        let scale = (0..g.nodes())
            .map(|i| {
                let a = pb.model.coefficient_at(g.t_lo, &g.node_point(i)).unwrap_or(1.0);
                a.powf(1.0 - pb.model.p)
            })
            .collect();
        DualObjective {
            pb,
            nbr: neighbor_table(g),
            scale,
            vol: g.node_volume(0),
        }
    }

    fn upwind(&self, level: &[f64], j: usize) -> Upwind {
        let g = &self.pb.grid;
        let p = self.pb.model.p;
        let mut s = 0.0;
        let mut parts = [[0.0; 2]; 2];
        for a in 0..g.d {
            let dx = g.dx(a);
            let [lo, hi] = self.nbr[j][a];
            let back = ((level[j] - level[lo]) / dx).max(0.0);
            let fwd = ((level[hi] - level[j]) / dx).min(0.0);
            parts[a] = [back, fwd];
            s += back * back + fwd * fwd;
        }
        let n = s.sqrt();
        let c = self.scale[j];
        let h = c * n.powf(p) / p + self.pb.model.offset();
        let mut d_center = 0.0;
        let mut d_side = [[0.0; 2]; 2];
        if n > 0.0 {
            let w = c * n.powf(p - 2.0);
            for a in 0..g.d {
                let dx = g.dx(a);
                let [back, fwd] = parts[a];
                d_center += w * (back - fwd) / dx;
                d_side[a] = [-w * back / dx, w * fwd / dx];
            }
        }
        Upwind { h, d_center, d_side }
    }

    /// `α_k` on every node for the free levels `k = 0..nt-2`.
    fn alphas(&self, w: &[f64]) -> Vec<f64> {
        let g = &self.pb.grid;
        let nn = g.nodes();
        let dt = g.dt();
        let free = g.nt - 1;
        let mut out = vec![0.0; free * nn];
        out.par_chunks_mut(nn).enumerate().for_each(|(k, chunk)| {
            let cur = &w[k * nn..(k + 1) * nn];
            let next = self.level(w, k + 1);
            for j in 0..nn {
                chunk[j] = -(next[j] - cur[j]) / dt + self.upwind(cur, j).h;
            }
        });
        out
    }

    fn level<'b>(&'b self, w: &'b [f64], k: usize) -> &'b [f64] {
        let nn = self.pb.grid.nodes();
        if k + 1 == self.pb.grid.nt {
            &self.pb.u_terminal
        } else {
            &w[k * nn..(k + 1) * nn]
        }
    }

    /// `Σ G*(α)` summed per level in a fixed order, so results do not depend
    /// on the thread schedule.
    fn running_cost(&self, alpha: &[f64]) -> f64 {
        let per_level: Vec<f64> = alpha
            .par_chunks(self.pb.grid.nodes())
            .map(|c| c.iter().map(|&a| self.pb.coupling.conjugate(a)).sum())
            .collect();
        per_level.iter().sum()
    }

    fn value(&self, w: &[f64]) -> f64 {
        let g = &self.pb.grid;
        let nn = g.nodes();
        let alpha = self.alphas(w);
        let running = self.running_cost(&alpha);
        let initial: f64 = (0..nn).map(|i| self.pb.m0[i] * w[i]).sum();
        self.vol * (g.dt() * running - initial)
    }

    /// Objective and gradient divided by the cell volume (the nodal continuity defect).
    fn value_and_defect(&self, w: &[f64]) -> (f64, Vec<f64>) {
        let g = &self.pb.grid;
        let nn = g.nodes();
        let dt = g.dt();
        let alpha = self.alphas(w);
        let m: Vec<f64> = alpha.par_iter().map(|&a| self.pb.coupling.conjugate_derivative(a)).collect();
        let running = self.running_cost(&alpha);
        let initial: f64 = (0..nn).map(|i| self.pb.m0[i] * w[i]).sum();
        let mut defect = vec![0.0; w.len()];
        defect.par_chunks_mut(nn).enumerate().for_each(|(k, chunk)| {
            let cur = &w[k * nn..(k + 1) * nn];
            let mk = &m[k * nn..(k + 1) * nn];
            let prev = if k == 0 { &self.pb.m0[..] } else { &m[(k - 1) * nn..k * nn] };
            for j in 0..nn {
                chunk[j] += mk[j] - prev[j];
            }
            for j in 0..nn {
                if mk[j] == 0.0 {
                    continue;
                }
                let up = self.upwind(cur, j);
                chunk[j] += dt * mk[j] * up.d_center;
                for a in 0..g.d {
                    let [lo, hi] = self.nbr[j][a];
                    chunk[lo] += dt * mk[j] * up.d_side[a][0];
                    chunk[hi] += dt * mk[j] * up.d_side[a][1];
                }
            }
        });
        (self.vol * (dt * running - initial), defect)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimizes the discrete dual objective with L-BFGS and a backtracking
/// line search, then recovers `u`, `α` and `m`.
pub fn solve_mfg_variational(problem: &MFGProblem, opts: &MfgOptions) -> Result<MFGSolution> {
    if opts.memory == 0 || !(opts.tol > 0.0) {
        return domain("memory must be positive and tolerance positive");
    }
    let g = &problem.grid;
    let nn = g.nodes();
    let free = g.nt - 1;
    let obj = DualObjective::new(problem);
    let vol = obj.vol;

    let mut w = Vec::with_capacity(free * nn);
    for _ in 0..free {
        w.extend_from_slice(&problem.u_terminal);
    }
    if let Some(seed) = opts.seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut w {
            *v += opts.init_scale * rng.gen_range(-1.0..1.0);
        }
    }

    // The objective gradient is `vol · defect`; L-BFGS runs on the defect with
    // the inner product scaled by `vol`, which only rescales the history.
    let (mut f, mut d) = obj.value_and_defect(&w);
    let mut history = vec![f];
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut stall = 0usize;
    let mut best = f;
    let mut best_defect = max_abs(&d);
    let mut iterations = 0;
    let slack = 1e-14;

    while max_abs(&d) > opts.tol {
        if iterations >= opts.max_iters {
            return Err(Error::NonConvergence {
                message: format!("continuity defect {} after {iterations} iterations", max_abs(&d)),
                history,
            });
        }
        iterations += 1;

        // Two-loop recursion.
        let mut dir: Vec<f64> = d.clone();
        let mut coeffs = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &dir);
            dir.iter_mut().zip(y).for_each(|(v, yv)| *v -= a * yv);
            coeffs.push((rho, a));
        }
        let h0 = match (s_hist.last(), y_hist.last()) {
            (Some(s), Some(y)) => dot(s, y) / dot(y, y),
            _ => 0.5 * g.dt() / max_abs(&d).max(1.0),
        };
        dir.iter_mut().for_each(|v| *v *= h0);
        for ((s, y), (rho, a)) in s_hist.iter().zip(&y_hist).zip(coeffs.into_iter().rev()) {
            let b = rho * dot(y, &dir);
            dir.iter_mut().zip(s).for_each(|(v, sv)| *v += (a - b) * sv);
        }
        dir.iter_mut().for_each(|v| *v = -*v);
        let mut slope = vol * dot(&d, &dir);
        if !(slope < 0.0) {
            s_hist.clear();
            y_hist.clear();
            dir = d.iter().map(|v| -h0.abs().max(1e-12) * v).collect();
            slope = vol * dot(&d, &dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = w.iter().zip(&dir).map(|(x, p)| x + step * p).collect();
            let ft = obj.value(&trial);
            if ft <= f + 1e-4 * step * slope + slack * f.abs().max(1.0) {
                accepted = Some(trial);
                break;
            }
            step *= 0.5;
        }
        let Some(trial) = accepted else {
            return Err(Error::NonConvergence {
                message: format!("line search failed at defect {}", max_abs(&d)),
                history,
            });
        };
        let (ft, dt_new) = obj.value_and_defect(&trial);
        let s: Vec<f64> = trial.iter().zip(&w).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = dt_new.iter().zip(&d).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-300 {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        w = trial;
        f = ft;
        d = dt_new;
        history.push(f);
        // Near the optimum the objective stops resolving progress in double
        // precision, so a smaller defect also counts.
        let defect_now = max_abs(&d);
        if f < best - slack * best.abs().max(1.0) || defect_now < 0.99 * best_defect {
            best = best.min(f);
            best_defect = best_defect.min(defect_now);
            stall = 0;
        } else {
            stall += 1;
            if stall > opts.patience {
                return Err(Error::NonConvergence {
                    message: format!("objective stalled at defect {}", max_abs(&d)),
                    history,
                });
            }
        }
    }

    let defect = max_abs(&d);
    let mut values = w;
    values.extend_from_slice(&problem.u_terminal);
    let u = ScalarField::new(g.clone(), values)?;
    let (alpha, m) = recover_density(&u, &problem.model, &problem.coupling)?;
    let mut mv = m.into_values();
    mv[..nn].copy_from_slice(&problem.m0);
    let m = ScalarField::new(g.clone(), mv)?;
    Ok(MFGSolution {
        u,
        m,
        alpha,
        objective_history: history,
        iterations,
        defect,
    })
}

/// `α = -D_t w + H_num(Dw)` with the solver's upwind stencil and `m = (G*)'(α)`.
///
/// Level `k+1` holds the interval `[t_k, t_{k+1}]`; level 0 repeats level 1.
/// `α` is clipped below at 0.
pub fn recover_density(
    w: &ScalarField,
    model: &HamiltonianModel,
    primitives: &CouplingPrimitives,
) -> Result<(ScalarField, ScalarField)> {
    let g = w.grid().clone();
    let nn = g.nodes();
    let m0 = vec![1.0 / (nn as f64 * g.node_volume(0)); nn];
    let pb = MFGProblem::new(g.clone(), *primitives, model.clone(), m0, w.level(g.nt - 1).to_vec())?;
    let obj = DualObjective::new(&pb);
    let raw = obj.alphas(&w.values()[..(g.nt - 1) * nn]);
    let mut alpha = Vec::with_capacity(g.len());
    alpha.extend(raw[..nn].iter().map(|a| a.max(0.0)));
    alpha.extend(raw.iter().map(|a| a.max(0.0)));
    let alpha = ScalarField::new(g, alpha)?;
    let m = density_from_alpha(&alpha, primitives)?;
    Ok((alpha, m))
}

/// Pointwise `(G*)'(α)`; zero exactly where `α <= 0`.
pub fn density_from_alpha(alpha: &ScalarField, primitives: &CouplingPrimitives) -> Result<ScalarField> {
    alpha.map(|a| primitives.conjugate_derivative(a))
}

/// Periodic signed offset `x - c` folded into `[-L/2, L/2)`.
fn fold(grid: &GridSpec, axis: usize, x: f64, c: f64) -> f64 {
    let l = grid.period(axis);
    let mut z = (x - c) % l;
    if z >= 0.5 * l {
        z -= l;
    } else if z < -0.5 * l {
        z += l;
    }
    z
}

/// Residual suite for a computed solution; `mollifier_scale` is the radius
/// of the tensor-bump test functions in time and space.
pub fn certify_solution(sol: &MFGSolution, problem: &MFGProblem, mollifier_scale: f64) -> Result<MfgReport> {
    let g = &problem.grid;
    if sol.u.grid() != g || sol.m.grid() != g {
        return domain("solution lives on a different grid");
    }
    let rho = mollifier_scale;
    if !(rho >= 2.0 * g.dt() && rho >= 2.0 * g.dx_max()) {
        return precondition("mollifier scale must cover at least two grid cells");
    }
    let nn = g.nodes();
    let nt = g.nt;
    let dt = g.dt();
    let vol = g.node_volume(0);
    let d = g.d;
    let model = &problem.model;
    let t0 = g.t_lo;

    // Drift D_pH(Du) with centered differences.
    let drift: Vec<Vec<f64>> = (0..nt)
        .into_par_iter()
        .map(|k| {
            let grad = level_gradient(g, sol.u.level(k));
            (0..nn)
                .flat_map(|i| model.momentum_gradient(t0, &g.node_point(i), &grad[i * d..(i + 1) * d]).unwrap())
                .collect()
        })
        .collect();

    // (a) weak continuity residual; density on (t_k, t_{k+1}] is m(t_{k+1}).
    let horizon = problem.horizon();
    let spacing = 0.5 * rho;
    let n_time = (horizon / spacing).round() as usize;
    let n_space = (g.period(0) / spacing).round().max(1.0) as usize;
    let mut centers = Vec::new();
    for kt in 0..=n_time {
        let ct = t0 + horizon * kt as f64 / n_time as f64;
        for a in 0..n_space {
            for b in 0..(if d == 2 { n_space } else { 1 }) {
                let mut cx = vec![g.x_lo[0] + g.period(0) * a as f64 / n_space as f64];
                if d == 2 {
                    cx.push(g.x_lo[1] + g.period(1) * b as f64 / n_space as f64);
                }
                centers.push((ct, cx));
            }
        }
    }
    let continuity_residual = centers
        .par_iter()
        .map(|(ct, cx)| {
            let phi = |k: usize, i: usize| -> (f64, [f64; 2]) {
                let (bt, _) = bump((g.time(k) - ct) / rho);
                if bt == 0.0 {
                    return (0.0, [0.0; 2]);
                }
                let x = g.node_point(i);
                let mut val = bt;
                let mut parts = [(0.0, 0.0); 2];
                for a in 0..d {
                    let (b, db) = bump(fold(g, a, x[a], cx[a]) / rho);
                    parts[a] = (b, db / rho);
                    val *= b;
                }
                let mut grad = [0.0; 2];
                for a in 0..d {
                    let mut v = bt * parts[a].1;
                    for (o, part) in parts.iter().enumerate().take(d) {
                        if o != a {
                            v *= part.0;
                        }
                    }
                    grad[a] = v;
                }
                (val, grad)
            };
            let mut total = 0.0;
            for k in 0..nt - 1 {
                let mk = sol.m.level(k + 1);
                for i in 0..nn {
                    if mk[i] == 0.0 {
                        continue;
                    }
                    let (p1, grad) = phi(k + 1, i);
                    let (p0, _) = phi(k, i);
                    let b = &drift[k + 1][i * d..(i + 1) * d];
                    let flux: f64 = (0..d).map(|a| b[a] * grad[a]).sum();
                    total += vol * mk[i] * ((p1 - p0) - dt * flux);
                }
            }
            for i in 0..nn {
                total += vol * (problem.m0[i] * phi(0, i).0 - sol.m.at(nt - 1, i) * phi(nt - 1, i).0);
            }
            total.abs()
        })
        .reduce(|| 0.0, f64::max);

    let (dtu, du) = finite_diff(&sol.u);
    let du = du.values();
    let mmax = sol.m.max();
    let delta = 1e-6 * mmax;
    let mut ae = 0.0;
    let mut margin = f64::INFINITY;
    let mut lhs = 0.0;
    for k in 0..nt {
        let wt = g.time_weight(k);
        for i in 0..nn {
            let x = g.node_point(i);
            let xi = &du[(k * nn + i) * d..(k * nn + i + 1) * d];
            let h = model.eval_hamiltonian(t0, &x, xi)?;
            let a = -dtu.at(k, i) + h;
            margin = margin.min(a);
            let m = sol.m.at(k, i);
            if m > delta {
                ae += wt * vol * (a - problem.coupling.coupling(m)).abs();
            }
            let b = &drift[k][i * d..(i + 1) * d];
            let pair: f64 = (0..d).map(|c| xi[c] * b[c]).sum();
            lhs += wt * vol * m * (dtu.at(k, i) - pair);
        }
    }
    let rhs: f64 = (0..nn)
        .map(|i| vol * (sol.m.at(nt - 1, i) * problem.u_terminal[i] - problem.m0[i] * sol.u.at(0, i)))
        .sum();
    let mass_defect = (0..nt)
        .map(|k| (sol.m.level(k).iter().sum::<f64>() * vol - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(MfgReport {
        continuity_residual,
        ae_residual: ae,
        supersol_margin: margin,
        energy_gap: (lhs - rhs).abs(),
        mass_defect,
        objective_history: sol.objective_history.clone(),
    })
}

/// `∫∫ |m1 - m2|` with the trapezoid rule in time.
pub fn density_l1_distance(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    let g = a.grid();
    if b.grid() != g {
        return domain("densities live on different grids");
    }
    let nn = g.nodes();
    Ok((0..g.nt)
        .map(|k| {
            let la = a.level(k);
            let lb = b.level(k);
            g.time_weight(k) * (0..nn).map(|i| g.node_volume(i) * (la[i] - lb[i]).abs()).sum::<f64>()
        })
        .sum())
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn fenchel_equality_at_the_optimizer(a in 1e-3f64..10.0, c in 0.1f64..5.0, rp in 1.2f64..4.0) {
            let g = coupling_primitives(c, rp).unwrap();
            let m = g.conjugate_derivative(a);
            let lhs = g.primitive(m) + g.conjugate(a);
            prop_assert!((lhs - a * m).abs() <= 1e-10 * (1.0 + a * m));
            prop_assert!((g.coupling(m) - a).abs() <= 1e-10 * (1.0 + a));
        }

        #[test]
        fn conjugate_is_convex_and_nondecreasing(a in -5.0f64..5.0, b in -5.0f64..5.0, s in 0.0f64..1.0) {
            let g = coupling_primitives(1.5, 2.5).unwrap();
            let mid = s * a + (1.0 - s) * b;
            prop_assert!(g.conjugate(mid) <= s * g.conjugate(a) + (1.0 - s) * g.conjugate(b) + 1e-12);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(g.conjugate(lo) <= g.conjugate(hi));
            prop_assert!(g.conjugate(lo.min(0.0)) == 0.0);
        }
    }
}
