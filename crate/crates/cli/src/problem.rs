//! Builds grids, Hamiltonians and Hamilton-Jacobi problems from config keys.

use std::fs::File;

use hjlab::grid::read_level_csv;
use hjlab::hopf_lax::{HJProblem, SolveOptions};
use hjlab::{Boundary, Coefficient, GridSpec, HamiltonianModel, ScalarField};
use serde::Serialize;

use crate::config::{config_error, Config, ConfigError};
use crate::RunError;

pub const GRID_KEYS: &[&str] = &[
    "grid.d",
    "grid.nx",
    "grid.nt",
    "grid.t0",
    "grid.t1",
    "grid.x0",
    "grid.x1",
    "grid.boundary",
];

pub const HAMILTONIAN_KEYS: &[&str] = &["hamiltonian.p", "hamiltonian.bar_c", "hamiltonian.a", "hamiltonian.offset"];

pub const PROBLEM_KEYS: &[&str] = &[
    "solver.interpolate",
    "solver.max_doublings",
    "f_file",
    "f.value",
    "terminal_file",
    "terminal.kind",
    "terminal.slope",
    "terminal.value",
];

/// Grid, Hamiltonian and data keys shared by `solve`, `char`, `diagnose` and `scan`.
pub fn problem_keys() -> Vec<&'static str> {
    [GRID_KEYS, HAMILTONIAN_KEYS, PROBLEM_KEYS].concat()
}

/// Resolved Hamiltonian parameters, echoed into reports.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct HamiltonianParams {
    pub p: f64,
    pub a: f64,
    pub offset: f64,
    pub bar_c: f64,
}

impl HamiltonianParams {
    pub fn from_config(cfg: &Config) -> Result<Self, ConfigError> {
        let p = cfg.require_f64("hamiltonian.p")?;
        if !(p > 1.0) {
            return Err(cfg.invalid("hamiltonian.p", "hamiltonian.p must exceed 1"));
        }
        let a = cfg.f64_or("hamiltonian.a", 1.0)?;
        if !(a > 0.0) {
            return Err(cfg.invalid("hamiltonian.a", "hamiltonian.a must be positive"));
        }
        let offset = cfg.f64_or("hamiltonian.offset", 0.0)?;
        let scale = a.powf(p - 1.0);
        let default_bar_c = (p * scale).max(1.0 / (p * scale)).max(offset.abs()).max(1.0);
        let bar_c = cfg.f64_or("hamiltonian.bar_c", default_bar_c)?;
        Ok(HamiltonianParams { p, a, offset, bar_c })
    }

    pub fn model(&self) -> Result<HamiltonianModel, RunError> {
        Ok(HamiltonianModel::power(
            self.p,
            self.bar_c,
            Coefficient::Constant(self.a),
            self.offset,
        )?)
    }
}

/// Reads the grid keys; `resolution` replaces `nx` and `nt` when given.
pub fn grid_from_config(cfg: &Config, resolution: Option<usize>) -> Result<GridSpec, RunError> {
    let d = cfg.usize_or("grid.d", 1)?;
    if d != 1 && d != 2 {
        return Err(cfg.invalid("grid.d", "grid.d must be 1 or 2").into());
    }
    let (nx, nt) = match resolution {
        Some(n) => (n, n),
        None => (cfg.require_usize("grid.nx")?, cfg.require_usize("grid.nt")?),
    };
    let t0 = cfg.f64_or("grid.t0", 0.0)?;
    let t1 = cfg.f64_or("grid.t1", 1.0)?;
    let x0 = cfg.f64_or("grid.x0", 0.0)?;
    let x1 = cfg.f64_or("grid.x1", 1.0)?;
    let boundary = match cfg.str("grid.boundary").unwrap_or("clamped") {
        "clamped" => Boundary::Clamped,
        "periodic" => Boundary::Periodic,
        other => {
            return Err(cfg
                .invalid("grid.boundary", format!("grid.boundary must be clamped or periodic, found `{other}`"))
                .into())
        }
    };
    GridSpec::new(d, nx, nt, (t0, t1), vec![x0; d], vec![x1; d], boundary).map_err(|e| config_error(e.to_string()).into())
}

pub fn solve_options(cfg: &Config) -> Result<SolveOptions, ConfigError> {
    let defaults = SolveOptions::default();
    let max_doublings = cfg.usize_or("solver.max_doublings", defaults.max_doublings as usize)?;
    Ok(SolveOptions {
        interpolate: cfg.bool_or("solver.interpolate", defaults.interpolate)?,
        max_doublings: u32::try_from(max_doublings).map_err(|_| cfg.invalid("solver.max_doublings", "too large"))?,
    })
}

fn open(cfg: &Config, key: &str) -> Result<File, RunError> {
    let path = cfg.path(key).expect("key checked by caller");
    File::open(&path).map_err(|e| cfg.invalid(key, format!("cannot open {}: {e}", path.display())).into())
}

/// Source term: `f_file` (field CSV), `f.value` (constant) or zero.
pub fn source_from_config(cfg: &Config, grid: &GridSpec) -> Result<ScalarField, RunError> {
    if cfg.contains("f_file") {
        if cfg.contains("f.value") {
            return Err(cfg.invalid("f.value", "give either f_file or f.value, not both").into());
        }
        return Ok(ScalarField::read_csv(open(cfg, "f_file")?, grid)?);
    }
    Ok(ScalarField::constant(grid.clone(), cfg.f64_or("f.value", 0.0)?)?)
}

/// Terminal data: `terminal_file` (one level in field CSV layout) or a
/// `terminal.kind` of `constant`, `linear` (`value + slope*x1`) or `abs`
/// (`value + slope*|x|`).
pub fn terminal_from_config(cfg: &Config, grid: &GridSpec) -> Result<Vec<f64>, RunError> {
    let kind = cfg.str("terminal.kind");
    if cfg.contains("terminal_file") {
        if kind.is_some_and(|k| k != "file") {
            return Err(cfg.invalid("terminal.kind", "terminal.kind conflicts with terminal_file").into());
        }
        return Ok(read_level_csv(open(cfg, "terminal_file")?, grid)?);
    }
    let kind = kind.ok_or_else(|| config_error("give terminal_file or terminal.kind"))?;
    let slope = cfg.f64_or("terminal.slope", 1.0)?;
    let value = cfg.f64_or("terminal.value", 0.0)?;
    if !matches!(kind, "constant" | "linear" | "abs") {
        return Err(cfg
            .invalid("terminal.kind", format!("terminal.kind must be constant, linear or abs, found `{kind}`"))
            .into());
    }
    Ok((0..grid.nodes())
        .map(|n| {
            let x = grid.node_point(n);
            match kind {
                "constant" => value,
                "linear" => value + slope * x[0],
                _ => value + slope * x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            }
        })
        .collect())
}

/// Full problem; `resolution` sets `nx = nt` (file data is then rejected).
pub fn problem_from_config(cfg: &Config, resolution: Option<usize>) -> Result<HJProblem, RunError> {
    if resolution.is_some() {
        for key in ["f_file", "terminal_file"] {
            if cfg.contains(key) {
                return Err(cfg
                    .invalid(key, format!("{key} cannot be resampled across resolutions; use the closed-form keys"))
                    .into());
            }
        }
    }
    let grid = grid_from_config(cfg, resolution)?;
    let model = HamiltonianParams::from_config(cfg)?.model()?;
    let f = source_from_config(cfg, &grid)?;
    let terminal = terminal_from_config(cfg, &grid)?;
    Ok(HJProblem::new(grid, model, f, terminal)?)
}
