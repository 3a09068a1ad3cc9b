//! Space-time grids, nodal fields, finite differences and window quadrature.
//!
//! - [`GridSpec`] is a uniform tensor grid: `nt` time levels and `nx` nodes per
//!   spatial axis, in one or two space dimensions.
//! - [`ScalarField`] and [`VectorField`] store nodal samples, time-major.
//! - [`CubeWindow`] is an axis-aligned space-time box. Integrals use the
//!   midpoint rule on the cells owned by each node, weighted by the fraction
//!   of the cell inside the window, so averages are exact for cell-wise
//!   constant data and continuous in the window size.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Treatment of the spatial faces of the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Opposite faces are identified; the box is half-open.
    Periodic,
    /// Lookups outside the box are projected onto it.
    Clamped,
}

/// Uniform space-time grid.
///
/// Time levels are `t_lo + k*dt` with `dt = (t_hi - t_lo)/(nt - 1)`. Spatial
/// nodes are `x_lo + i*dx`; `dx` is `L/nx` for periodic axes and `L/(nx-1)`
/// for clamped ones, so clamped grids include both end points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub d: usize,
    pub nx: usize,
    pub nt: usize,
    pub t_lo: f64,
    pub t_hi: f64,
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub boundary: Boundary,
}

impl GridSpec {
    pub fn new(
        d: usize,
        nx: usize,
        nt: usize,
        t: (f64, f64),
        x_lo: Vec<f64>,
        x_hi: Vec<f64>,
        boundary: Boundary,
    ) -> Result<Self> {
        let g = GridSpec {
            d,
            nx,
            nt,
            t_lo: t.0,
            t_hi: t.1,
            x_lo,
            x_hi,
            boundary,
        };
        g.validate()?;
        Ok(g)
    }

    /// One-dimensional grid on `[x.0, x.1]`.
    pub fn line(nx: usize, nt: usize, t: (f64, f64), x: (f64, f64), boundary: Boundary) -> Result<Self> {
        Self::new(1, nx, nt, t, vec![x.0], vec![x.1], boundary)
    }

    /// Two-dimensional grid on the square `[x.0, x.1]^2`.
    pub fn square(nx: usize, nt: usize, t: (f64, f64), x: (f64, f64), boundary: Boundary) -> Result<Self> {
        Self::new(2, nx, nt, t, vec![x.0; 2], vec![x.1; 2], boundary)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d != 1 && self.d != 2 {
            return domain(format!("spatial dimension must be 1 or 2, got {}", self.d));
        }
        if self.nx < 2 || self.nt < 2 {
            return domain(format!("need nx >= 2 and nt >= 2, got nx={} nt={}", self.nx, self.nt));
        }
        if !(self.t_lo.is_finite() && self.t_hi.is_finite() && self.t_lo < self.t_hi) {
            return domain(format!("invalid time extent [{}, {}]", self.t_lo, self.t_hi));
        }
        if self.x_lo.len() != self.d || self.x_hi.len() != self.d {
            return domain("spatial extent must have one entry per axis");
        }
        for a in 0..self.d {
            if !(self.x_lo[a].is_finite() && self.x_hi[a].is_finite() && self.x_lo[a] < self.x_hi[a]) {
                return domain(format!("invalid extent on axis {a}"));
            }
        }
        Ok(())
    }

    /// Number of spatial nodes, `nx^d`.
    pub fn nodes(&self) -> usize {
        self.nx.pow(self.d as u32)
    }

    /// Number of space-time samples.
    pub fn len(&self) -> usize {
        self.nt * self.nodes()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dt(&self) -> f64 {
        (self.t_hi - self.t_lo) / (self.nt - 1) as f64
    }

    pub fn dx(&self, axis: usize) -> f64 {
        let len = self.x_hi[axis] - self.x_lo[axis];
        match self.boundary {
            Boundary::Periodic => len / self.nx as f64,
            Boundary::Clamped => len / (self.nx - 1) as f64,
        }
    }

    /// Largest spacing over the spatial axes.
    pub fn dx_max(&self) -> f64 {
        (0..self.d).map(|a| self.dx(a)).fold(0.0, f64::max)
    }

    pub fn period(&self, axis: usize) -> f64 {
        self.x_hi[axis] - self.x_lo[axis]
    }

    pub fn time(&self, k: usize) -> f64 {
        if k + 1 == self.nt {
            self.t_hi
        } else {
            self.t_lo + k as f64 * self.dt()
        }
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.x_lo[axis] + i as f64 * self.dx(axis)
    }

    /// Per-axis indices of a flat node index; the last axis varies fastest.
    pub fn node_indices(&self, node: usize) -> [usize; 2] {
        if self.d == 1 {
            [node, 0]
        } else {
            [node / self.nx, node % self.nx]
        }
    }

    pub fn node_from_indices(&self, idx: &[usize]) -> usize {
        if self.d == 1 {
            idx[0]
        } else {
            idx[0] * self.nx + idx[1]
        }
    }

    pub fn node_point(&self, node: usize) -> Vec<f64> {
        let idx = self.node_indices(node);
        (0..self.d).map(|a| self.coord(a, idx[a])).collect()
    }

    /// Euclidean spatial diameter of the box.
    pub fn diameter(&self) -> f64 {
        (0..self.d).map(|a| self.period(a).powi(2)).sum::<f64>().sqrt()
    }

    /// Wraps a coordinate into the periodic cell; identity for clamped grids.
    pub fn wrap(&self, axis: usize, x: f64) -> f64 {
        match self.boundary {
            Boundary::Periodic => {
                let l = self.period(axis);
                self.x_lo[axis] + (x - self.x_lo[axis]).rem_euclid(l)
            }
            Boundary::Clamped => x,
        }
    }

    /// Whether `(t, x)` lies in the closed space-time box (always true in
    /// space for periodic grids).
    pub fn contains(&self, t: f64, x: &[f64]) -> bool {
        let tol = 1e-12 * (1.0 + self.t_hi.abs().max(self.t_lo.abs()));
        if x.len() != self.d || !(t >= self.t_lo - tol && t <= self.t_hi + tol) {
            return false;
        }
        match self.boundary {
            Boundary::Periodic => x.iter().all(|v| v.is_finite()),
            Boundary::Clamped => (0..self.d).all(|a| {
                let s = 1e-12 * (1.0 + self.x_hi[a].abs().max(self.x_lo[a].abs()));
                x[a] >= self.x_lo[a] - s && x[a] <= self.x_hi[a] + s
            }),
        }
    }

    /// Index of the time level closest to `t`, if `t` lies in the time range.
    pub fn nearest_level(&self, t: f64) -> Option<usize> {
        if !self.contains_time(t) {
            return None;
        }
        let k = ((t - self.t_lo) / self.dt()).round();
        Some((k.max(0.0) as usize).min(self.nt - 1))
    }

    pub fn contains_time(&self, t: f64) -> bool {
        let tol = 1e-12 * (1.0 + self.t_hi.abs().max(self.t_lo.abs()));
        t >= self.t_lo - tol && t <= self.t_hi + tol
    }

    /// Node closest to `x`.
    pub fn nearest_node(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.d || x.iter().any(|v| !v.is_finite()) {
            return domain("point has wrong dimension or is not finite");
        }
        let mut idx = [0usize; 2];
        for a in 0..self.d {
            let dx = self.dx(a);
            let xi = self.wrap(a, x[a]);
            let r = ((xi - self.x_lo[a]) / dx).round();
            idx[a] = match self.boundary {
                Boundary::Periodic => (r as i64).rem_euclid(self.nx as i64) as usize,
                Boundary::Clamped => (r.max(0.0) as usize).min(self.nx - 1),
            };
        }
        Ok(self.node_from_indices(&idx[..self.d]))
    }

    /// Length of the time cell of level `k`.
    pub fn time_weight(&self, k: usize) -> f64 {
        let dt = self.dt();
        if k == 0 || k + 1 == self.nt {
            0.5 * dt
        } else {
            dt
        }
    }

    /// Spatial cell length owned by node index `i` along `axis`.
    pub fn axis_weight(&self, axis: usize, i: usize) -> f64 {
        let dx = self.dx(axis);
        match self.boundary {
            Boundary::Periodic => dx,
            Boundary::Clamped => {
                if i == 0 || i + 1 == self.nx {
                    0.5 * dx
                } else {
                    dx
                }
            }
        }
    }

    /// Spatial cell volume owned by a node.
    pub fn node_volume(&self, node: usize) -> f64 {
        let idx = self.node_indices(node);
        (0..self.d).map(|a| self.axis_weight(a, idx[a])).product()
    }

    /// Overlap lengths of the time cells with `[lo, hi]`.
    pub fn time_overlaps(&self, lo: f64, hi: f64) -> Vec<(usize, f64)> {
        let dt = self.dt();
        let lo = lo.max(self.t_lo);
        let hi = hi.min(self.t_hi);
        let mut out = Vec::new();
        if !(hi > lo) {
            return out;
        }
        let k0 = (((lo - self.t_lo) / dt - 0.5).floor().max(0.0)) as usize;
        let k1 = ((((hi - self.t_lo) / dt + 0.5).ceil()) as usize).min(self.nt - 1);
        for k in k0..=k1 {
            let c = self.time(k);
            let a = (c - 0.5 * dt).max(self.t_lo).max(lo);
            let b = (c + 0.5 * dt).min(self.t_hi).min(hi);
            if b > a {
                out.push((k, b - a));
            }
        }
        out
    }

    /// Overlap lengths of the spatial cells of `axis` with `[lo, hi]`;
    /// periodic axes accumulate all periodic images.
    pub fn axis_overlaps(&self, axis: usize, lo: f64, hi: f64) -> Vec<(usize, f64)> {
        let dx = self.dx(axis);
        let mut out = Vec::new();
        match self.boundary {
            Boundary::Clamped => {
                let x0 = self.x_lo[axis];
                let lo = lo.max(x0);
                let hi = hi.min(self.x_hi[axis]);
                if !(hi > lo) {
                    return out;
                }
                let i0 = (((lo - x0) / dx - 0.5).floor().max(0.0)) as usize;
                let i1 = ((((hi - x0) / dx + 0.5).ceil()) as usize).min(self.nx - 1);
                for i in i0..=i1 {
                    let c = self.coord(axis, i);
                    let a = (c - 0.5 * dx).max(x0).max(lo);
                    let b = (c + 0.5 * dx).min(self.x_hi[axis]).min(hi);
                    if b > a {
                        out.push((i, b - a));
                    }
                }
            }
            Boundary::Periodic => {
                let l = self.period(axis);
                if !(hi > lo) {
                    return out;
                }
                let hi = hi.min(lo + l);
                let origin = self.x_lo[axis] - 0.5 * dx;
                let shift = ((lo - origin) / l).floor() * l;
                let lo_s = lo - shift;
                let hi_s = hi - shift;
                let mut acc = vec![0.0; self.nx];
                let j0 = ((lo_s - origin) / dx).floor().max(0.0) as usize;
                let j1 = ((hi_s - origin) / dx).ceil() as usize;
                for j in j0..=j1.min(2 * self.nx + 1) {
                    let a = (origin + j as f64 * dx).max(lo_s);
                    let b = (origin + (j + 1) as f64 * dx).min(hi_s);
                    if b > a {
                        acc[j % self.nx] += b - a;
                    }
                }
                for (i, w) in acc.into_iter().enumerate() {
                    if w > 0.0 {
                        out.push((i, w));
                    }
                }
            }
        }
        out
    }

    /// Quadrature weights of a window intersected with the grid domain.
    pub fn window_quadrature(&self, w: &CubeWindow) -> Quadrature {
        let time = self.time_overlaps(w.center_t - w.half_time, w.center_t + w.half_time);
        let axes = (0..self.d)
            .map(|a| self.axis_overlaps(a, w.center_x[a] - w.half_space, w.center_x[a] + w.half_space))
            .collect();
        Quadrature { time, axes }
    }

    /// Spatial quadrature weights of the cube of half-width `half` about `x0`.
    pub fn spatial_quadrature(&self, x0: &[f64], half: f64) -> Vec<(usize, f64)> {
        let axes: Vec<Vec<(usize, f64)>> = (0..self.d)
            .map(|a| self.axis_overlaps(a, x0[a] - half, x0[a] + half))
            .collect();
        spatial_product(self, &axes)
    }
}

fn spatial_product(grid: &GridSpec, axes: &[Vec<(usize, f64)>]) -> Vec<(usize, f64)> {
    if grid.d == 1 {
        axes[0].clone()
    } else {
        let mut out = Vec::with_capacity(axes[0].len() * axes[1].len());
        for &(i, wi) in &axes[0] {
            for &(j, wj) in &axes[1] {
                out.push((i * grid.nx + j, wi * wj));
            }
        }
        out
    }
}

/// Axis-aligned space-time box `(t0 ± half_time) × Π (x0_i ± half_space)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeWindow {
    pub center_t: f64,
    pub center_x: Vec<f64>,
    pub half_time: f64,
    pub half_space: f64,
}

impl CubeWindow {
    pub fn new(center_t: f64, center_x: Vec<f64>, half_time: f64, half_space: f64) -> Result<Self> {
        if !(half_time > 0.0 && half_space > 0.0) || !half_time.is_finite() || !half_space.is_finite() {
            return domain("window half-widths must be positive and finite");
        }
        if !center_t.is_finite() || center_x.iter().any(|v| !v.is_finite()) {
            return domain("window center must be finite");
        }
        Ok(CubeWindow {
            center_t,
            center_x,
            half_time,
            half_space,
        })
    }

    /// The box `(t_lo, t_hi) × (x_lo, x_hi)^d`.
    pub fn from_bounds(t: (f64, f64), x: (f64, f64), d: usize) -> Result<Self> {
        Self::new(
            0.5 * (t.0 + t.1),
            vec![0.5 * (x.0 + x.1); d],
            0.5 * (t.1 - t.0),
            0.5 * (x.1 - x.0),
        )
    }

    /// Same center, half-widths scaled by `factor`.
    pub fn dilate(&self, factor: f64) -> Self {
        CubeWindow {
            center_t: self.center_t,
            center_x: self.center_x.clone(),
            half_time: self.half_time * factor,
            half_space: self.half_space * factor,
        }
    }

    /// Whether the closed window lies inside the grid domain (periodic axes
    /// only constrain time).
    pub fn inside(&self, grid: &GridSpec) -> bool {
        let tol = 1e-12;
        if self.center_t - self.half_time < grid.t_lo - tol || self.center_t + self.half_time > grid.t_hi + tol {
            return false;
        }
        match grid.boundary {
            Boundary::Periodic => true,
            Boundary::Clamped => (0..grid.d).all(|a| {
                self.center_x[a] - self.half_space >= grid.x_lo[a] - tol
                    && self.center_x[a] + self.half_space <= grid.x_hi[a] + tol
            }),
        }
    }
}

/// Tensor-product quadrature weights of a window.
#[derive(Clone, Debug)]
pub struct Quadrature {
    pub time: Vec<(usize, f64)>,
    pub axes: Vec<Vec<(usize, f64)>>,
}

impl Quadrature {
    pub fn measure(&self) -> f64 {
        let t: f64 = self.time.iter().map(|p| p.1).sum();
        t * self.axes.iter().map(|ax| ax.iter().map(|p| p.1).sum::<f64>()).product::<f64>()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty() || self.axes.iter().any(|a| a.is_empty())
    }

    /// Flattened spatial weights `(node, weight)`.
    pub fn spatial(&self, grid: &GridSpec) -> Vec<(usize, f64)> {
        spatial_product(grid, &self.axes)
    }

    /// `Σ w · g(k, node)` over the window.
    pub fn integrate(&self, grid: &GridSpec, mut g: impl FnMut(usize, usize) -> f64) -> f64 {
        let spatial = self.spatial(grid);
        let mut total = 0.0;
        for &(k, wt) in &self.time {
            let mut s = 0.0;
            for &(node, wx) in &spatial {
                s += wx * g(k, node);
            }
            total += wt * s;
        }
        total
    }
}

/// Real samples on every (time level, node) of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return domain(format!("expected {} values, got {}", grid.len(), values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return domain("field contains non-finite values");
        }
        Ok(ScalarField { grid, values })
    }

    pub fn constant(grid: GridSpec, c: f64) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![c; n])
    }

    /// Samples `g(t, x)` at every node.
    pub fn from_fn(grid: GridSpec, mut g: impl FnMut(f64, &[f64]) -> f64) -> Result<Self> {
        let nn = grid.nodes();
        let mut values = Vec::with_capacity(grid.len());
        let points: Vec<Vec<f64>> = (0..nn).map(|n| grid.node_point(n)).collect();
        for k in 0..grid.nt {
            let t = grid.time(k);
            for p in &points {
                values.push(g(t, p));
            }
        }
        Self::new(grid, values)
    }

    /// Builds a field whose every level equals `level`.
    pub fn from_level(grid: GridSpec, level: &[f64]) -> Result<Self> {
        if level.len() != grid.nodes() {
            return domain("level size does not match the grid");
        }
        let mut values = Vec::with_capacity(grid.len());
        for _ in 0..grid.nt {
            values.extend_from_slice(level);
        }
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, k: usize, node: usize) -> f64 {
        self.values[k * self.grid.nodes() + node]
    }

    pub fn level(&self, k: usize) -> &[f64] {
        let nn = self.grid.nodes();
        &self.values[k * nn..(k + 1) * nn]
    }

    /// Pointwise map.
    pub fn map(&self, g: impl Fn(f64) -> f64) -> Result<ScalarField> {
        Self::new(self.grid.clone(), self.values.iter().map(|&v| g(v)).collect())
    }

    /// Pointwise combination with another field on the same grid.
    pub fn zip_map(&self, other: &ScalarField, g: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        if self.grid != other.grid {
            return domain("fields live on different grids");
        }
        Self::new(
            self.grid.clone(),
            self.values.iter().zip(&other.values).map(|(&a, &b)| g(a, b)).collect(),
        )
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Multilinear interpolation of level `k` at `x`.
    pub fn interp_level(&self, k: usize, x: &[f64]) -> f64 {
        interp_values(&self.grid, self.level(k), x)
    }

    /// Multilinear interpolation in space and time; coordinates outside a
    /// clamped box are projected onto it.
    pub fn interp(&self, t: f64, x: &[f64]) -> f64 {
        let g = &self.grid;
        let s = ((t - g.t_lo) / g.dt()).clamp(0.0, (g.nt - 1) as f64);
        let k = (s.floor() as usize).min(g.nt - 2);
        let w = s - k as f64;
        let a = self.interp_level(k, x);
        if w == 0.0 {
            return a;
        }
        let b = self.interp_level(k + 1, x);
        (1.0 - w) * a + w * b
    }

    /// Writes `t,x1[,x2],value` rows, time-major.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(csv_header(self.grid.d)).map_err(csv_err)?;
        let nn = self.grid.nodes();
        for k in 0..self.grid.nt {
            let t = self.grid.time(k);
            for node in 0..nn {
                let mut rec = vec![t.to_string()];
                rec.extend(self.grid.node_point(node).iter().map(|v| v.to_string()));
                rec.push(self.at(k, node).to_string());
                w.write_record(&rec).map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a field written in the `t,x1[,x2],value` layout and checks that
    /// the coordinates match `grid`.
    pub fn read_csv<R: Read>(input: R, grid: &GridSpec) -> Result<Self> {
        let rows = read_rows(input, grid.d)?;
        if rows.len() != grid.len() {
            return Err(Error::FieldFile(format!(
                "expected {} rows for the grid, found {}",
                grid.len(),
                rows.len()
            )));
        }
        let nn = grid.nodes();
        let mut values = Vec::with_capacity(rows.len());
        for (r, row) in rows.iter().enumerate() {
            let k = r / nn;
            check_coords(grid, row, grid.time(k), r % nn, r)?;
            values.push(row[grid.d + 1]);
        }
        Self::new(grid.clone(), values)
    }
}

/// Reads a single time level (any constant `t`) in the field CSV layout.
pub fn read_level_csv<R: Read>(input: R, grid: &GridSpec) -> Result<Vec<f64>> {
    let rows = read_rows(input, grid.d)?;
    if rows.len() != grid.nodes() {
        return Err(Error::FieldFile(format!(
            "expected {} rows for one level, found {}",
            grid.nodes(),
            rows.len()
        )));
    }
    let t = rows[0][0];
    let mut out = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        check_coords(grid, row, t, r, r)?;
        out.push(row[grid.d + 1]);
    }
    Ok(out)
}

/// Writes a single level in the field CSV layout.
pub fn write_level_csv<W: Write>(out: W, grid: &GridSpec, t: f64, level: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(grid.d)).map_err(csv_err)?;
    for (node, v) in level.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(grid.node_point(node).iter().map(|c| c.to_string()));
        rec.push(v.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_header(d: usize) -> Vec<&'static str> {
    if d == 1 {
        vec!["t", "x1", "value"]
    } else {
        vec!["t", "x1", "x2", "value"]
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::FieldFile(e.to_string())
}

fn read_rows<R: Read>(input: R, d: usize) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(|s| s.to_string()).collect();
    let expected = csv_header(d);
    if header != expected {
        return Err(Error::FieldFile(format!(
            "header {:?} does not match {:?}",
            header, expected
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != d + 2 {
            return Err(Error::FieldFile(format!("row {} has {} columns", i + 1, rec.len())));
        }
        let mut row = Vec::with_capacity(d + 2);
        for cell in rec.iter() {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::FieldFile(format!("row {}: cannot parse {cell:?}", i + 1)))?;
            row.push(v);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn check_coords(grid: &GridSpec, row: &[f64], t: f64, node: usize, r: usize) -> Result<()> {
    let tol = 1e-9;
    let scale_t = 1.0 + t.abs();
    if (row[0] - t).abs() > tol * scale_t {
        return Err(Error::FieldFile(format!("row {}: time {} is not on the grid (expected {t})", r + 1, row[0])));
    }
    let p = grid.node_point(node);
    for a in 0..grid.d {
        if (row[1 + a] - p[a]).abs() > tol * (1.0 + p[a].abs()) {
            return Err(Error::FieldFile(format!(
                "row {}: coordinate x{} = {} does not match node {} (non-rectangular data)",
                r + 1,
                a + 1,
                row[1 + a],
                p[a]
            )));
        }
    }
    Ok(())
}

/// Multilinear interpolation of one level of nodal values.
pub fn interp_values(grid: &GridSpec, level: &[f64], x: &[f64]) -> f64 {
    let mut lo = [0usize; 2];
    let mut hi = [0usize; 2];
    let mut w = [0.0f64; 2];
    for a in 0..grid.d {
        let dx = grid.dx(a);
        match grid.boundary {
            Boundary::Clamped => {
                let s = ((x[a] - grid.x_lo[a]) / dx).clamp(0.0, (grid.nx - 1) as f64);
                let i = (s.floor() as usize).min(grid.nx - 2);
                lo[a] = i;
                hi[a] = i + 1;
                w[a] = s - i as f64;
            }
            Boundary::Periodic => {
                let s = (grid.wrap(a, x[a]) - grid.x_lo[a]) / dx;
                let i = (s.floor() as usize).min(grid.nx - 1);
                lo[a] = i;
                hi[a] = (i + 1) % grid.nx;
                w[a] = (s - i as f64).clamp(0.0, 1.0);
            }
        }
    }
    if grid.d == 1 {
        let a = level[lo[0]];
        if w[0] == 0.0 {
            return a;
        }
        (1.0 - w[0]) * a + w[0] * level[hi[0]]
    } else {
        let n = grid.nx;
        let v00 = level[lo[0] * n + lo[1]];
        let v01 = level[lo[0] * n + hi[1]];
        let v10 = level[hi[0] * n + lo[1]];
        let v11 = level[hi[0] * n + hi[1]];
        let a = (1.0 - w[1]) * v00 + w[1] * v01;
        let b = (1.0 - w[1]) * v10 + w[1] * v11;
        (1.0 - w[0]) * a + w[0] * b
    }
}

/// `d` components per (time level, node).
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.d * grid.len() {
            return domain("vector field has the wrong number of components");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return domain("vector field contains non-finite values");
        }
        Ok(VectorField { grid, values })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Components at one sample.
    pub fn at(&self, k: usize, node: usize) -> &[f64] {
        let d = self.grid.d;
        let i = (k * self.grid.nodes() + node) * d;
        &self.values[i..i + d]
    }

    /// Euclidean norm at every sample.
    pub fn norm(&self) -> ScalarField {
        let d = self.grid.d;
        let values = self
            .values
            .chunks(d)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        ScalarField {
            grid: self.grid.clone(),
            values,
        }
    }
}

/// Spatial gradient of one level by central differences (one-sided at
/// clamped faces, wrapped on periodic axes). Output holds `d` components per node.
pub fn level_gradient(grid: &GridSpec, level: &[f64]) -> Vec<f64> {
    let d = grid.d;
    let nx = grid.nx;
    let nn = grid.nodes();
    let mut out = vec![0.0; nn * d];
    for node in 0..nn {
        let idx = grid.node_indices(node);
        for a in 0..d {
            let dx = grid.dx(a);
            let stride = if d == 1 || a == 1 { 1 } else { nx };
            let i = idx[a];
            let base = node - i * stride;
            let at = |j: usize| level[base + j * stride];
            let g = match grid.boundary {
                Boundary::Periodic => {
                    let ip = (i + 1) % nx;
                    let im = (i + nx - 1) % nx;
                    (at(ip) - at(im)) / (2.0 * dx)
                }
                Boundary::Clamped => {
                    if i == 0 {
                        (at(1) - at(0)) / dx
                    } else if i + 1 == nx {
                        (at(i) - at(i - 1)) / dx
                    } else {
                        (at(i + 1) - at(i - 1)) / (2.0 * dx)
                    }
                }
            };
            out[node * d + a] = g;
        }
    }
    out
}

/// Discrete `∂t u` (forward differences, backward at the last level) and `Du`.
pub fn finite_diff(field: &ScalarField) -> (ScalarField, VectorField) {
    let grid = field.grid().clone();
    let nn = grid.nodes();
    let nt = grid.nt;
    let dt = grid.dt();
    let mut dtu = Vec::with_capacity(grid.len());
    for k in 0..nt {
        let (a, b) = if k + 1 < nt { (k, k + 1) } else { (k - 1, k) };
        let (la, lb) = (field.level(a), field.level(b));
        dtu.extend(la.iter().zip(lb).map(|(x, y)| (y - x) / dt));
    }
    let mut grad = Vec::with_capacity(grid.len() * grid.d);
    for k in 0..nt {
        grad.extend(level_gradient(&grid, field.level(k)));
    }
    debug_assert_eq!(dtu.len(), nt * nn);
    (
        ScalarField {
            grid: grid.clone(),
            values: dtu,
        },
        VectorField { grid, values: grad },
    )
}

/// Integral of `field` over `window ∩ domain` and the measure of that set.
pub fn integrate(field: &ScalarField, window: &CubeWindow) -> (f64, f64) {
    let q = field.grid().window_quadrature(window);
    (q.integrate(field.grid(), |k, n| field.at(k, n)), q.measure())
}

/// Midpoint-rule average of `field` over the window clipped to the domain.
pub fn cube_average(field: &ScalarField, window: &CubeWindow) -> Result<f64> {
    let q = field.grid().window_quadrature(window);
    let m = q.measure();
    if q.is_empty() || m <= 0.0 {
        return domain("window does not intersect the grid domain");
    }
    Ok(q.integrate(field.grid(), |k, n| field.at(k, n)) / m)
}

/// `(∫_region |field|^s)^{1/s}` by the midpoint rule.
pub fn lebesgue_norm(field: &ScalarField, s: f64, region: &CubeWindow) -> Result<f64> {
    if !(s.is_finite() && s >= 1.0) {
        return domain(format!("norm exponent must be finite and >= 1, got {s}"));
    }
    let q = field.grid().window_quadrature(region);
    if q.is_empty() || q.measure() <= 0.0 {
        return domain("region does not intersect the grid domain");
    }
    let total = q.integrate(field.grid(), |k, n| field.at(k, n).abs().powf(s));
    Ok(total.powf(1.0 / s))
}
