//! Tensor meshes over (0,T) x Omega and the discrete fields living on them.
//!
//! Fields store node values (boundary included). Quadrature is the midpoint
//! rule per cell, with the field value at a cell center taken as the average
//! of its corner nodes; constant fields integrate exactly.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial domain: an interval in 1D or an axis-aligned rectangle in 2D.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    Interval { a: f64, b: f64 },
    Rect { x0: f64, x1: f64, y0: f64, y1: f64 },
}

impl Domain {
    pub fn unit_interval() -> Self {
        Domain::Interval { a: 0.0, b: 1.0 }
    }

    pub fn unit_square() -> Self {
        Domain::Rect { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 }
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Rect { .. } => 2,
        }
    }

    pub fn measure(&self) -> f64 {
        match self {
            Domain::Interval { a, b } => b - a,
            Domain::Rect { x0, x1, y0, y1 } => (x1 - x0) * (y1 - y0),
        }
    }

    /// Lower/upper bounds of the given axis.
    pub fn axis(&self, k: usize) -> (f64, f64) {
        match (self, k) {
            (Domain::Interval { a, b }, 0) => (*a, *b),
            (Domain::Rect { x0, x1, .. }, 0) => (*x0, *x1),
            (Domain::Rect { y0, y1, .. }, 1) => (*y0, *y1),
            _ => panic!("axis {k} out of range for {self:?}"),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.dim()).all(|k| {
            let (lo, hi) = self.axis(k);
            x[k] >= lo && x[k] <= hi
        })
    }

    pub fn center(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| {
            let (lo, hi) = self.axis(k);
            0.5 * (lo + hi)
        }).collect()
    }
}

/// Tensor grid over a spatial domain; `cells[k]` cells along axis `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceGrid {
    pub domain: Domain,
    pub cells: [usize; 2],
}

impl SpaceGrid {
    pub fn new_1d(domain: Domain, nx: usize) -> Self {
        assert_eq!(domain.dim(), 1);
        assert!(nx >= 1);
        SpaceGrid { domain, cells: [nx, 0] }
    }

    pub fn new_2d(domain: Domain, nx: usize, ny: usize) -> Self {
        assert_eq!(domain.dim(), 2);
        assert!(nx >= 1 && ny >= 1);
        SpaceGrid { domain, cells: [nx, ny] }
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn step(&self, k: usize) -> f64 {
        let (lo, hi) = self.domain.axis(k);
        (hi - lo) / self.cells[k] as f64
    }

    /// Number of nodes along axis `k` (cells + 1).
    pub fn nodes(&self, k: usize) -> usize {
        self.cells[k] + 1
    }

    pub fn node_count(&self) -> usize {
        match self.dim() {
            1 => self.nodes(0),
            _ => self.nodes(0) * self.nodes(1),
        }
    }

    pub fn cell_count(&self) -> usize {
        match self.dim() {
            1 => self.cells[0],
            _ => self.cells[0] * self.cells[1],
        }
    }

    pub fn coord(&self, k: usize, i: usize) -> f64 {
        let (lo, _) = self.domain.axis(k);
        lo + self.step(k) * i as f64
    }

    /// Flat node index; `iy` ignored in 1D.
    pub fn node_index(&self, ix: usize, iy: usize) -> usize {
        match self.dim() {
            1 => ix,
            _ => ix * self.nodes(1) + iy,
        }
    }

    pub fn node_coords(&self, flat: usize) -> Vec<f64> {
        match self.dim() {
            1 => vec![self.coord(0, flat)],
            _ => {
                let ny = self.nodes(1);
                vec![self.coord(0, flat / ny), self.coord(1, flat % ny)]
            }
        }
    }

    pub fn is_boundary(&self, flat: usize) -> bool {
        match self.dim() {
            1 => flat == 0 || flat == self.cells[0],
            _ => {
                let ny = self.nodes(1);
                let (ix, iy) = (flat / ny, flat % ny);
                ix == 0 || ix == self.cells[0] || iy == 0 || iy == self.cells[1]
            }
        }
    }

    pub fn cell_volume(&self) -> f64 {
        match self.dim() {
            1 => self.step(0),
            _ => self.step(0) * self.step(1),
        }
    }

    /// Corner node indices of a cell, 2 in 1D and 4 in 2D.
    pub fn cell_corners(&self, cell: usize) -> Vec<usize> {
        match self.dim() {
            1 => vec![cell, cell + 1],
            _ => {
                let (cx, cy) = (cell / self.cells[1], cell % self.cells[1]);
                vec![
                    self.node_index(cx, cy),
                    self.node_index(cx + 1, cy),
                    self.node_index(cx, cy + 1),
                    self.node_index(cx + 1, cy + 1),
                ]
            }
        }
    }

    pub fn cell_center(&self, cell: usize) -> Vec<f64> {
        match self.dim() {
            1 => vec![self.coord(0, cell) + 0.5 * self.step(0)],
            _ => {
                let (cx, cy) = (cell / self.cells[1], cell % self.cells[1]);
                vec![
                    self.coord(0, cx) + 0.5 * self.step(0),
                    self.coord(1, cy) + 0.5 * self.step(1),
                ]
            }
        }
    }
}

/// Space-time mesh over (0,T) x Omega.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub horizon: f64,
    pub time_cells: usize,
    pub space: SpaceGrid,
}

impl Mesh {
    pub fn new(horizon: f64, time_cells: usize, space: SpaceGrid) -> Self {
        assert!(horizon > 0.0 && time_cells >= 1);
        Mesh { horizon, time_cells, space }
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.time_cells as f64
    }

    pub fn time_nodes(&self) -> usize {
        self.time_cells + 1
    }

    pub fn time(&self, m: usize) -> f64 {
        self.dt() * m as f64
    }

    pub fn node_count(&self) -> usize {
        self.time_nodes() * self.space.node_count()
    }

    pub fn measure(&self) -> f64 {
        self.horizon * self.space.domain.measure()
    }
}

/// Discrete scalar or vector field on the nodes of a space-time mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub mesh: Mesh,
    pub components: usize,
    pub values: Vec<f64>,
    pub zero_trace: bool,
}

impl GridField {
    pub fn zeros(mesh: Mesh, components: usize) -> Self {
        assert!(components >= 1);
        let values = vec![0.0; mesh.node_count() * components];
        GridField { mesh, components, values, zero_trace: false }
    }

    /// Scalar field sampled from `f(t, x)`.
    pub fn from_scalar_fn(mesh: Mesh, f: impl Fn(f64, &[f64]) -> f64) -> Self {
        let mut field = GridField::zeros(mesh, 1);
        for m in 0..mesh.time_nodes() {
            let t = mesh.time(m);
            for s in 0..mesh.space.node_count() {
                let x = mesh.space.node_coords(s);
                let v = f(t, &x);
                let idx = field.flat_index(m, s, 0);
                field.values[idx] = v;
            }
        }
        field
    }

    /// Vector field sampled from `f(t, x, out)`.
    pub fn from_vector_fn(
        mesh: Mesh,
        components: usize,
        f: impl Fn(f64, &[f64], &mut [f64]),
    ) -> Self {
        let mut field = GridField::zeros(mesh, components);
        let mut buf = vec![0.0; components];
        for m in 0..mesh.time_nodes() {
            let t = mesh.time(m);
            for s in 0..mesh.space.node_count() {
                let x = mesh.space.node_coords(s);
                f(t, &x, &mut buf);
                for (c, &v) in buf.iter().enumerate() {
                    let idx = field.flat_index(m, s, c);
                    field.values[idx] = v;
                }
            }
        }
        field
    }

    pub fn flat_index(&self, time_node: usize, space_node: usize, comp: usize) -> usize {
        (time_node * self.mesh.space.node_count() + space_node) * self.components + comp
    }

    pub fn get(&self, time_node: usize, space_node: usize, comp: usize) -> f64 {
        self.values[self.flat_index(time_node, space_node, comp)]
    }

    pub fn set(&mut self, time_node: usize, space_node: usize, comp: usize, v: f64) {
        let idx = self.flat_index(time_node, space_node, comp);
        self.values[idx] = v;
    }

    /// Asserts the Dirichlet-zero trace flag after checking boundary nodes.
    /// Boundary values within rounding of zero are clamped to exactly zero.
    pub fn with_zero_trace(mut self) -> Result<Self> {
        let tol = 1e-12 * self.sup_norm().max(1.0);
        let mut worst = 0.0f64;
        for m in 0..self.mesh.time_nodes() {
            for s in 0..self.mesh.space.node_count() {
                if self.mesh.space.is_boundary(s) {
                    for c in 0..self.components {
                        worst = worst.max(self.get(m, s, c).abs());
                        self.set(m, s, c, 0.0);
                    }
                }
            }
        }
        if worst > tol {
            return Err(Error::NonZeroTrace(worst));
        }
        self.zero_trace = true;
        Ok(self)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= factor;
        }
        out
    }

    /// Pointwise difference `self - other` on a shared mesh.
    pub fn sub(&self, other: &GridField) -> Result<GridField> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        for (v, w) in out.values.iter_mut().zip(&other.values) {
            *v -= w;
        }
        Ok(out)
    }

    pub fn check_compatible(&self, other: &GridField) -> Result<()> {
        if self.mesh != other.mesh || self.components != other.components {
            return Err(Error::MeshMismatch(format!(
                "{:?}/{} components vs {:?}/{} components",
                self.mesh, self.components, other.mesh, other.components
            )));
        }
        Ok(())
    }

    /// Midpoint-rule sweep over space-time cells in a fixed order.
    ///
    /// Calls `visit(t_mid, x_mid, volume, avg)` where `avg` is the mean of the
    /// corner node values of the cell, one entry per component.
    pub fn for_each_cell(&self, mut visit: impl FnMut(f64, &[f64], f64, &[f64])) {
        let mesh = &self.mesh;
        let vol = mesh.dt() * mesh.space.cell_volume();
        let mut avg = vec![0.0; self.components];
        for m in 0..mesh.time_cells {
            let t_mid = mesh.time(m) + 0.5 * mesh.dt();
            for cell in 0..mesh.space.cell_count() {
                let center = mesh.space.cell_center(cell);
                let corners = mesh.space.cell_corners(cell);
                for c in 0..self.components {
                    let mut acc = 0.0;
                    for &s in &corners {
                        acc += self.get(m, s, c) + self.get(m + 1, s, c);
                    }
                    avg[c] = acc / (2 * corners.len()) as f64;
                }
                visit(t_mid, &center, vol, &avg);
            }
        }
    }

    /// L1 norm by the midpoint rule (scalar fields).
    pub fn l1_norm(&self) -> f64 {
        assert_eq!(self.components, 1);
        let mut acc = 0.0;
        self.for_each_cell(|_, _, vol, avg| acc += vol * avg[0].abs());
        acc
    }

    /// Nodal spatial gradient of a scalar field: central differences at
    /// interior nodes, one-sided at the boundary. A fixed linear operator,
    /// so it commutes exactly with any convolution in time.
    pub fn nodal_spatial_gradient(&self) -> GridField {
        assert_eq!(self.components, 1);
        let mesh = self.mesh;
        let dim = mesh.space.dim();
        let mut out = GridField::zeros(mesh, dim);
        let diff = |m: usize, lo: usize, hi: usize, h: f64, order: f64| {
            (self.get(m, hi, 0) - self.get(m, lo, 0)) / (h * order)
        };
        for m in 0..mesh.time_nodes() {
            match dim {
                1 => {
                    let h = mesh.space.step(0);
                    let n = mesh.space.nodes(0);
                    for i in 0..n {
                        let g = if i == 0 {
                            diff(m, 0, 1, h, 1.0)
                        } else if i == n - 1 {
                            diff(m, n - 2, n - 1, h, 1.0)
                        } else {
                            diff(m, i - 1, i + 1, h, 2.0)
                        };
                        out.set(m, i, 0, g);
                    }
                }
                _ => {
                    let (hx, hy) = (mesh.space.step(0), mesh.space.step(1));
                    let (nx, ny) = (mesh.space.nodes(0), mesh.space.nodes(1));
                    for ix in 0..nx {
                        for iy in 0..ny {
                            let s = mesh.space.node_index(ix, iy);
                            let gx = if ix == 0 {
                                diff(m, s, mesh.space.node_index(1, iy), hx, 1.0)
                            } else if ix == nx - 1 {
                                diff(m, mesh.space.node_index(nx - 2, iy), s, hx, 1.0)
                            } else {
                                diff(
                                    m,
                                    mesh.space.node_index(ix - 1, iy),
                                    mesh.space.node_index(ix + 1, iy),
                                    hx,
                                    2.0,
                                )
                            };
                            let gy = if iy == 0 {
                                diff(m, s, mesh.space.node_index(ix, 1), hy, 1.0)
                            } else if iy == ny - 1 {
                                diff(m, mesh.space.node_index(ix, ny - 2), s, hy, 1.0)
                            } else {
                                diff(
                                    m,
                                    mesh.space.node_index(ix, iy - 1),
                                    mesh.space.node_index(ix, iy + 1),
                                    hy,
                                    2.0,
                                )
                            };
                            out.set(m, s, 0, gx);
                            out.set(m, s, 1, gy);
                        }
                    }
                }
            }
        }
        out
    }

    /// Snapshot of the field at one time node.
    pub fn at_time(&self, time_node: usize) -> SpaceField {
        let ns = self.mesh.space.node_count();
        let mut values = Vec::with_capacity(ns * self.components);
        for s in 0..ns {
            for c in 0..self.components {
                values.push(self.get(time_node, s, c));
            }
        }
        SpaceField { grid: self.mesh.space, components: self.components, values }
    }

    /// Export nodes as CSV: `t,x[,y],v0[,v1,...]`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let dim = self.mesh.space.dim();
        let mut header = vec!["t".to_string()];
        header.push("x".to_string());
        if dim == 2 {
            header.push("y".to_string());
        }
        for c in 0..self.components {
            header.push(format!("v{c}"));
        }
        w.write_record(&header)?;
        for m in 0..self.mesh.time_nodes() {
            let t = self.mesh.time(m);
            for s in 0..self.mesh.space.node_count() {
                let x = self.mesh.space.node_coords(s);
                let mut rec = vec![format!("{t:.17e}")];
                rec.extend(x.iter().map(|v| format!("{v:.17e}")));
                for c in 0..self.components {
                    rec.push(format!("{:.17e}", self.get(m, s, c)));
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Compact binary layout. Header, little-endian:
    /// `u8` space dim, `u8` components, `u8` zero-trace flag, `u8` reserved,
    /// `u64` time cells, `f64` horizon, then per space axis `u64` cells,
    /// `f64` lo, `f64` hi, then `u64` value count and the row-major doubles
    /// (time node outermost, then space node, then component).
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let dim = self.mesh.space.dim() as u8;
        w.write_all(&[dim, self.components as u8, self.zero_trace as u8, 0])?;
        w.write_all(&(self.mesh.time_cells as u64).to_le_bytes())?;
        w.write_all(&self.mesh.horizon.to_le_bytes())?;
        for k in 0..self.mesh.space.dim() {
            let (lo, hi) = self.mesh.space.domain.axis(k);
            w.write_all(&(self.mesh.space.cells[k] as u64).to_le_bytes())?;
            w.write_all(&lo.to_le_bytes())?;
            w.write_all(&hi.to_le_bytes())?;
        }
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a field from the CSV layout written by [`GridField::write_csv`]:
    /// a full tensor listing of nodes with uniform spacing per axis.
    pub fn read_csv(path: &Path) -> Result<GridField> {
        let mut reader = csv::Reader::from_path(path)?;
        let header = reader.headers()?.clone();
        let dim = match header.len() {
            n if header.iter().take(3).collect::<Vec<_>>().get(2) == Some(&"y") => {
                debug_assert!(n >= 4);
                2
            }
            _ => 1,
        };
        let components = header.len() - 1 - dim;
        if components == 0 {
            return Err(Error::Config("CSV field has no value columns".into()));
        }
        let mut times = Vec::new();
        let mut coords: Vec<Vec<f64>> = vec![Vec::new(); dim];
        let mut values = Vec::new();
        for record in reader.records() {
            let record = record?;
            let parse = |i: usize| -> Result<f64> {
                record
                    .get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("bad CSV number in {record:?}")))
            };
            push_unique(&mut times, parse(0)?);
            for k in 0..dim {
                push_unique(&mut coords[k], parse(1 + k)?);
            }
            for c in 0..components {
                values.push(parse(1 + dim + c)?);
            }
        }
        let check_uniform = |axis: &[f64], name: &str| -> Result<f64> {
            if axis.len() < 2 {
                return Err(Error::Config(format!("axis {name} needs at least two nodes")));
            }
            let h = axis[1] - axis[0];
            for w in axis.windows(2) {
                if ((w[1] - w[0]) - h).abs() > 1e-9 * h.abs().max(1.0) {
                    return Err(Error::Config(format!("axis {name} is not uniformly spaced")));
                }
            }
            Ok(h)
        };
        check_uniform(&times, "t")?;
        for (k, axis) in coords.iter().enumerate() {
            check_uniform(axis, if k == 0 { "x" } else { "y" })?;
        }
        let domain = match dim {
            1 => Domain::Interval { a: coords[0][0], b: *coords[0].last().unwrap() },
            _ => Domain::Rect {
                x0: coords[0][0],
                x1: *coords[0].last().unwrap(),
                y0: coords[1][0],
                y1: *coords[1].last().unwrap(),
            },
        };
        let space = match dim {
            1 => SpaceGrid::new_1d(domain, coords[0].len() - 1),
            _ => SpaceGrid::new_2d(domain, coords[0].len() - 1, coords[1].len() - 1),
        };
        if times[0].abs() > 1e-12 {
            return Err(Error::Config("field time axis must start at 0".into()));
        }
        let mesh = Mesh::new(*times.last().unwrap(), times.len() - 1, space);
        if values.len() != mesh.node_count() * components {
            return Err(Error::Config(format!(
                "CSV field holds {} values, mesh expects {}",
                values.len(),
                mesh.node_count() * components
            )));
        }
        Ok(GridField { mesh, components, values, zero_trace: false })
    }

    pub fn read_binary(path: &Path) -> Result<GridField> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut head = [0u8; 4];
        r.read_exact(&mut head)?;
        let (dim, components, zero_trace) = (head[0] as usize, head[1] as usize, head[2] != 0);
        let time_cells = read_u64(&mut r)? as usize;
        let horizon = read_f64(&mut r)?;
        let mut axes = Vec::new();
        for _ in 0..dim {
            let cells = read_u64(&mut r)? as usize;
            let lo = read_f64(&mut r)?;
            let hi = read_f64(&mut r)?;
            axes.push((cells, lo, hi));
        }
        let domain = match dim {
            1 => Domain::Interval { a: axes[0].1, b: axes[0].2 },
            2 => Domain::Rect { x0: axes[0].1, x1: axes[0].2, y0: axes[1].1, y1: axes[1].2 },
            _ => return Err(Error::Config(format!("unsupported space dimension {dim}"))),
        };
        let space = match dim {
            1 => SpaceGrid::new_1d(domain, axes[0].0),
            _ => SpaceGrid::new_2d(domain, axes[0].0, axes[1].0),
        };
        let mesh = Mesh::new(horizon, time_cells, space);
        let count = read_u64(&mut r)? as usize;
        if count != mesh.node_count() * components {
            return Err(Error::Config(format!(
                "binary field holds {count} values, mesh expects {}",
                mesh.node_count() * components
            )));
        }
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(read_f64(&mut r)?);
        }
        Ok(GridField { mesh, components, values, zero_trace })
    }
}

fn push_unique(axis: &mut Vec<f64>, v: f64) {
    // Node coordinates arrive in row-major order; new values append.
    if !axis.iter().any(|&a| (a - v).abs() <= 1e-12 * v.abs().max(1.0)) {
        axis.push(v);
    }
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

/// Discrete field on the nodes of a spatial grid (one time slice).
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceField {
    pub grid: SpaceGrid,
    pub components: usize,
    pub values: Vec<f64>,
}

impl SpaceField {
    pub fn zeros(grid: SpaceGrid, components: usize) -> Self {
        SpaceField { grid, components, values: vec![0.0; grid.node_count() * components] }
    }

    pub fn from_scalar_fn(grid: SpaceGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut field = SpaceField::zeros(grid, 1);
        for s in 0..grid.node_count() {
            field.values[s] = f(&grid.node_coords(s));
        }
        field
    }

    pub fn get(&self, node: usize, comp: usize) -> f64 {
        self.values[node * self.components + comp]
    }

    pub fn set(&mut self, node: usize, comp: usize, v: f64) {
        self.values[node * self.components + comp] = v;
    }

    /// L1 norm over the domain by the midpoint rule (scalar fields).
    pub fn l1_norm(&self) -> f64 {
        assert_eq!(self.components, 1);
        let grid = &self.grid;
        let vol = grid.cell_volume();
        let mut acc = 0.0;
        for cell in 0..grid.cell_count() {
            let corners = grid.cell_corners(cell);
            let avg: f64 =
                corners.iter().map(|&s| self.get(s, 0)).sum::<f64>() / corners.len() as f64;
            acc += vol * avg.abs();
        }
        acc
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_rule_exact_for_constants() {
        let mesh = Mesh::new(2.0, 4, SpaceGrid::new_1d(Domain::Interval { a: -1.0, b: 3.0 }, 8));
        let field = GridField::from_scalar_fn(mesh, |_, _| 2.5);
        let mut acc = 0.0;
        field.for_each_cell(|_, _, vol, avg| acc += vol * avg[0]);
        assert!((acc - 2.5 * 8.0).abs() < 1e-12, "got {acc}");
    }

    #[test]
    fn zero_trace_detects_boundary_values() {
        let mesh = Mesh::new(1.0, 2, SpaceGrid::new_1d(Domain::unit_interval(), 4));
        let ok = GridField::from_scalar_fn(mesh, |_, x| (std::f64::consts::PI * x[0]).sin());
        assert!(ok.with_zero_trace().is_ok());
        let bad = GridField::from_scalar_fn(mesh, |_, x| x[0] + 1.0);
        assert!(matches!(bad.with_zero_trace(), Err(Error::NonZeroTrace(_))));
    }

    #[test]
    fn binary_round_trip() {
        let mesh =
            Mesh::new(0.5, 3, SpaceGrid::new_2d(Domain::unit_square(), 3, 2));
        let field = GridField::from_vector_fn(mesh, 2, |t, x, out| {
            out[0] = t + x[0];
            out[1] = x[1] - t;
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.bin");
        field.write_binary(&path).unwrap();
        let back = GridField::read_binary(&path).unwrap();
        assert_eq!(field, back);
    }

    #[test]
    fn csv_round_trip() {
        let mesh = Mesh::new(0.5, 4, SpaceGrid::new_1d(Domain::Interval { a: -1.0, b: 1.0 }, 6));
        let field = GridField::from_scalar_fn(mesh, |t, x| t + 2.0 * x[0]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.csv");
        field.write_csv(&path).unwrap();
        let back = GridField::read_csv(&path).unwrap();
        assert_eq!(back.mesh.time_cells, 4);
        assert_eq!(back.mesh.space.cells[0], 6);
        for (a, b) in field.values.iter().zip(&back.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cell_corners_2d() {
        let grid = SpaceGrid::new_2d(Domain::unit_square(), 2, 2);
        assert_eq!(grid.cell_corners(0), vec![0, 3, 1, 4]);
        assert_eq!(grid.cell_count(), 4);
        assert_eq!(grid.node_count(), 9);
    }
}
