//! Cell-centered uniform grids in 1D/2D with homogeneous Neumann boundaries.
//!
//! Boundary handling uses mirror ghost cells, equivalently zero flux through
//! every boundary face. All operators are written face by face so the discrete
//! divergence theorem and summation by parts hold up to roundoff.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use crate::error::{Error, Result};

/// Uniform rectangular mesh. In 1D only the first axis is used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    n: [usize; 2],
    h: [f64; 2],
}

impl Grid {
    /// `n` cells covering `[0, length]`.
    pub fn line(n: usize, length: f64) -> Result<Grid> {
        Grid::new(1, [n, 1], [length, 1.0])
    }

    /// `nx * ny` cells covering `[0, lx] x [0, ly]`.
    pub fn rect(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Grid> {
        Grid::new(2, [nx, ny], [lx, ly])
    }

    fn new(dim: usize, n: [usize; 2], lengths: [f64; 2]) -> Result<Grid> {
        let mut h = [1.0; 2];
        for a in 0..dim {
            if n[a] < 3 {
                return Err(Error::domain(format!(
                    "need at least 3 cells per axis, got {}",
                    n[a]
                )));
            }
            if !(lengths[a] > 0.0 && lengths[a].is_finite()) {
                return Err(Error::domain(format!(
                    "axis length must be > 0, got {}",
                    lengths[a]
                )));
            }
            h[a] = lengths[a] / n[a] as f64;
        }
        Ok(Grid { dim, n, h })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells along `axis`.
    pub fn cells(&self, axis: usize) -> usize {
        if axis < self.dim {
            self.n[axis]
        } else {
            1
        }
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.h[axis]
    }

    pub fn length(&self, axis: usize) -> f64 {
        self.n[axis] as f64 * self.h[axis]
    }

    pub fn len(&self) -> usize {
        self.cells(0) * self.cells(1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.h[a]).product()
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|a| self.length(a)).product()
    }

    pub fn max_length(&self) -> f64 {
        (0..self.dim).map(|a| self.length(a)).fold(0.0, f64::max)
    }

    /// Flat row-major index (x fastest).
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n[0] + i
    }

    /// Cell-center coordinates of flat index `idx`.
    pub fn center(&self, idx: usize) -> [f64; 2] {
        let i = idx % self.n[0];
        let j = idx / self.n[0];
        [
            (i as f64 + 0.5) * self.h[0],
            if self.dim > 1 {
                (j as f64 + 0.5) * self.h[1]
            } else {
                0.0
            },
        ]
    }

    /// Sum over axes of `1 / h^2`, the stencil weight of the diagonal.
    pub fn inverse_h2_sum(&self) -> f64 {
        (0..self.dim).map(|a| 1.0 / (self.h[a] * self.h[a])).sum()
    }

    /// Iterate interior faces as `(left, right, axis)` cell pairs.
    pub fn faces(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let (nx, ny) = (self.cells(0), self.cells(1));
        let x_faces =
            (0..ny).flat_map(move |j| (0..nx - 1).map(move |i| (j * nx + i, j * nx + i + 1, 0)));
        let y_faces = (0..ny.saturating_sub(1))
            .flat_map(move |j| (0..nx).map(move |i| (j * nx + i, (j + 1) * nx + i, 1)));
        x_faces.chain(y_faces)
    }

    fn header(&self) -> String {
        let mut s = format!("# grid {}", self.dim);
        for a in 0..self.dim {
            let _ = write!(s, " {}", self.n[a]);
        }
        for a in 0..self.dim {
            let _ = write!(s, " {}", self.h[a]);
        }
        s
    }
}

/// Continuous-domain Poincare constant `(L_max / pi)^2` of the box, from the
/// first nonzero Neumann eigenvalue.
pub fn poincare_constant(g: &Grid) -> f64 {
    (g.max_length() / std::f64::consts::PI).powi(2)
}

/// Deterministic pairwise (tree) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Scalar values at cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Field> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite value {} at cell {i}",
                values[i]
            )));
        }
        Ok(Field { grid, values })
    }

    pub fn constant(grid: Grid, value: f64) -> Field {
        Field {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> f64) -> Field {
        Field {
            grid,
            values: (0..grid.len()).map(|i| f(grid.center(i))).collect(),
        }
    }

    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Field {
        debug_assert_eq!(values.len(), grid.len());
        Field { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `(value, cell)` of the smallest entry.
    pub fn argmin(&self) -> (f64, usize) {
        self.values
            .iter()
            .enumerate()
            .fold(
                (f64::INFINITY, 0),
                |acc, (i, &v)| if v < acc.0 { (v, i) } else { acc },
            )
    }

    pub fn argmax(&self) -> (f64, usize) {
        self.values
            .iter()
            .enumerate()
            .fold(
                (f64::NEG_INFINITY, 0),
                |acc, (i, &v)| if v > acc.0 { (v, i) } else { acc },
            )
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Cellwise combination `f(self, other)`.
    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        check_same_grid(self, other)?;
        Ok(Field::from_raw(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    /// Midpoint-rule integral.
    pub fn integrate(&self) -> f64 {
        pairwise_sum(&self.values) * self.grid.cell_volume()
    }

    pub fn mean(&self) -> f64 {
        self.integrate() / self.grid.volume()
    }

    /// Squared L2 norm.
    pub fn norm_sq(&self) -> f64 {
        let sq: Vec<f64> = self.values.iter().map(|v| v * v).collect();
        pairwise_sum(&sq) * self.grid.cell_volume()
    }

    /// L2 inner product.
    pub fn dot(&self, other: &Field) -> Result<f64> {
        check_same_grid(self, other)?;
        let prod: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .collect();
        Ok(pairwise_sum(&prod) * self.grid.cell_volume())
    }

    /// Squared L2 norm of the face-difference gradient,
    /// equal to `-<f, laplacian(f)>` in exact arithmetic.
    pub fn grad_norm_sq(&self) -> f64 {
        let g = &self.grid;
        let terms: Vec<f64> = g
            .faces()
            .map(|(l, r, axis)| {
                let d = (self.values[r] - self.values[l]) / g.h[axis];
                d * d
            })
            .collect();
        pairwise_sum(&terms) * g.cell_volume()
    }

    pub fn write_snapshot(&self, path: impl AsRef<Path>) -> io::Result<()> {
        fs::write(path, self.to_snapshot_string())
    }

    /// `# grid dim n.. h..` header, then one value per line in row-major order.
    pub fn to_snapshot_string(&self) -> String {
        let mut out = self.grid.header();
        out.push('\n');
        for v in &self.values {
            let _ = writeln!(out, "{v}");
        }
        out
    }

    pub fn read_snapshot(path: impl AsRef<Path>) -> std::result::Result<Field, String> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| format!("{}: {e}", path.as_ref().display()))?;
        Field::parse_snapshot(&text)
    }

    pub fn parse_snapshot(text: &str) -> std::result::Result<Field, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or("empty snapshot")?;
        let tokens: Vec<&str> = header.split_whitespace().collect();
        if tokens.len() < 3 || tokens[0] != "#" || tokens[1] != "grid" {
            return Err(format!("line 1: malformed header `{header}`"));
        }
        let dim: usize = tokens[2]
            .parse()
            .map_err(|_| "line 1: bad dim".to_string())?;
        if !(dim == 1 || dim == 2) || tokens.len() != 3 + 2 * dim {
            return Err(format!("line 1: malformed header `{header}`"));
        }
        let mut n = [1usize; 2];
        let mut h = [1.0f64; 2];
        for a in 0..dim {
            n[a] = tokens[3 + a]
                .parse()
                .map_err(|_| format!("line 1: bad n `{}`", tokens[3 + a]))?;
            h[a] = tokens[3 + dim + a]
                .parse()
                .map_err(|_| format!("line 1: bad h `{}`", tokens[3 + dim + a]))?;
        }
        let grid = Grid::new(dim, n, [n[0] as f64 * h[0], n[1] as f64 * h[1]])
            .map_err(|e| e.to_string())?;
        // keep the recorded spacing bit-exact
        let grid = Grid { h, ..grid };
        let values = lines
            .enumerate()
            .map(|(i, l)| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("line {}: bad value `{l}`", i + 2))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Field::new(grid, values).map_err(|e| e.to_string())
    }
}

/// The unknowns `(theta, c, phi)` at time `t`, sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub theta: Field,
    pub c: Field,
    pub phi: Field,
}

impl State {
    pub fn new(t: f64, theta: Field, c: Field, phi: Field) -> Result<State> {
        check_same_grid(&theta, &c)?;
        check_same_grid(&theta, &phi)?;
        Ok(State { t, theta, c, phi })
    }

    /// Spatially constant state.
    pub fn homogeneous(grid: Grid, theta: f64, c: f64, phi: f64) -> State {
        State {
            t: 0.0,
            theta: Field::constant(grid, theta),
            c: Field::constant(grid, c),
            phi: Field::constant(grid, phi),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.theta.grid()
    }
}

pub(crate) fn check_same_grid(a: &Field, b: &Field) -> Result<()> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch(format!("{:?} vs {:?}", a.grid, b.grid)));
    }
    Ok(())
}

/// Accumulate `sum_faces w_face (f_r - f_l) / h^2` into each cell; boundary
/// faces carry no flux.
fn flux_divergence(f: &Field, face_weight: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let g = f.grid;
    let v = &f.values;
    let mut out = vec![0.0; g.len()];
    for (l, r, axis) in g.faces() {
        let h = g.h[axis];
        let flux = face_weight(l, r) * (v[r] - v[l]) / (h * h);
        out[l] += flux;
        out[r] -= flux;
    }
    out
}

/// Standard 3-point / 5-point Laplacian with mirror ghost cells.
pub fn laplacian_neumann(f: &Field) -> Field {
    Field::from_raw(f.grid, flux_divergence(f, |_, _| 1.0))
}

/// Conservative `div(kappa grad f)` with arithmetic face means of `kappa`.
pub fn div_k_grad(kappa: &Field, f: &Field) -> Result<Field> {
    check_same_grid(kappa, f)?;
    if let Some((i, &k)) = kappa.values.iter().enumerate().find(|(_, &k)| !(k > 0.0)) {
        return Err(Error::domain(format!(
            "conductivity must be > 0, got {k} at cell {i}"
        )));
    }
    let k = &kappa.values;
    Ok(Field::from_raw(
        f.grid,
        flux_divergence(f, |l, r| 0.5 * (k[l] + k[r])),
    ))
}

/// Diagonal of the operator `f -> div(kappa grad f)` (nonpositive).
pub(crate) fn div_k_grad_diagonal(kappa: &Field) -> Vec<f64> {
    let g = kappa.grid;
    let k = &kappa.values;
    let mut d = vec![0.0; g.len()];
    for (l, r, axis) in g.faces() {
        let h = g.h[axis];
        let w = 0.5 * (k[l] + k[r]) / (h * h);
        d[l] -= w;
        d[r] -= w;
    }
    d
}
