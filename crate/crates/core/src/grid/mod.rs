//! Box domains in one or two dimensions, their P1 triangulation and the
//! nodal / per-element fields living on them.
//!
//! In 2D every cell `[x_i, x_{i+1}] x [y_j, y_{j+1}]` is split along the
//! diagonal from `(i, j)` to `(i+1, j+1)`. With this split the P1 stiffness
//! matrix is the 5-point Laplacian, and every element gradient is a
//! forward difference along the cell edges.

mod io;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::expr::Expr;
use crate::sum::compensated_sum;
use crate::{Error, Result};

pub use io::{read_field, write_field, write_field_csv};

/// Axis-aligned box `prod_k [lower_k, upper_k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() || lower.len() > 2 {
            return Err(Error::Shape(format!(
                "box bounds must both have 1 or 2 entries, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (a, b) in lower.iter().zip(&upper) {
            if !(a.is_finite() && b.is_finite() && b > a) {
                return Err(Error::InvalidParameter(format!(
                    "degenerate interval [{a}, {b}]"
                )));
            }
        }
        Ok(BoxDomain { lower, upper })
    }

    pub fn unit_square() -> Self {
        BoxDomain {
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
        }
    }

    pub fn interval(a: f64, b: f64) -> Result<Self> {
        Self::new(vec![a], vec![b])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn measure(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| b - a)
            .product()
    }

    pub fn diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(xi, (a, b))| *a <= *xi && *xi <= *b)
    }

    /// Distance from an interior point to the boundary of the box.
    pub fn distance_to_boundary(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(xi, (a, b))| (xi - a).min(b - xi))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn sample_point<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| rng.gen_range(*a..=*b))
            .collect()
    }
}

/// A simplex of the triangulation: an interval in 1D, a triangle in 2D.
#[derive(Clone, Copy, Debug)]
pub struct Element {
    pub nodes: [usize; 3],
    pub vertex_count: usize,
    pub measure: f64,
    pub centroid: [f64; 2],
    /// Constant gradients of the hat functions of `nodes`, padded with zeros.
    pub shape_grads: [[f64; 2]; 3],
}

impl Element {
    pub fn vertices(&self) -> &[usize] {
        &self.nodes[..self.vertex_count]
    }
}

#[derive(Clone, Debug)]
pub struct Grid {
    domain: BoxDomain,
    resolution: Vec<usize>,
    spacing: Vec<f64>,
    boundary: Vec<bool>,
    elements: Vec<Element>,
    lumped: Vec<f64>,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.domain == other.domain && self.resolution == other.resolution
    }
}

impl Grid {
    pub fn new(domain: BoxDomain, resolution: Vec<usize>) -> Result<Self> {
        let n = domain.dim();
        if resolution.len() != n {
            return Err(Error::Shape(format!(
                "resolution has {} entries for a {n}-dimensional box",
                resolution.len()
            )));
        }
        if let Some(m) = resolution.iter().find(|m| **m < 2) {
            return Err(Error::Resolution(format!(
                "node count {m} < 2 along an axis"
            )));
        }
        let spacing: Vec<f64> = (0..n)
            .map(|k| (domain.upper[k] - domain.lower[k]) / (resolution[k] - 1) as f64)
            .collect();
        let mut grid = Grid {
            domain,
            resolution,
            spacing,
            boundary: Vec::new(),
            elements: Vec::new(),
            lumped: Vec::new(),
        };
        grid.boundary = (0..grid.node_count())
            .map(|node| {
                let idx = grid.node_multi_index(node);
                idx.iter()
                    .zip(&grid.resolution)
                    .take(n)
                    .any(|(i, m)| *i == 0 || *i == m - 1)
            })
            .collect();
        grid.elements = grid.build_elements();
        let mut lumped = vec![0.0; grid.node_count()];
        for e in &grid.elements {
            let share = e.measure / e.vertex_count as f64;
            for &v in e.vertices() {
                lumped[v] += share;
            }
        }
        grid.lumped = lumped;
        Ok(grid)
    }

    /// Uniform grid on `(0,1)^2` with `m` nodes per axis.
    pub fn unit_square(m: usize) -> Result<Self> {
        Self::new(BoxDomain::unit_square(), vec![m, m])
    }

    pub fn interval(a: f64, b: f64, m: usize) -> Result<Self> {
        Self::new(BoxDomain::interval(a, b)?, vec![m])
    }

    fn build_elements(&self) -> Vec<Element> {
        let h = &self.spacing;
        match self.dim() {
            1 => (0..self.resolution[0] - 1)
                .map(|i| Element {
                    nodes: [i, i + 1, 0],
                    vertex_count: 2,
                    measure: h[0],
                    centroid: [self.domain.lower[0] + (i as f64 + 0.5) * h[0], 0.0],
                    shape_grads: [[-1.0 / h[0], 0.0], [1.0 / h[0], 0.0], [0.0, 0.0]],
                })
                .collect(),
            _ => {
                let (mx, my) = (self.resolution[0], self.resolution[1]);
                let (hx, hy) = (h[0], h[1]);
                let area = 0.5 * hx * hy;
                let mut out = Vec::with_capacity(2 * (mx - 1) * (my - 1));
                for j in 0..my - 1 {
                    for i in 0..mx - 1 {
                        let a = j * mx + i;
                        let b = a + 1;
                        let c = a + mx + 1;
                        let d = a + mx;
                        let x0 = self.domain.lower[0] + i as f64 * hx;
                        let y0 = self.domain.lower[1] + j as f64 * hy;
                        // lower-right triangle (a, b, c)
                        out.push(Element {
                            nodes: [a, b, c],
                            vertex_count: 3,
                            measure: area,
                            centroid: [x0 + 2.0 * hx / 3.0, y0 + hy / 3.0],
                            shape_grads: [[-1.0 / hx, 0.0], [1.0 / hx, -1.0 / hy], [0.0, 1.0 / hy]],
                        });
                        // upper-left triangle (a, c, d)
                        out.push(Element {
                            nodes: [a, c, d],
                            vertex_count: 3,
                            measure: area,
                            centroid: [x0 + hx / 3.0, y0 + 2.0 * hy / 3.0],
                            shape_grads: [[0.0, -1.0 / hy], [1.0 / hx, 0.0], [-1.0 / hx, 1.0 / hy]],
                        });
                    }
                }
                out
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Smallest grid spacing.
    pub fn h_min(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn node_count(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    /// Mass-lumped quadrature weights; they sum to the measure of the box.
    pub fn lumped_weights(&self) -> &[f64] {
        &self.lumped
    }

    /// Per-axis indices of a node (second entry 0 in 1D).
    pub fn node_multi_index(&self, node: usize) -> [usize; 2] {
        let mx = self.resolution[0];
        [node % mx, node / mx]
    }

    pub fn node_index(&self, idx: [usize; 2]) -> usize {
        idx[0] + idx[1] * self.resolution[0]
    }

    /// Coordinates of a node, padded with 0 in 1D. Use `[..dim]` to slice.
    pub fn coord(&self, node: usize) -> [f64; 2] {
        let idx = self.node_multi_index(node);
        let mut x = [0.0; 2];
        for k in 0..self.dim() {
            x[k] = self.domain.lower[k] + idx[k] as f64 * self.spacing[k];
        }
        x
    }

    fn check_same(&self, other: &Grid, what: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: fields live on different grids"
            )))
        }
    }

    /// Integer refinement factor `r` with `other = self` refined `r` times per axis.
    pub fn refinement_factor(&self, finer: &Grid) -> Result<usize> {
        if self.domain != finer.domain {
            return Err(Error::Shape("grids cover different boxes".into()));
        }
        let mut factor = None;
        for (mc, mf) in self.resolution.iter().zip(&finer.resolution) {
            let (c, f) = (mc - 1, mf - 1);
            if f % c != 0 {
                return Err(Error::Shape(format!("{mf} nodes do not refine {mc} nodes")));
            }
            let r = f / c;
            if factor.is_some_and(|prev| prev != r) {
                return Err(Error::Shape("non-uniform refinement factor".into()));
            }
            factor = Some(r);
        }
        Ok(factor.unwrap_or(1))
    }
}

/// Nodal field with `components` values per node, stored interleaved.
#[derive(Clone, Debug)]
pub struct Field {
    grid: Arc<Grid>,
    components: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Arc<Grid>, components: usize, values: Vec<f64>) -> Result<Self> {
        if components == 0 {
            return Err(Error::Shape("a field needs at least one component".into()));
        }
        if values.len() != grid.node_count() * components {
            return Err(Error::Shape(format!(
                "{} values for {} nodes x {components} components",
                values.len(),
                grid.node_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("field values must be finite".into()));
        }
        Ok(Field {
            grid,
            components,
            values,
        })
    }

    pub fn zeros(grid: Arc<Grid>, components: usize) -> Self {
        let len = grid.node_count() * components;
        Field {
            grid,
            components,
            values: vec![0.0; len],
        }
    }

    pub fn constant(grid: Arc<Grid>, components: usize, value: f64) -> Self {
        let len = grid.node_count() * components;
        Field {
            grid,
            components,
            values: vec![value; len],
        }
    }

    /// Evaluates one expression per component at every node.
    pub fn sample(grid: Arc<Grid>, exprs: &[Expr]) -> Result<Self> {
        for e in exprs {
            e.validate(grid.dim())?;
        }
        let n = grid.dim();
        Self::from_fn(grid, exprs.len(), |x, out| {
            for (o, e) in out.iter_mut().zip(exprs) {
                *o = e.eval(&x[..n]);
            }
        })
    }

    /// Builds a field from a closure `f(x, values_at_x)`.
    pub fn from_fn<F>(grid: Arc<Grid>, components: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let n = grid.dim();
        let mut values = vec![0.0; grid.node_count() * components];
        for (node, chunk) in values.chunks_mut(components).enumerate() {
            let x = grid.coord(node);
            f(&x[..n], chunk);
        }
        Self::new(grid, components, values)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
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

    pub fn node(&self, node: usize) -> &[f64] {
        &self.values[node * self.components..(node + 1) * self.components]
    }

    pub fn same_shape(&self, other: &Field, what: &str) -> Result<()> {
        self.grid.check_same(&other.grid, what)?;
        if self.components != other.components {
            return Err(Error::Shape(format!(
                "{what}: {} vs {} components",
                self.components, other.components
            )));
        }
        Ok(())
    }

    /// Exact gradient of the piecewise-linear interpolant on every element.
    pub fn gradient(&self) -> ElementField {
        let n = self.grid.dim();
        let nc = self.components;
        let mut values = Vec::with_capacity(self.grid.elements().len() * nc * n);
        for e in self.grid.elements() {
            for i in 0..nc {
                for k in 0..n {
                    let mut d = 0.0;
                    for (a, &v) in e.vertices().iter().enumerate() {
                        d += self.values[v * nc + i] * e.shape_grads[a][k];
                    }
                    values.push(d);
                }
            }
        }
        ElementField {
            grid: self.grid.clone(),
            rows: nc,
            cols: n,
            values,
        }
    }

    /// Discrete `L^t` norm with mass-lumped quadrature; `t = inf` gives the max norm.
    pub fn lp_norm(&self, t: f64) -> Result<f64> {
        check_exponent(t)?;
        let nc = self.components;
        let mags = self
            .values
            .chunks(nc)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt());
        if t.is_infinite() {
            return Ok(mags.fold(0.0, f64::max));
        }
        let total = compensated_sum(
            mags.zip(self.grid.lumped_weights())
                .map(|(m, w)| w * m.powf(t)),
        );
        Ok(total.powf(1.0 / t))
    }

    /// `max_{nodes, rows} (psi - u)_+`.
    pub fn max_violation(&self, psi: &Field) -> Result<f64> {
        self.same_shape(psi, "violation")?;
        Ok(self
            .values
            .iter()
            .zip(&psi.values)
            .map(|(u, p)| (p - u).max(0.0))
            .fold(0.0, f64::max))
    }

    /// Value of the piecewise-linear interpolant at `x` (clamped into the box).
    pub fn interpolate(&self, x: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let nc = self.components;
        let locate = |k: usize| -> (usize, f64) {
            let m = g.resolution[k];
            let s = ((x[k] - g.domain.lower[k]) / g.spacing[k]).clamp(0.0, (m - 1) as f64);
            let i = (s.floor() as usize).min(m - 2);
            (i, s - i as f64)
        };
        let (i, xi) = locate(0);
        if g.dim() == 1 {
            return (0..nc)
                .map(|c| {
                    let a = self.values[i * nc + c];
                    let b = self.values[(i + 1) * nc + c];
                    a + xi * (b - a)
                })
                .collect();
        }
        let (j, eta) = locate(1);
        self.interpolate_cell(i, xi, j, eta)
    }

    fn interpolate_cell(&self, i: usize, xi: f64, j: usize, eta: f64) -> Vec<f64> {
        let nc = self.components;
        let mx = self.grid.resolution[0];
        let a = j * mx + i;
        let (b, c, d) = (a + 1, a + mx + 1, a + mx);
        (0..nc)
            .map(|k| {
                let va = self.values[a * nc + k];
                let vb = self.values[b * nc + k];
                let vc = self.values[c * nc + k];
                let vd = self.values[d * nc + k];
                if xi >= eta {
                    va + xi * (vb - va) + eta * (vc - vb)
                } else {
                    va + eta * (vd - va) + xi * (vc - vd)
                }
            })
            .collect()
    }

    /// Piecewise-linear interpolation onto a nested finer grid.
    pub fn prolong(&self, finer: Arc<Grid>) -> Result<Field> {
        let r = self.grid.refinement_factor(&finer)?;
        let nc = self.components;
        let n = self.grid.dim();
        let mut values = Vec::with_capacity(finer.node_count() * nc);
        for node in 0..finer.node_count() {
            let idx = finer.node_multi_index(node);
            let mut cell = [0usize; 2];
            let mut frac = [0.0f64; 2];
            let mut on_coarse_node = true;
            for k in 0..n {
                let mc = self.grid.resolution[k];
                let (q, rem) = (idx[k] / r, idx[k] % r);
                if rem != 0 {
                    on_coarse_node = false;
                }
                if q >= mc - 1 {
                    cell[k] = mc - 2;
                    frac[k] = 1.0;
                } else {
                    cell[k] = q;
                    frac[k] = rem as f64 / r as f64;
                }
            }
            if on_coarse_node {
                let cidx = [idx[0] / r, if n == 2 { idx[1] / r } else { 0 }];
                values.extend_from_slice(self.node(self.grid.node_index(cidx)));
            } else if n == 1 {
                let (a, b) = (self.node(cell[0]), self.node(cell[0] + 1));
                values.extend(a.iter().zip(b).map(|(va, vb)| va + frac[0] * (vb - va)));
            } else {
                values.extend(self.interpolate_cell(cell[0], frac[0], cell[1], frac[1]));
            }
        }
        Field::new(finer, nc, values)
    }

    /// Injection onto a nested coarser grid.
    pub fn restrict(&self, coarser: Arc<Grid>) -> Result<Field> {
        let r = coarser.refinement_factor(&self.grid)?;
        let nc = self.components;
        let mut values = Vec::with_capacity(coarser.node_count() * nc);
        for node in 0..coarser.node_count() {
            let [i, j] = coarser.node_multi_index(node);
            let fine = self.grid.node_index([i * r, j * r]);
            values.extend_from_slice(self.node(fine));
        }
        Field::new(coarser, nc, values)
    }
}

/// Per-element matrices (`rows x cols`, row-major), typically a gradient `Du`.
#[derive(Clone, Debug)]
pub struct ElementField {
    grid: Arc<Grid>,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl ElementField {
    pub fn new(grid: Arc<Grid>, rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.elements().len() * rows * cols {
            return Err(Error::Shape(format!(
                "{} values for {} elements x {rows}x{cols}",
                values.len(),
                grid.elements().len()
            )));
        }
        Ok(ElementField {
            grid,
            rows,
            cols,
            values,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn element(&self, e: usize) -> &[f64] {
        let s = self.rows * self.cols;
        &self.values[e * s..(e + 1) * s]
    }

    /// Applies `f` to every element matrix, producing a new element field.
    pub fn map<F>(&self, rows: usize, cols: usize, mut f: F) -> ElementField
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let s = self.rows * self.cols;
        let mut values = vec![0.0; self.grid.elements().len() * rows * cols];
        for (src, dst) in self.values.chunks(s).zip(values.chunks_mut(rows * cols)) {
            f(src, dst);
        }
        ElementField {
            grid: self.grid.clone(),
            rows,
            cols,
            values,
        }
    }

    /// Element-quadrature `L^t` norm of the Frobenius magnitude.
    pub fn lp_norm(&self, t: f64) -> Result<f64> {
        check_exponent(t)?;
        let s = self.rows * self.cols;
        let mags = self
            .values
            .chunks(s)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt());
        if t.is_infinite() {
            return Ok(mags.fold(0.0, f64::max));
        }
        let total = compensated_sum(
            mags.zip(self.grid.elements())
                .map(|(m, e)| e.measure * m.powf(t)),
        );
        Ok(total.powf(1.0 / t))
    }
}

fn check_exponent(t: f64) -> Result<()> {
    if t >= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("L^t norm needs t >= 1, got {t}")))
    }
}

/// Discrete `W^{1,q}` norm `||u||_{L^q} + ||Du||_{L^q}`.
pub fn w1q_norm(u: &Field, q: f64) -> Result<f64> {
    Ok(u.lp_norm(q)? + u.gradient().lp_norm(q)?)
}
