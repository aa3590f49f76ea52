//! Uniform tensor grids on a truncated box `[-L_1, L_1] x ... x [-L_d, L_d]`
//! and macroscopic density fields living on them.

use crate::error::Error;
use crate::Result;

/// Uniform node-centered tensor grid on a box centered at the origin.
///
/// Nodes along axis `k` are `x_i = -L_k + i h_k` with `h_k = 2 L_k / (n_k - 1)`,
/// so the node set is symmetric about the origin and includes the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    dim: usize,
    half_width: Vec<f64>,
    nodes: Vec<usize>,
}

impl SpatialGrid {
    pub fn new(half_width: &[f64], nodes: &[usize]) -> Result<Self> {
        let dim = half_width.len();
        if dim == 0 || dim > 3 || nodes.len() != dim {
            return Err(Error::DimensionMismatch { expected: half_width.len(), got: nodes.len() });
        }
        for (&l, &n) in half_width.iter().zip(nodes) {
            if !(l > 0.0) || n < 2 {
                return Err(Error::NonFinite { context: "grid construction" });
            }
        }
        Ok(Self { dim, half_width: half_width.to_vec(), nodes: nodes.to_vec() })
    }

    /// Isotropic 1D/2D/3D grid with the same half-width and node count per axis.
    pub fn isotropic(dim: usize, half_width: f64, nodes_per_axis: usize) -> Result<Self> {
        Self::new(&vec![half_width; dim], &vec![nodes_per_axis; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_widths(&self) -> &[f64] {
        &self.half_width
    }

    pub fn nodes_per_axis(&self) -> &[usize] {
        &self.nodes
    }

    /// Total number of grid nodes.
    pub fn len(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Spacing along axis `k`.
    pub fn spacing(&self, k: usize) -> f64 {
        2.0 * self.half_width[k] / (self.nodes[k] - 1) as f64
    }

    /// Product of spacings, the cell volume for plain Riemann sums.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|k| self.spacing(k)).product()
    }

    /// Coordinate of node `i` along axis `k`.
    pub fn coord(&self, k: usize, i: usize) -> f64 {
        -self.half_width[k] + i as f64 * self.spacing(k)
    }

    /// Multi-index of a flat (row-major) node index.
    pub fn multi_index(&self, mut flat: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        for k in (0..self.dim).rev() {
            idx[k] = flat % self.nodes[k];
            flat /= self.nodes[k];
        }
        idx
    }

    /// Coordinates of a flat node index (unused components are 0).
    pub fn point(&self, flat: usize) -> [f64; 3] {
        let mi = self.multi_index(flat);
        let mut x = [0.0; 3];
        for k in 0..self.dim {
            x[k] = self.coord(k, mi[k]);
        }
        x
    }

    /// Flat index of the mirrored node `-x`.
    pub fn mirror_index(&self, flat: usize) -> usize {
        let mi = self.multi_index(flat);
        let mut out = 0usize;
        for k in 0..self.dim {
            out = out * self.nodes[k] + (self.nodes[k] - 1 - mi[k]);
        }
        out
    }

    /// True when the flat index touches the boundary of the box.
    pub fn on_boundary(&self, flat: usize) -> bool {
        let mi = self.multi_index(flat);
        (0..self.dim).any(|k| mi[k] == 0 || mi[k] == self.nodes[k] - 1)
    }

    /// Trapezoid quadrature weight of a flat node index (product rule).
    pub fn quad_weight(&self, flat: usize) -> f64 {
        let mi = self.multi_index(flat);
        let mut w = 1.0;
        for k in 0..self.dim {
            let edge = mi[k] == 0 || mi[k] == self.nodes[k] - 1;
            w *= self.spacing(k) * if edge { 0.5 } else { 1.0 };
        }
        w
    }

    /// Trapezoid quadrature of nodal samples.
    pub fn quadrature(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        let mut acc = 0.0;
        for (i, &v) in values.iter().enumerate() {
            acc += self.quad_weight(i) * v;
        }
        acc
    }

    /// Trapezoid L^p norm (p finite) of nodal samples.
    pub fn lp_norm(&self, values: &[f64], p: f64) -> f64 {
        let mut acc = 0.0;
        for (i, &v) in values.iter().enumerate() {
            acc += self.quad_weight(i) * v.abs().powf(p);
        }
        acc.powf(1.0 / p)
    }

    /// Trapezoid L^1 norm.
    pub fn l1_norm(&self, values: &[f64]) -> f64 {
        values.iter().enumerate().map(|(i, &v)| self.quad_weight(i) * v.abs()).sum()
    }

    /// Trapezoid L^2 norm.
    pub fn l2_norm(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| self.quad_weight(i) * v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Max-norm of nodal samples.
    pub fn linf_norm(&self, values: &[f64]) -> f64 {
        values.iter().fold(0.0_f64, |m, &v| m.max(v.abs()))
    }
}

/// Nonnegative macroscopic density samples on a grid, with cached mass.
#[derive(Debug, Clone)]
pub struct DensityField {
    grid: SpatialGrid,
    values: Vec<f64>,
    mass: f64,
}

impl DensityField {
    /// Wrap nodal samples; rejects non-finite entries.
    pub fn new(grid: SpatialGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "density field" });
        }
        let mass = grid.quadrature(&values);
        Ok(Self { grid, values, mass })
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    /// Pointwise linear combination `a*self + b*other` on a shared grid.
    pub fn lin_comb(&self, a: f64, other: &DensityField, b: f64) -> Result<DensityField> {
        if self.grid != other.grid {
            return Err(Error::DimensionMismatch { expected: self.grid.len(), got: other.grid.len() });
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&x, &y)| a * x + b * y)
            .collect();
        DensityField::new(self.grid.clone(), values)
    }

    /// L^1 distance to another field on the same grid.
    pub fn l1_distance(&self, other: &DensityField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .enumerate()
            .map(|(i, (&a, &b))| self.grid.quad_weight(i) * (a - b).abs())
            .sum()
    }
}
