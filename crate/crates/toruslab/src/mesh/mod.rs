//! Periodic grid, metric fields, curvature, and integration on the unit
//! three-torus.
//!
//! Geometry convention: the torus is `R^3 / Z^3` with period-one coordinates.
//! A grid of resolution `n` samples vertices at coordinates `i/n`; cells,
//! edges, and faces are indexed by their minimum-corner vertex plus an axis
//! or plane tag. Metric fields are vertex-sampled symmetric positive-definite
//! 3x3 matrices.

mod curvature;
mod grid;
mod metric;

pub use curvature::{
    hessian, scalar_curvature, scalar_curvature_with, two_tensor_norm_sq, ChristoffelField,
    ScalarCurvatureField,
};
pub use grid::PeriodicGrid;
pub use metric::{FourierTerm, MetricField, MetricSpec, SymmetricComponentTerm};

use crate::error::{Error, Result};

/// A subset of grid cells, stored as a dense membership mask.
///
/// Cells share the vertex index space: cell `idx` is the cube whose minimum
/// corner is vertex `idx`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSet {
    mask: Vec<bool>,
    count: usize,
    n: usize,
}

impl CellSet {
    /// The empty subset.
    pub fn empty(grid: &PeriodicGrid) -> Self {
        CellSet {
            mask: vec![false; grid.vertex_count()],
            count: 0,
            n: grid.n(),
        }
    }

    /// Every cell of the grid.
    pub fn full(grid: &PeriodicGrid) -> Self {
        CellSet {
            mask: vec![true; grid.vertex_count()],
            count: grid.vertex_count(),
            n: grid.n(),
        }
    }

    /// Builds a subset from a predicate on cell indices.
    pub fn from_fn(grid: &PeriodicGrid, mut pred: impl FnMut(usize) -> bool) -> Self {
        let mut set = CellSet::empty(grid);
        for idx in 0..grid.vertex_count() {
            if pred(idx) {
                set.insert(idx);
            }
        }
        set
    }

    pub fn insert(&mut self, idx: usize) {
        if !self.mask[idx] {
            self.mask[idx] = true;
            self.count += 1;
        }
    }

    pub fn remove(&mut self, idx: usize) {
        if self.mask[idx] {
            self.mask[idx] = false;
            self.count -= 1;
        }
    }

    #[inline]
    pub fn contains(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Iterator over member cell indices in increasing order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(|(i, _)| i)
    }

    /// Set complement.
    pub fn complement(&self) -> Self {
        let mask: Vec<bool> = self.mask.iter().map(|m| !m).collect();
        let count = self.mask.len() - self.count;
        CellSet {
            mask,
            count,
            n: self.n,
        }
    }

    pub fn is_subset_of(&self, other: &CellSet) -> bool {
        self.mask
            .iter()
            .zip(&other.mask)
            .all(|(a, b)| !*a || *b)
    }

    /// Splits the set into face-connected components (6-neighbor adjacency,
    /// periodic). Components are returned in order of discovery from the
    /// lowest cell index, which makes the decomposition deterministic.
    pub fn components(&self, grid: &PeriodicGrid) -> Vec<CellSet> {
        let mut seen = vec![false; self.mask.len()];
        let mut out = Vec::new();
        let mut stack = Vec::new();
        for start in 0..self.mask.len() {
            if !self.mask[start] || seen[start] {
                continue;
            }
            let mut comp = CellSet::empty(grid);
            seen[start] = true;
            stack.push(start);
            while let Some(c) = stack.pop() {
                comp.insert(c);
                for axis in 0..3 {
                    for step in [-1i64, 1] {
                        let nb = grid.shift(c, axis, step);
                        if self.mask[nb] && !seen[nb] {
                            seen[nb] = true;
                            stack.push(nb);
                        }
                    }
                }
            }
            out.push(comp);
        }
        out
    }

    /// Marks every vertex that is a corner of a member cell.
    pub fn corner_vertices(&self, grid: &PeriodicGrid) -> Vec<bool> {
        let mut verts = vec![false; grid.vertex_count()];
        for cell in self.iter() {
            for corner in grid.cell_corners(cell) {
                verts[corner] = true;
            }
        }
        verts
    }
}

/// Exponent for `lp_norm`: any finite `p >= 1`, or `f64::INFINITY` for the
/// sup norm.
pub fn lp_norm(
    field: &MetricField,
    values: &[f64],
    p: f64,
    region: Option<&CellSet>,
) -> Result<f64> {
    let grid = field.grid();
    if values.len() != grid.vertex_count() {
        return Err(Error::Shape {
            left: values.len(),
            right: grid.vertex_count(),
        });
    }
    if !(p >= 1.0) {
        return Err(Error::Parameter {
            name: "p",
            value: p,
            reason: "exponent must be >= 1 (or infinity for the sup norm)",
        });
    }
    let in_region: Option<Vec<bool>> = region.map(|r| r.corner_vertices(grid));
    let h3 = grid.h().powi(3);
    if p.is_infinite() {
        let mut sup = 0.0f64;
        for v in 0..grid.vertex_count() {
            if in_region.as_ref().is_none_or(|m| m[v]) {
                sup = sup.max(values[v].abs());
            }
        }
        return Ok(sup);
    }
    let mut acc = 0.0;
    for v in 0..grid.vertex_count() {
        if in_region.as_ref().is_none_or(|m| m[v]) {
            acc += values[v].abs().powf(p) * field.sqrt_det(v) * h3;
        }
    }
    Ok(acc.powf(1.0 / p))
}

/// Volume integral of per-vertex `values` against the metric volume element,
/// over the vertex quadrature (no root taken, sign preserved).
pub fn integral(field: &MetricField, values: &[f64]) -> Result<f64> {
    let grid = field.grid();
    if values.len() != grid.vertex_count() {
        return Err(Error::Shape {
            left: values.len(),
            right: grid.vertex_count(),
        });
    }
    let h3 = grid.h().powi(3);
    Ok((0..grid.vertex_count())
        .map(|v| values[v] * field.sqrt_det(v) * h3)
        .sum())
}
