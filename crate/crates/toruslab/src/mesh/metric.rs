//! Vertex-sampled Riemannian metrics and volume/area quadrature.

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{CellSet, PeriodicGrid};
use crate::error::{Error, Result};
use crate::tolerances::{METRIC_EIG_FLOOR, METRIC_SYMMETRY_TOL};

/// One cosine mode `amplitude * cos(2 pi <wave, x> + phase)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FourierTerm {
    pub amplitude: f64,
    /// Integer wave vector; integrality keeps the mode periodic on the unit
    /// torus.
    pub wave: [i64; 3],
    pub phase: f64,
}

impl FourierTerm {
    fn eval(&self, x: [f64; 3]) -> f64 {
        let dot = self.wave[0] as f64 * x[0] + self.wave[1] as f64 * x[1] + self.wave[2] as f64 * x[2];
        self.amplitude * (2.0 * std::f64::consts::PI * dot + self.phase).cos()
    }
}

/// A cosine mode applied to one symmetric component (and its mirror).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SymmetricComponentTerm {
    pub row: usize,
    pub col: usize,
    pub amplitude: f64,
    pub wave: [i64; 3],
    pub phase: f64,
}

/// Declarative metric description, as ingested from run configs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricSpec {
    /// A single constant matrix, row-major.
    Constant { matrix: [f64; 9] },
    /// `exp(2 f) * base` with `f` a sum of cosine modes.
    Conformal {
        base: [f64; 9],
        terms: Vec<FourierTerm>,
    },
    /// `base` plus cosine modes added to individual symmetric components.
    DirectFourier {
        base: [f64; 9],
        terms: Vec<SymmetricComponentTerm>,
    },
}

fn matrix_from_row_major(m: &[f64; 9]) -> Matrix3<f64> {
    Matrix3::new(m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8])
}

impl MetricSpec {
    /// Identity metric, the flat reference.
    pub fn flat() -> Self {
        MetricSpec::Constant {
            matrix: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        }
    }

    /// Evaluates the metric description at a point of the unit torus.
    pub fn eval(&self, x: [f64; 3]) -> Result<Matrix3<f64>> {
        match self {
            MetricSpec::Constant { matrix } => Ok(matrix_from_row_major(matrix)),
            MetricSpec::Conformal { base, terms } => {
                let f: f64 = terms.iter().map(|t| t.eval(x)).sum();
                Ok(matrix_from_row_major(base) * (2.0 * f).exp())
            }
            MetricSpec::DirectFourier { base, terms } => {
                let mut g = matrix_from_row_major(base);
                for t in terms {
                    if t.row > 2 || t.col > 2 {
                        return Err(Error::Parameter {
                            name: "component index",
                            value: t.row.max(t.col) as f64,
                            reason: "symmetric component indices must lie in 0..3",
                        });
                    }
                    let v = FourierTerm {
                        amplitude: t.amplitude,
                        wave: t.wave,
                        phase: t.phase,
                    }
                    .eval(x);
                    g[(t.row, t.col)] += v;
                    if t.row != t.col {
                        g[(t.col, t.row)] += v;
                    }
                }
                Ok(g)
            }
        }
    }
}

/// A vertex-sampled metric on the periodic grid, with cached inverses,
/// volume densities, and per-cell corner averages.
#[derive(Debug, Clone)]
pub struct MetricField {
    grid: PeriodicGrid,
    g: Vec<Matrix3<f64>>,
    ginv: Vec<Matrix3<f64>>,
    sqrt_det: Vec<f64>,
    cell_avg: Vec<Matrix3<f64>>,
    cell_sqrt_det: Vec<f64>,
}

impl MetricField {
    /// Samples a metric description at every vertex and validates
    /// positive-definiteness.
    pub fn build(grid: PeriodicGrid, spec: &MetricSpec) -> Result<Self> {
        let mut samples = Vec::with_capacity(grid.vertex_count());
        for v in 0..grid.vertex_count() {
            samples.push(spec.eval(grid.position(v))?);
        }
        Self::from_samples(grid, samples)
    }

    /// Builds a field from raw vertex samples (one 3x3 matrix per vertex).
    pub fn from_samples(grid: PeriodicGrid, samples: Vec<Matrix3<f64>>) -> Result<Self> {
        if samples.len() != grid.vertex_count() {
            return Err(Error::Shape {
                left: samples.len(),
                right: grid.vertex_count(),
            });
        }
        let mut g = Vec::with_capacity(samples.len());
        let mut ginv = Vec::with_capacity(samples.len());
        let mut sqrt_det = Vec::with_capacity(samples.len());
        for (vertex, m) in samples.into_iter().enumerate() {
            let asym = (m - m.transpose()).abs().max();
            if asym > METRIC_SYMMETRY_TOL {
                return Err(Error::DegenerateMetric {
                    vertex,
                    min_eig: f64::NAN,
                });
            }
            let sym = (m + m.transpose()) * 0.5;
            let eig = SymmetricEigen::new(sym);
            let min_eig = eig.eigenvalues.min();
            if !(min_eig >= METRIC_EIG_FLOOR) {
                return Err(Error::DegenerateMetric { vertex, min_eig });
            }
            let inv_vals = eig.eigenvalues.map(|l| 1.0 / l);
            let q = eig.eigenvectors;
            ginv.push(q * Matrix3::from_diagonal(&inv_vals) * q.transpose());
            sqrt_det.push(eig.eigenvalues.product().sqrt());
            g.push(sym);
        }
        let mut cell_avg = Vec::with_capacity(grid.vertex_count());
        let mut cell_sqrt_det = Vec::with_capacity(grid.vertex_count());
        for cell in 0..grid.vertex_count() {
            let mut acc = Matrix3::zeros();
            for corner in grid.cell_corners(cell) {
                acc += g[corner];
            }
            acc /= 8.0;
            cell_sqrt_det.push(acc.determinant().max(0.0).sqrt());
            cell_avg.push(acc);
        }
        Ok(MetricField {
            grid,
            g,
            ginv,
            sqrt_det,
            cell_avg,
            cell_sqrt_det,
        })
    }

    #[inline]
    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    #[inline]
    pub fn g(&self, vertex: usize) -> &Matrix3<f64> {
        &self.g[vertex]
    }

    #[inline]
    pub fn ginv(&self, vertex: usize) -> &Matrix3<f64> {
        &self.ginv[vertex]
    }

    #[inline]
    pub fn sqrt_det(&self, vertex: usize) -> f64 {
        self.sqrt_det[vertex]
    }

    /// Mean of the eight corner samples of a cell.
    #[inline]
    pub fn cell_average(&self, cell: usize) -> &Matrix3<f64> {
        &self.cell_avg[cell]
    }

    /// Riemannian volume of the whole torus (cell quadrature: density from
    /// the eight-corner mean of each cell).
    pub fn total_volume(&self) -> f64 {
        let h3 = self.grid.h().powi(3);
        self.cell_sqrt_det.iter().sum::<f64>() * h3
    }

    /// Riemannian volume of a cell subset, with the same quadrature as
    /// `total_volume` so that region and complement sum exactly to the total.
    pub fn region_volume(&self, region: &CellSet) -> f64 {
        let h3 = self.grid.h().powi(3);
        let total = region.iter().map(|c| self.cell_sqrt_det[c]).sum::<f64>() * h3;
        // An empty sum is IEEE negative zero; report volumes as +0.
        if total == 0.0 {
            0.0
        } else {
            total
        }
    }

    /// Riemannian area of the boundary of a cell subset: for each exposed
    /// face, the induced two-dimensional density is the square root of the
    /// metric's cofactor normal to the face, evaluated on the four-corner
    /// vertex mean.
    pub fn boundary_area(&self, region: &CellSet) -> f64 {
        let h2 = self.grid.h() * self.grid.h();
        let mut area = 0.0;
        for cell in region.iter() {
            for axis in 0..3 {
                // Negative-side face: shared with the neighbor below.
                if !region.contains(self.grid.shift(cell, axis, -1)) {
                    area += self.face_density(cell, axis) * h2;
                }
                // Positive-side face: owned by the neighbor above.
                let above = self.grid.shift(cell, axis, 1);
                if !region.contains(above) {
                    area += self.face_density(above, axis) * h2;
                }
            }
        }
        area
    }

    /// Two-dimensional volume density of the face of `cell` normal to
    /// `axis` (the face through the cell's minimum corner).
    fn face_density(&self, cell: usize, axis: usize) -> f64 {
        let mut m = Matrix3::zeros();
        for corner in self.grid.face_corners(cell, axis) {
            m += self.g[corner];
        }
        m /= 4.0;
        let (q, r) = ((axis + 1) % 3, (axis + 2) % 3);
        let cof = m[(q, q)] * m[(r, r)] - m[(q, r)] * m[(r, q)];
        cof.max(0.0).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conformal_spec_round_trips_through_json() {
        let spec = MetricSpec::Conformal {
            base: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            terms: vec![FourierTerm {
                amplitude: 0.1,
                wave: [1, 2, 0],
                phase: 0.5,
            }],
        };
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"kind\":\"conformal\""));
        let back: MetricSpec = serde_json::from_str(&text).unwrap();
        let x = [0.3, 0.7, 0.1];
        let a = spec.eval(x).unwrap();
        let b = back.eval(x).unwrap();
        assert!((a - b).abs().max() == 0.0);
    }

    #[test]
    fn direct_fourier_stays_symmetric() {
        let spec = MetricSpec::DirectFourier {
            base: [2.0, 0.1, 0.0, 0.1, 2.0, 0.0, 0.0, 0.0, 2.0],
            terms: vec![SymmetricComponentTerm {
                row: 0,
                col: 2,
                amplitude: 0.3,
                wave: [0, 1, 0],
                phase: 0.0,
            }],
        };
        let g = spec.eval([0.0, 0.125, 0.0]).unwrap();
        assert_eq!(g[(0, 2)], g[(2, 0)]);
        assert!((g[(0, 2)] - 0.3 * (2.0 * std::f64::consts::PI * 0.125).cos()).abs() < 1e-15);
    }

    #[test]
    fn direct_fourier_rejects_out_of_range_component() {
        let spec = MetricSpec::DirectFourier {
            base: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            terms: vec![SymmetricComponentTerm {
                row: 3,
                col: 0,
                amplitude: 0.1,
                wave: [1, 0, 0],
                phase: 0.0,
            }],
        };
        assert!(spec.eval([0.0; 3]).is_err());
    }

    #[test]
    fn inverse_and_density_are_consistent() {
        let grid = PeriodicGrid::new(4).unwrap();
        let spec = MetricSpec::Conformal {
            base: [2.0, 0.3, 0.0, 0.3, 1.5, 0.1, 0.0, 0.1, 1.0],
            terms: vec![FourierTerm {
                amplitude: 0.2,
                wave: [1, 1, 0],
                phase: 0.3,
            }],
        };
        let field = MetricField::build(grid, &spec).unwrap();
        for v in 0..field.grid().vertex_count() {
            let prod = field.g(v) * field.ginv(v);
            assert!((prod - Matrix3::identity()).abs().max() < 1e-12);
            let det = field.g(v).determinant();
            assert!((field.sqrt_det(v) - det.sqrt()).abs() < 1e-12);
        }
    }
}
