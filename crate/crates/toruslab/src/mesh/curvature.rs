//! Christoffel symbols, scalar curvature, and covariant Hessians by
//! second-order central differences on the periodic grid.

use nalgebra::{Matrix3, Vector3};

use super::MetricField;
use crate::error::{Error, Result};

/// Christoffel symbols of the second kind at every vertex.
///
/// `gamma[v][k][(i, j)]` is the coefficient of the connection with upper
/// index `k` and symmetric lower indices `(i, j)`.
#[derive(Debug, Clone)]
pub struct ChristoffelField {
    gamma: Vec<[Matrix3<f64>; 3]>,
}

impl ChristoffelField {
    /// Computes all symbols from central differences of the metric:
    /// the upper-index contraction of `(d_i g_jl + d_j g_il - d_l g_ij) / 2`.
    pub fn new(field: &MetricField) -> Self {
        let grid = field.grid();
        let inv_2h = 0.5 / grid.h();
        let mut gamma = Vec::with_capacity(grid.vertex_count());
        for v in 0..grid.vertex_count() {
            let mut dg = [Matrix3::zeros(); 3];
            for (axis, slot) in dg.iter_mut().enumerate() {
                let up = grid.shift(v, axis, 1);
                let dn = grid.shift(v, axis, -1);
                *slot = (field.g(up) - field.g(dn)) * inv_2h;
            }
            let ginv = field.ginv(v);
            let mut at_v = [Matrix3::zeros(); 3];
            for i in 0..3 {
                for j in 0..3 {
                    for l in 0..3 {
                        let lower = 0.5 * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                        for (k, out) in at_v.iter_mut().enumerate() {
                            out[(i, j)] += ginv[(k, l)] * lower;
                        }
                    }
                }
            }
            gamma.push(at_v);
        }
        ChristoffelField { gamma }
    }

    /// The symbol matrix for upper index `k` at a vertex.
    #[inline]
    pub fn symbol(&self, vertex: usize, k: usize) -> &Matrix3<f64> {
        &self.gamma[vertex][k]
    }

    /// The trace vector `T_j = sum_k gamma^k_{k j}` at a vertex.
    fn trace_vector(&self, vertex: usize) -> Vector3<f64> {
        let g = &self.gamma[vertex];
        Vector3::new(
            g[0][(0, 0)] + g[1][(1, 0)] + g[2][(2, 0)],
            g[0][(0, 1)] + g[1][(1, 1)] + g[2][(2, 1)],
            g[0][(0, 2)] + g[1][(1, 2)] + g[2][(2, 2)],
        )
    }
}

/// Scalar curvature and its negative part at every vertex.
#[derive(Debug, Clone)]
pub struct ScalarCurvatureField {
    pub r: Vec<f64>,
    pub r_minus: Vec<f64>,
}

/// Scalar curvature by contracting the Ricci tensor built from the
/// Christoffel field:
/// `R_ij = d_k gamma^k_ij - d_i gamma^k_kj + gamma^k_kl gamma^l_ij
///  - gamma^k_il gamma^l_kj`, then `R = g^{ij} R_ij`.
pub fn scalar_curvature(field: &MetricField) -> ScalarCurvatureField {
    let chris = ChristoffelField::new(field);
    scalar_curvature_with(field, &chris)
}

/// Same as `scalar_curvature`, reusing an already-computed Christoffel
/// field.
pub fn scalar_curvature_with(field: &MetricField, chris: &ChristoffelField) -> ScalarCurvatureField {
    let grid = field.grid();
    let inv_2h = 0.5 / grid.h();
    let traces: Vec<Vector3<f64>> = (0..grid.vertex_count())
        .map(|v| chris.trace_vector(v))
        .collect();
    let mut r = Vec::with_capacity(grid.vertex_count());
    for v in 0..grid.vertex_count() {
        let ginv = field.ginv(v);
        // Central differences of the symbols and of their trace vector.
        let mut d_gamma = [[Matrix3::zeros(); 3]; 3]; // d_gamma[axis][k]
        let mut d_trace = [Vector3::zeros(); 3]; // d_trace[axis]
        for axis in 0..3 {
            let up = grid.shift(v, axis, 1);
            let dn = grid.shift(v, axis, -1);
            for k in 0..3 {
                d_gamma[axis][k] = (chris.symbol(up, k) - chris.symbol(dn, k)) * inv_2h;
            }
            d_trace[axis] = (traces[up] - traces[dn]) * inv_2h;
        }
        let mut scalar = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let mut ricci = 0.0;
                for k in 0..3 {
                    ricci += d_gamma[k][k][(i, j)];
                }
                ricci -= d_trace[i][j];
                let tv = traces[v];
                for l in 0..3 {
                    ricci += tv[l] * chris.symbol(v, l)[(i, j)];
                    for k in 0..3 {
                        ricci -= chris.symbol(v, k)[(i, l)] * chris.symbol(v, l)[(k, j)];
                    }
                }
                scalar += ginv[(i, j)] * ricci;
            }
        }
        r.push(scalar);
    }
    let r_minus = r.iter().map(|x| (-x).max(0.0)).collect();
    ScalarCurvatureField { r, r_minus }
}

/// Covariant Hessian of a one-form given by its vertex coefficient field:
/// `(grad a)_{ij} = d_i a_j - gamma^k_{ij} a_k` at every vertex.
pub fn hessian(
    field: &MetricField,
    chris: &ChristoffelField,
    coeff: &[Vector3<f64>],
) -> Result<Vec<Matrix3<f64>>> {
    let grid = field.grid();
    if coeff.len() != grid.vertex_count() {
        return Err(Error::Shape {
            left: coeff.len(),
            right: grid.vertex_count(),
        });
    }
    let inv_2h = 0.5 / grid.h();
    let mut out = Vec::with_capacity(grid.vertex_count());
    for v in 0..grid.vertex_count() {
        let mut t = Matrix3::zeros();
        for i in 0..3 {
            let up = grid.shift(v, i, 1);
            let dn = grid.shift(v, i, -1);
            let d = (coeff[up] - coeff[dn]) * inv_2h;
            for j in 0..3 {
                let mut val = d[j];
                for k in 0..3 {
                    val -= chris.symbol(v, k)[(i, j)] * coeff[v][k];
                }
                t[(i, j)] = val;
            }
        }
        out.push(t);
    }
    Ok(out)
}

/// Squared pointwise norm of a two-tensor in the metric at one vertex:
/// `|T|^2 = g^{ia} g^{jb} T_{ij} T_{ab} = tr(G^{-1} T G^{-1} T^t)`.
#[inline]
pub fn two_tensor_norm_sq(ginv: &Matrix3<f64>, t: &Matrix3<f64>) -> f64 {
    (ginv * t * ginv * t.transpose()).trace()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{FourierTerm, MetricSpec, PeriodicGrid};

    fn conformal_field(n: usize, a: f64) -> MetricField {
        let grid = PeriodicGrid::new(n).unwrap();
        MetricField::build(
            grid,
            &MetricSpec::Conformal {
                base: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
                terms: vec![FourierTerm {
                    amplitude: a,
                    wave: [1, 0, 0],
                    phase: 0.0,
                }],
            },
        )
        .unwrap()
    }

    /// Closed form for the conformal factor exp(2 a cos(2 pi x)):
    /// R = exp(-2f) (-4 lap f - 2 |grad f|^2).
    fn conformal_oracle(a: f64, x: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI;
        let f = a * (w * x).cos();
        let lap = -a * w * w * (w * x).cos();
        let grad_sq = (a * w * (w * x).sin()).powi(2);
        (-2.0 * f).exp() * (-4.0 * lap - 2.0 * grad_sq)
    }

    #[test]
    fn conformal_curvature_matches_closed_form() {
        let field = conformal_field(40, 0.1);
        let grid = *field.grid();
        let curv = scalar_curvature(&field);
        // Frozen reference values of the closed form.
        let fixtures = [
            (0usize, 12.928877830217045),
            (10, -0.7895683520871478), // x = 0.25
            (12, -5.950605622664445),  // x = 0.3
        ];
        for (ix, want) in fixtures {
            let v = grid.index(ix, 7, 3);
            let x = grid.position(v)[0];
            assert!((conformal_oracle(0.1, x) - want).abs() < 1e-12);
            // Truncation of the two-pass stencil peaks at the cosine
            // extrema; the refinement test below pins the convergence rate.
            assert!(
                (curv.r[v] - want).abs() < 0.5,
                "R({x}) = {} vs {}",
                curv.r[v],
                want
            );
        }
    }

    #[test]
    fn warped_product_curvature_matches_closed_form() {
        // g = diag(1, 1, phi(x)^2) with phi = 1 + 0.3 cos(2 pi x):
        // R = -2 phi'' / phi.
        let w = 2.0 * std::f64::consts::PI;
        let phi = |x: f64| 1.0 + 0.3 * (w * x).cos();
        let grid = PeriodicGrid::new(32).unwrap();
        let samples: Vec<Matrix3<f64>> = (0..grid.vertex_count())
            .map(|v| {
                let p = phi(grid.position(v)[0]);
                Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, p * p))
            })
            .collect();
        let field = MetricField::from_samples(grid, samples).unwrap();
        let curv = scalar_curvature(&field);
        let grid = field.grid();
        let fixtures = [(0usize, 18.220808125088045), (16, -33.8386436608778)];
        for (ix, want) in fixtures {
            let v = grid.index(ix, 5, 9);
            assert!(
                (curv.r[v] - want).abs() < 0.5,
                "R = {} vs {}",
                curv.r[v],
                want
            );
        }
    }

    #[test]
    fn flat_curvature_is_zero() {
        let grid = PeriodicGrid::new(8).unwrap();
        let field = MetricField::build(
            grid,
            &MetricSpec::Constant {
                matrix: [2.0, 0.4, 0.1, 0.4, 1.5, 0.0, 0.1, 0.0, 1.0],
            },
        )
        .unwrap();
        let curv = scalar_curvature(&field);
        for v in 0..field.grid().vertex_count() {
            assert!(curv.r[v].abs() < 1e-12);
            assert_eq!(curv.r_minus[v], 0.0);
        }
    }

    #[test]
    fn curvature_error_is_second_order() {
        // Halving h must cut the sup error by about four.
        let sup_err = |n: usize| {
            let field = conformal_field(n, 0.1);
            let grid = *field.grid();
            let curv = scalar_curvature(&field);
            (0..grid.vertex_count())
                .map(|v| (curv.r[v] - conformal_oracle(0.1, grid.position(v)[0])).abs())
                .fold(0.0f64, f64::max)
        };
        let ratio = sup_err(16) / sup_err(32);
        assert!(
            (crate::tolerances::REFINEMENT_RATIO_LO..=crate::tolerances::REFINEMENT_RATIO_HI)
                .contains(&ratio),
            "refinement ratio {ratio}"
        );
    }

    #[test]
    fn conformal_christoffel_matches_symbolic_form() {
        // For g = exp(2f) delta the nonzero symbols are
        // gamma^k_ij = d_j f delta_ik + d_i f delta_jk - d_k f delta_ij.
        let a = 0.1;
        let field = conformal_field(32, a);
        let grid = *field.grid();
        let chris = ChristoffelField::new(&field);
        let w = 2.0 * std::f64::consts::PI;
        for &ix in &[0usize, 5, 11, 20] {
            let v = grid.index(ix, 3, 8);
            let x = grid.position(v)[0];
            let df = [-a * w * (w * x).sin(), 0.0, 0.0];
            for k in 0..3 {
                for i in 0..3 {
                    for j in 0..3 {
                        let mut want = 0.0;
                        if i == k {
                            want += df[j];
                        }
                        if j == k {
                            want += df[i];
                        }
                        if i == j {
                            want -= df[k];
                        }
                        let got = chris.symbol(v, k)[(i, j)];
                        assert!(
                            (got - want).abs() < 0.01,
                            "gamma^{k}_{i}{j}({x}) = {got} vs {want}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn hessian_of_exact_gradient_on_flat_metric() {
        // u = sin(2 pi x)/(2 pi), coefficients kappa = (cos(2 pi x), 0, 0);
        // the flat Hessian is diag entry (0,0) = -2 pi sin(2 pi x).
        let grid = PeriodicGrid::new(32).unwrap();
        let field = MetricField::build(grid, &MetricSpec::flat()).unwrap();
        let grid = *field.grid();
        let w = 2.0 * std::f64::consts::PI;
        let coeff: Vec<Vector3<f64>> = (0..grid.vertex_count())
            .map(|v| Vector3::new((w * grid.position(v)[0]).cos(), 0.0, 0.0))
            .collect();
        let chris = ChristoffelField::new(&field);
        let hess = hessian(&field, &chris, &coeff).unwrap();
        for v in (0..grid.vertex_count()).step_by(97) {
            let x = grid.position(v)[0];
            for i in 0..3 {
                for j in 0..3 {
                    let want = if (i, j) == (0, 0) { -w * (w * x).sin() } else { 0.0 };
                    assert!(
                        (hess[v][(i, j)] - want).abs() < 0.05,
                        "hessian {i}{j} at {x}: {} vs {want}",
                        hess[v][(i, j)]
                    );
                }
            }
        }
    }

    #[test]
    fn tensor_norm_matches_frobenius_on_flat() {
        let t = Matrix3::new(1.0, 2.0, 0.0, 0.5, -1.0, 0.0, 0.0, 3.0, 2.0);
        let id = Matrix3::identity();
        let frob_sq: f64 = t.iter().map(|x| x * x).sum();
        assert!((two_tensor_norm_sq(&id, &t) - frob_sq).abs() < 1e-14);
    }
}
