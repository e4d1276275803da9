//! Harmonic representatives of first and second cohomology on the metric
//! torus.
//!
//! A first-cohomology class with integer periods `nu` is represented as
//! `nu + d phi`, where the scalar potential `phi` minimizes the weighted
//! energy of the vertex-averaged coefficients
//! `kappa(v) = nu + (grad phi)(v)` (central differences). The minimizer
//! solves a symmetric positive-semidefinite system by preconditioned
//! conjugate gradients.
//!
//! Second cohomology is discretized independently on face circulations, so
//! the determinant identity between the two Gram matrices is a genuine
//! numerical check rather than an algebraic restatement of the first solve.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{MetricField, PeriodicGrid};
use crate::tolerances::{SOLVER_MAX_ITER_FACTOR, SOLVER_TOL};

/// An integer first-cohomology class: periods over the three coordinate
/// circles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CohomologyClass(pub [i64; 3]);

impl CohomologyClass {
    fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.0[0] as f64, self.0[1] as f64, self.0[2] as f64)
    }
}

/// Iterative-solver controls.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Relative residual target `|A x - b| <= tol * |b|`.
    pub tol: f64,
    /// Iteration cap; `None` defaults to `50 * n^3`.
    pub max_iter: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: SOLVER_TOL,
            max_iter: None,
        }
    }
}

impl SolverOptions {
    fn cap(&self, grid: &PeriodicGrid) -> usize {
        self.max_iter
            .unwrap_or(SOLVER_MAX_ITER_FACTOR * grid.vertex_count())
    }
}

/// A harmonic representative `class + d potential` of a real
/// first-cohomology class.
#[derive(Debug, Clone)]
pub struct HarmonicOneForm {
    /// Periods of the class over the coordinate circles.
    pub class: Vector3<f64>,
    /// Scalar potential per vertex, gauge-fixed to zero mean on each
    /// component of the kernel of the central-difference gradient.
    pub potential: Vec<f64>,
    /// Vertex-averaged coefficients `kappa(v) = class + (grad potential)(v)`.
    pub coeff: Vec<Vector3<f64>>,
    /// Final relative residual of the solve.
    pub residual: f64,
    /// Conjugate-gradient iterations spent.
    pub iterations: usize,
}

impl HarmonicOneForm {
    /// Value of the one-form on the oriented edge from `v` one step along
    /// `axis`: the constant part plus the potential difference. These edge
    /// values are exactly closed (zero circulation around every plaquette).
    pub fn edge_value(&self, grid: &PeriodicGrid, v: usize, axis: usize) -> f64 {
        self.class[axis] * grid.h() + self.potential[grid.shift(v, axis, 1)] - self.potential[v]
    }
}

/// Statistics of one conjugate-gradient solve.
#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Gram matrix of the harmonic face-class representatives, in the basis
/// dual to the coordinate one-form classes, plus per-class solve stats.
#[derive(Debug, Clone)]
pub struct DualGram {
    pub gram: Matrix3<f64>,
    pub stats: [SolveStats; 3],
}

/// Periodic up/down neighbor tables for the hot solver loops.
struct Stencil {
    up: [Vec<usize>; 3],
    dn: [Vec<usize>; 3],
}

impl Stencil {
    fn new(grid: &PeriodicGrid) -> Self {
        let count = grid.vertex_count();
        let mut up: [Vec<usize>; 3] = [
            Vec::with_capacity(count),
            Vec::with_capacity(count),
            Vec::with_capacity(count),
        ];
        let mut dn = up.clone();
        for v in 0..count {
            for axis in 0..3 {
                up[axis].push(grid.shift(v, axis, 1));
                dn[axis].push(grid.shift(v, axis, -1));
            }
        }
        Stencil { up, dn }
    }
}

/// Connected components of the kernel of the central-difference gradient.
///
/// On an even grid a function is annihilated by central differences exactly
/// when it is constant on each of the eight vertex-parity classes; on an odd
/// grid only global constants remain. The solver projects those modes out of
/// every preconditioned residual and out of the final potential (the natural
/// zero-mean gauge).
struct ParityProjector {
    class_of: Vec<u8>,
    class_count: usize,
    class_sizes: Vec<f64>,
}

impl ParityProjector {
    fn new(grid: &PeriodicGrid) -> Self {
        let even = grid.n().is_multiple_of(2);
        let class_count = if even { 8 } else { 1 };
        let mut class_of = Vec::with_capacity(grid.vertex_count());
        for v in 0..grid.vertex_count() {
            let [i, j, k] = grid.coords(v);
            let c = if even {
                ((i & 1) | ((j & 1) << 1) | ((k & 1) << 2)) as u8
            } else {
                0
            };
            class_of.push(c);
        }
        let mut class_sizes = vec![0.0; class_count];
        for &c in &class_of {
            class_sizes[c as usize] += 1.0;
        }
        ParityProjector {
            class_of,
            class_count,
            class_sizes,
        }
    }

    fn project(&self, values: &mut [f64]) {
        let mut sums = vec![0.0; self.class_count];
        for (v, &x) in values.iter().enumerate() {
            sums[self.class_of[v] as usize] += x;
        }
        for (s, n) in sums.iter_mut().zip(&self.class_sizes) {
            *s /= n;
        }
        for (v, x) in values.iter_mut().enumerate() {
            *x -= sums[self.class_of[v] as usize];
        }
    }
}

/// Shared state for the scalar-potential solves.
struct OneFormSystem<'a> {
    field: &'a MetricField,
    stencil: Stencil,
    /// Energy weight per vertex: `sqrt(det G) G^{-1} h^3`.
    w: Vec<Matrix3<f64>>,
    diag: Vec<f64>,
    projector: ParityProjector,
}

impl<'a> OneFormSystem<'a> {
    fn new(field: &'a MetricField) -> Self {
        let grid = field.grid();
        let h3 = grid.h().powi(3);
        let stencil = Stencil::new(grid);
        let w: Vec<Matrix3<f64>> = (0..grid.vertex_count())
            .map(|v| field.ginv(v) * (field.sqrt_det(v) * h3))
            .collect();
        // Jacobi diagonal of grad^t W grad: each axis contributes the
        // diagonal weight of the two stencil neighbors over (2h)^2.
        let inv_4h2 = 1.0 / (4.0 * grid.h() * grid.h());
        let mut diag = Vec::with_capacity(grid.vertex_count());
        for v in 0..grid.vertex_count() {
            let mut d = 0.0;
            for axis in 0..3 {
                d += (w[stencil.up[axis][v]][(axis, axis)]
                    + w[stencil.dn[axis][v]][(axis, axis)])
                    * inv_4h2;
            }
            diag.push(d);
        }
        OneFormSystem {
            field,
            stencil,
            w,
            diag,
            projector: ParityProjector::new(grid),
        }
    }

    fn grid(&self) -> &PeriodicGrid {
        self.field.grid()
    }

    /// Central-difference gradient scaled by the energy weight:
    /// `flux(v) = W(v) (class + grad phi)(v)` with `class = 0`.
    fn weighted_gradient(&self, phi: &[f64], flux: &mut [Vector3<f64>]) {
        let inv_2h = 0.5 / self.grid().h();
        for v in 0..phi.len() {
            let g = Vector3::new(
                (phi[self.stencil.up[0][v]] - phi[self.stencil.dn[0][v]]) * inv_2h,
                (phi[self.stencil.up[1][v]] - phi[self.stencil.dn[1][v]]) * inv_2h,
                (phi[self.stencil.up[2][v]] - phi[self.stencil.dn[2][v]]) * inv_2h,
            );
            flux[v] = self.w[v] * g;
        }
    }

    /// Adjoint of the central-difference gradient applied to a flux field.
    fn divergence(&self, flux: &[Vector3<f64>], out: &mut [f64]) {
        let inv_2h = 0.5 / self.grid().h();
        for v in 0..out.len() {
            let mut acc = 0.0;
            for axis in 0..3 {
                acc += flux[self.stencil.dn[axis][v]][axis] - flux[self.stencil.up[axis][v]][axis];
            }
            out[v] = acc * inv_2h;
        }
    }

    fn apply(&self, phi: &[f64], flux: &mut [Vector3<f64>], out: &mut [f64]) {
        self.weighted_gradient(phi, flux);
        self.divergence(flux, out);
    }

    /// Right-hand side for a class vector: `-grad^t (W class)`.
    fn rhs(&self, class: Vector3<f64>, flux: &mut [Vector3<f64>], out: &mut [f64]) {
        for (v, slot) in flux.iter_mut().enumerate() {
            *slot = self.w[v] * class;
        }
        self.divergence(flux, out);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Computes the harmonic representative of an integer class.
pub fn harmonic_representative(
    field: &MetricField,
    class: CohomologyClass,
    opts: &SolverOptions,
) -> Result<HarmonicOneForm> {
    let system = OneFormSystem::new(field);
    solve_one_form(&system, class.as_vector(), opts)
}

/// Computes harmonic representatives of the three coordinate classes,
/// sharing the assembled system between solves.
pub fn coordinate_representatives(
    field: &MetricField,
    opts: &SolverOptions,
) -> Result<[HarmonicOneForm; 3]> {
    let system = OneFormSystem::new(field);
    let mut out = Vec::with_capacity(3);
    for axis in 0..3 {
        let mut class = Vector3::zeros();
        class[axis] = 1.0;
        out.push(solve_one_form(&system, class, opts)?);
    }
    Ok(out.try_into().expect("exactly three solves"))
}

fn solve_one_form(
    system: &OneFormSystem,
    class: Vector3<f64>,
    opts: &SolverOptions,
) -> Result<HarmonicOneForm> {
    let grid = system.grid();
    let count = grid.vertex_count();
    let cap = opts.cap(grid);

    let mut flux = vec![Vector3::zeros(); count];
    let mut b = vec![0.0; count];
    system.rhs(class, &mut flux, &mut b);
    b.iter_mut().for_each(|x| *x = -*x);

    let mut x = vec![0.0; count];
    let mut r = b.clone();
    system.projector.project(&mut r);
    let norm_b = norm(&b);
    let mut iterations = 0;

    if norm_b > 0.0 {
        let mut z: Vec<f64> = r.iter().zip(&system.diag).map(|(ri, d)| ri / d).collect();
        system.projector.project(&mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; count];
        while norm(&r) > opts.tol * norm_b {
            if iterations >= cap {
                return Err(Error::Solver {
                    iterations,
                    residual: norm(&r) / norm_b,
                });
            }
            system.apply(&p, &mut flux, &mut ap);
            let alpha = rz / dot(&p, &ap);
            for v in 0..count {
                x[v] += alpha * p[v];
                r[v] -= alpha * ap[v];
            }
            for v in 0..count {
                z[v] = r[v] / system.diag[v];
            }
            system.projector.project(&mut z);
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            for v in 0..count {
                p[v] = z[v] + beta * p[v];
            }
            rz = rz_next;
            iterations += 1;
        }
    }
    system.projector.project(&mut x);

    let inv_2h = 0.5 / grid.h();
    let coeff: Vec<Vector3<f64>> = (0..count)
        .map(|v| {
            class
                + Vector3::new(
                    (x[system.stencil.up[0][v]] - x[system.stencil.dn[0][v]]) * inv_2h,
                    (x[system.stencil.up[1][v]] - x[system.stencil.dn[1][v]]) * inv_2h,
                    (x[system.stencil.up[2][v]] - x[system.stencil.dn[2][v]]) * inv_2h,
                )
        })
        .collect();
    let residual = if norm_b > 0.0 { norm(&r) / norm_b } else { 0.0 };
    Ok(HarmonicOneForm {
        class,
        potential: x,
        coeff,
        residual,
        iterations,
    })
}

/// Recomputes the relative defect of the weak coclosedness equation for a
/// form from its coefficients alone: `|grad^t W kappa| / |grad^t W class|`.
pub fn verify_residual(field: &MetricField, form: &HarmonicOneForm) -> Result<f64> {
    let grid = field.grid();
    if form.coeff.len() != grid.vertex_count() {
        return Err(Error::Shape {
            left: form.coeff.len(),
            right: grid.vertex_count(),
        });
    }
    let system = OneFormSystem::new(field);
    let count = grid.vertex_count();
    let mut flux: Vec<Vector3<f64>> = (0..count).map(|v| system.w[v] * form.coeff[v]).collect();
    let mut r = vec![0.0; count];
    system.divergence(&flux, &mut r);
    let mut b = vec![0.0; count];
    system.rhs(form.class, &mut flux, &mut b);
    let norm_b = norm(&b);
    Ok(if norm_b > 0.0 {
        norm(&r) / norm_b
    } else {
        norm(&r)
    })
}

/// L2 Gram matrix of three one-forms from their vertex coefficients:
/// `Q[i][j] = sum_v kappa_i^t G^{-1} kappa_j sqrt(det G) h^3`.
pub fn gram_matrix(field: &MetricField, forms: &[HarmonicOneForm]) -> Result<Matrix3<f64>> {
    if forms.len() != 3 {
        return Err(Error::Shape {
            left: forms.len(),
            right: 3,
        });
    }
    let grid = field.grid();
    for f in forms {
        if f.coeff.len() != grid.vertex_count() {
            return Err(Error::Shape {
                left: f.coeff.len(),
                right: grid.vertex_count(),
            });
        }
    }
    let h3 = grid.h().powi(3);
    let mut q = Matrix3::zeros();
    for i in 0..3 {
        for j in i..3 {
            let mut acc = 0.0;
            for v in 0..grid.vertex_count() {
                let gi = field.ginv(v) * forms[j].coeff[v];
                acc += forms[i].coeff[v].dot(&gi) * field.sqrt_det(v) * h3;
            }
            q[(i, j)] = acc;
            q[(j, i)] = acc;
        }
    }
    Ok(q)
}

/// Linear combination of one-forms with real weights; the combined residual
/// is recomputed against the combined class rather than propagated.
pub fn combine_forms(
    field: &MetricField,
    forms: &[HarmonicOneForm],
    weights: &[f64],
) -> Result<HarmonicOneForm> {
    if forms.is_empty() || forms.len() != weights.len() {
        return Err(Error::Shape {
            left: forms.len(),
            right: weights.len(),
        });
    }
    let count = forms[0].potential.len();
    for f in forms {
        if f.potential.len() != count || f.coeff.len() != count {
            return Err(Error::Shape {
                left: f.potential.len(),
                right: count,
            });
        }
    }
    let mut class = Vector3::zeros();
    let mut potential = vec![0.0; count];
    let mut coeff = vec![Vector3::zeros(); count];
    let mut iterations = 0;
    for (f, &wt) in forms.iter().zip(weights) {
        class += f.class * wt;
        for v in 0..count {
            potential[v] += wt * f.potential[v];
            coeff[v] += f.coeff[v] * wt;
        }
        iterations = iterations.max(f.iterations);
    }
    let mut combined = HarmonicOneForm {
        class,
        potential,
        coeff,
        residual: 0.0,
        iterations,
    };
    combined.residual = verify_residual(field, &combined)?;
    Ok(combined)
}

/// Cyclic complement of an axis: face-normal `p` pairs with in-plane axes
/// `(q, r)`.
#[inline]
fn plane(p: usize) -> (usize, usize) {
    ((p + 1) % 3, (p + 2) % 3)
}

/// Shared state for the face-circulation (second-cohomology) solves.
struct TwoFormSystem<'a> {
    field: &'a MetricField,
    stencil: Stencil,
    /// Energy weight per vertex on normal-indexed coefficients:
    /// `G / sqrt(det G) h^3`.
    w2: Vec<Matrix3<f64>>,
}

impl<'a> TwoFormSystem<'a> {
    fn new(field: &'a MetricField) -> Self {
        let grid = field.grid();
        let h3 = grid.h().powi(3);
        let w2 = (0..grid.vertex_count())
            .map(|v| field.g(v) * (h3 / field.sqrt_det(v)))
            .collect();
        TwoFormSystem {
            field,
            stencil: Stencil::new(grid),
            w2,
        }
    }

    fn grid(&self) -> &PeriodicGrid {
        self.field.grid()
    }

    /// Face circulation of an edge field: for the face of `v` with normal
    /// `p`, the signed sum of the four boundary edge values.
    fn circulation(&self, beta: &[Vector3<f64>], faces: &mut [Vector3<f64>]) {
        for v in 0..beta.len() {
            let mut f = Vector3::zeros();
            for p in 0..3 {
                let (q, r) = plane(p);
                f[p] = beta[v][q] + beta[self.stencil.up[q][v]][r]
                    - beta[self.stencil.up[r][v]][q]
                    - beta[v][r];
            }
            faces[v] = f;
        }
    }

    /// Vertex-averaged face coefficients: mean over the four plane-`p` faces
    /// incident to each vertex, scaled to a density by `1/h^2`.
    fn face_average(&self, faces: &[Vector3<f64>], sigma: &mut [Vector3<f64>]) {
        let inv_4h2 = 0.25 / (self.grid().h() * self.grid().h());
        for v in 0..faces.len() {
            let mut s = Vector3::zeros();
            for p in 0..3 {
                let (q, r) = plane(p);
                let vq = self.stencil.dn[q][v];
                let vr = self.stencil.dn[r][v];
                let vqr = self.stencil.dn[r][vq];
                s[p] = (faces[v][p] + faces[vq][p] + faces[vr][p] + faces[vqr][p]) * inv_4h2;
            }
            sigma[v] = s;
        }
    }

    /// Adjoint of `face_average`.
    fn face_average_adjoint(&self, sigma: &[Vector3<f64>], faces: &mut [Vector3<f64>]) {
        let inv_4h2 = 0.25 / (self.grid().h() * self.grid().h());
        for v in 0..sigma.len() {
            let mut f = Vector3::zeros();
            for p in 0..3 {
                let (q, r) = plane(p);
                let vq = self.stencil.up[q][v];
                let vr = self.stencil.up[r][v];
                let vqr = self.stencil.up[r][vq];
                f[p] = (sigma[v][p] + sigma[vq][p] + sigma[vr][p] + sigma[vqr][p]) * inv_4h2;
            }
            faces[v] = f;
        }
    }

    /// Adjoint of `circulation`.
    fn circulation_adjoint(&self, faces: &[Vector3<f64>], beta: &mut [Vector3<f64>]) {
        beta.iter_mut().for_each(|b| *b = Vector3::zeros());
        for v in 0..faces.len() {
            for p in 0..3 {
                let (q, r) = plane(p);
                beta[v][q] += faces[v][p] - faces[self.stencil.dn[r][v]][p];
                beta[v][r] += faces[self.stencil.dn[q][v]][p] - faces[v][p];
            }
        }
    }

    fn apply(
        &self,
        beta: &[Vector3<f64>],
        faces: &mut [Vector3<f64>],
        sigma: &mut [Vector3<f64>],
        out: &mut [Vector3<f64>],
    ) {
        self.circulation(beta, faces);
        self.face_average(faces, sigma);
        for (v, s) in sigma.iter_mut().enumerate() {
            *s = self.w2[v] * *s;
        }
        self.face_average_adjoint(sigma, faces);
        self.circulation_adjoint(faces, out);
    }
}

fn dot_v(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

/// Gram matrix of the harmonic face classes dual to the coordinate one-form
/// classes, by an independent conjugate-gradient solve on edge circulations.
pub fn dual_gram(field: &MetricField, opts: &SolverOptions) -> Result<DualGram> {
    let system = TwoFormSystem::new(field);
    let grid = system.grid();
    let count = grid.vertex_count();
    let cap = opts.cap(grid);

    let mut faces = vec![Vector3::zeros(); count];
    let mut sigma = vec![Vector3::zeros(); count];
    let mut coeffs: Vec<Vec<Vector3<f64>>> = Vec::with_capacity(3);
    let mut stats = Vec::with_capacity(3);

    for p in 0..3 {
        let mut mu = Vector3::zeros();
        mu[p] = 1.0;

        // b = -d^t avg^t (W2 mu)
        for (v, s) in sigma.iter_mut().enumerate() {
            *s = system.w2[v] * mu;
        }
        system.face_average_adjoint(&sigma, &mut faces);
        let mut b = vec![Vector3::zeros(); count];
        system.circulation_adjoint(&faces, &mut b);
        b.iter_mut().for_each(|x| *x = -*x);

        let mut x = vec![Vector3::zeros(); count];
        let mut r = b.clone();
        let norm_b = dot_v(&b, &b).sqrt();
        let mut iterations = 0;
        if norm_b > 0.0 {
            let mut pdir = r.clone();
            let mut rr = dot_v(&r, &r);
            let mut ap = vec![Vector3::zeros(); count];
            while rr.sqrt() > opts.tol * norm_b {
                if iterations >= cap {
                    return Err(Error::Solver {
                        iterations,
                        residual: rr.sqrt() / norm_b,
                    });
                }
                system.apply(&pdir, &mut faces, &mut sigma, &mut ap);
                let alpha = rr / dot_v(&pdir, &ap);
                for v in 0..count {
                    x[v] += pdir[v] * alpha;
                    r[v] -= ap[v] * alpha;
                }
                let rr_next = dot_v(&r, &r);
                let beta = rr_next / rr;
                for v in 0..count {
                    pdir[v] = r[v] + pdir[v] * beta;
                }
                rr = rr_next;
                iterations += 1;
            }
        }
        let residual = if norm_b > 0.0 {
            dot_v(&r, &r).sqrt() / norm_b
        } else {
            0.0
        };
        stats.push(SolveStats {
            iterations,
            residual,
        });

        system.circulation(&x, &mut faces);
        system.face_average(&faces, &mut sigma);
        let coeff: Vec<Vector3<f64>> = sigma.iter().map(|s| mu + s).collect();
        coeffs.push(coeff);
    }

    let mut gram = Matrix3::zeros();
    for i in 0..3 {
        for j in i..3 {
            let mut acc = 0.0;
            for v in 0..count {
                acc += coeffs[i][v].dot(&(system.w2[v] * coeffs[j][v]));
            }
            gram[(i, j)] = acc;
            gram[(j, i)] = acc;
        }
    }
    Ok(DualGram {
        gram,
        stats: stats.try_into().expect("exactly three solves"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{FourierTerm, MetricSpec};

    fn build(n: usize, spec: &MetricSpec) -> MetricField {
        MetricField::build(PeriodicGrid::new(n).unwrap(), spec).unwrap()
    }

    fn wavy_spec() -> MetricSpec {
        MetricSpec::Conformal {
            base: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            terms: vec![
                FourierTerm {
                    amplitude: 0.1,
                    wave: [1, 0, 0],
                    phase: 0.0,
                },
                FourierTerm {
                    amplitude: 0.07,
                    wave: [0, 1, 1],
                    phase: 0.0,
                },
            ],
        }
    }

    #[test]
    fn constant_metric_needs_no_correction() {
        let field = build(8, &MetricSpec::Constant {
            matrix: [1.0, 0.0, 0.0, 0.0, 4.0, 0.0, 0.0, 0.0, 9.0],
        });
        let form =
            harmonic_representative(&field, CohomologyClass([0, 1, 0]), &SolverOptions::default())
                .unwrap();
        assert_eq!(form.iterations, 0);
        assert_eq!(form.residual, 0.0);
        assert!(form.potential.iter().all(|&x| x == 0.0));
        assert!(form
            .coeff
            .iter()
            .all(|k| (k - Vector3::new(0.0, 1.0, 0.0)).norm() == 0.0));
    }

    #[test]
    fn constant_gram_is_scaled_inverse_metric() {
        // For a constant metric the Gram matrix is sqrt(det G) G^{-1}.
        let field = build(8, &MetricSpec::Constant {
            matrix: [1.0, 0.0, 0.0, 0.0, 4.0, 0.0, 0.0, 0.0, 9.0],
        });
        let forms = coordinate_representatives(&field, &SolverOptions::default()).unwrap();
        let q = gram_matrix(&field, &forms).unwrap();
        let expect = Matrix3::from_diagonal(&Vector3::new(6.0, 1.5, 6.0 / 9.0));
        assert!((q - expect).abs().max() < 1e-12);
    }

    #[test]
    fn constant_dual_gram_inverts_primal() {
        let field = build(8, &MetricSpec::Constant {
            matrix: [2.0, 0.3, 0.1, 0.3, 1.5, 0.0, 0.1, 0.0, 1.0],
        });
        let forms = coordinate_representatives(&field, &SolverOptions::default()).unwrap();
        let q1 = gram_matrix(&field, &forms).unwrap();
        let dual = dual_gram(&field, &SolverOptions::default()).unwrap();
        assert!((q1 * dual.gram - Matrix3::identity()).abs().max() < 1e-10);
    }

    #[test]
    fn wavy_metric_solve_converges_fast_and_certifies() {
        let field = build(16, &wavy_spec());
        let forms = coordinate_representatives(&field, &SolverOptions::default()).unwrap();
        for form in &forms {
            assert!(form.iterations > 0 && form.iterations < 200);
            assert!(form.residual <= SOLVER_TOL);
            let check = verify_residual(&field, form).unwrap();
            assert!(check < 10.0 * SOLVER_TOL, "recheck {check}");
        }
    }

    #[test]
    fn determinant_identity_between_primal_and_dual() {
        let field = build(16, &wavy_spec());
        let forms = coordinate_representatives(&field, &SolverOptions::default()).unwrap();
        let q1 = gram_matrix(&field, &forms).unwrap();
        let dual = dual_gram(&field, &SolverOptions::default()).unwrap();
        let prod = q1.determinant() * dual.gram.determinant();
        assert!(
            (prod - 1.0).abs() < 1e-8,
            "det product defect {}",
            prod - 1.0
        );
        for s in dual.stats {
            assert!(s.iterations < 400);
        }
    }

    #[test]
    fn energy_of_representative_is_minimal_in_class() {
        // The representative can only lower the energy of the uncorrected
        // constant form, and adding any multiple of a gradient direction
        // cannot go below it.
        let field = build(12, &wavy_spec());
        let grid = field.grid();
        let h3 = grid.h().powi(3);
        let energy = |coeff: &[Vector3<f64>]| -> f64 {
            (0..grid.vertex_count())
                .map(|v| coeff[v].dot(&(field.ginv(v) * coeff[v])) * field.sqrt_det(v) * h3)
                .sum()
        };
        let form =
            harmonic_representative(&field, CohomologyClass([1, 0, 0]), &SolverOptions::default())
                .unwrap();
        let raw = vec![Vector3::new(1.0, 0.0, 0.0); grid.vertex_count()];
        assert!(energy(&form.coeff) <= energy(&raw) + 1e-14);

        // Perturb along the gradient of a random-ish smooth bump.
        let inv_2h = 0.5 / grid.h();
        let bump: Vec<f64> = (0..grid.vertex_count())
            .map(|v| {
                let [x, y, z] = grid.position(v);
                (2.0 * std::f64::consts::PI * (x + 2.0 * y - z)).sin()
            })
            .collect();
        for t in [-0.1, 0.05, 0.2] {
            let perturbed: Vec<Vector3<f64>> = (0..grid.vertex_count())
                .map(|v| {
                    let mut g = Vector3::zeros();
                    for axis in 0..3 {
                        let up = grid.shift(v, axis, 1);
                        let dn = grid.shift(v, axis, -1);
                        g[axis] = (bump[up] - bump[dn]) * inv_2h;
                    }
                    form.coeff[v] + g * t
                })
                .collect();
            assert!(energy(&form.coeff) <= energy(&perturbed) + 1e-12);
        }
    }

    #[test]
    fn edge_values_are_exactly_closed() {
        let field = build(12, &wavy_spec());
        let grid = field.grid();
        let form =
            harmonic_representative(&field, CohomologyClass([2, -1, 0]), &SolverOptions::default())
                .unwrap();
        // Circulation around every plaquette must vanish to roundoff.
        for v in 0..grid.vertex_count() {
            for p in 0..3 {
                let (q, r) = ((p + 1) % 3, (p + 2) % 3);
                let vq = grid.shift(v, q, 1);
                let circ = form.edge_value(grid, v, q) + form.edge_value(grid, vq, r)
                    - form.edge_value(grid, grid.shift(v, r, 1), q)
                    - form.edge_value(grid, v, r);
                assert!(circ.abs() < 1e-12, "plaquette defect {circ}");
            }
        }
        // Periods over the coordinate circles recover the class.
        let mut period = 0.0;
        let mut v = 0;
        for _ in 0..grid.n() {
            period += form.edge_value(grid, v, 0);
            v = grid.shift(v, 0, 1);
        }
        assert!((period - 2.0).abs() < 1e-12);
    }

    #[test]
    fn combine_matches_direct_solve() {
        let field = build(12, &wavy_spec());
        let forms = coordinate_representatives(&field, &SolverOptions::default()).unwrap();
        let combined = combine_forms(&field, &forms, &[2.0, -1.0, 3.0]).unwrap();
        let direct = harmonic_representative(
            &field,
            CohomologyClass([2, -1, 3]),
            &SolverOptions::default(),
        )
        .unwrap();
        let err = combined
            .coeff
            .iter()
            .zip(&direct.coeff)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        assert!(err < 1e-7, "combination drift {err}");
        assert!(combined.residual < 1e-8);
    }

    #[test]
    fn solver_cap_reports_stall() {
        let field = build(8, &wavy_spec());
        let res = harmonic_representative(
            &field,
            CohomologyClass([1, 0, 0]),
            &SolverOptions {
                tol: 1e-14,
                max_iter: Some(2),
            },
        );
        assert!(matches!(res, Err(Error::Solver { .. })));
    }

    #[test]
    fn odd_grid_solve_works() {
        let field = build(9, &wavy_spec());
        let form =
            harmonic_representative(&field, CohomologyClass([1, 0, 0]), &SolverOptions::default())
                .unwrap();
        assert!(form.residual <= SOLVER_TOL);
        let mean: f64 = form.potential.iter().sum::<f64>() / form.potential.len() as f64;
        assert!(mean.abs() < 1e-12);
    }
}
