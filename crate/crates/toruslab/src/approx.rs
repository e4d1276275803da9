//! Constant-matrix approximation of the pointwise Gram field of a harmonic
//! torus map, level-set region extraction, region diagnostics, injectivity
//! sampling, and flat-metric recovery.
//!
//! The chain of operations starts from `pointwise_gram`, which turns a map
//! into a field of 3x3 Gram matrices; `constant_approx` compresses that field
//! into one averaged matrix with a closeness scale `tau`; `level_sets` and
//! `extract_omega` isolate a region where the field stays `tau`-close to the
//! average; the remaining operations measure what that region certifies.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harmap::{stern_report, HarmonicTorusMap, SternReport};
use crate::mesh::{lp_norm, CellSet, MetricField, PeriodicGrid};
use crate::report::Verdict;
use crate::tolerances::{
    DET_ESTIMATE_C3, LEVEL_SAMPLE_COUNT, LEVEL_THRESHOLD_FLOOR, RECOVERY_DET_FLOOR,
    TAU_HYPOTHESIS_MAX, VERDICT_EQUALITY_PAD,
};

/// Vertex-sampled field of Gram matrices `g[j][k](v) = <du^j, du^k>_g(v)`.
#[derive(Debug, Clone)]
pub struct PointwiseGramField {
    /// One symmetric positive-semidefinite matrix per vertex.
    pub values: Vec<Matrix3<f64>>,
}

/// Coefficient matrix of the map differential at a vertex: column `j` holds
/// the vertex-averaged coefficients of the `j`-th component differential.
fn coeff_matrix(map: &HarmonicTorusMap, v: usize) -> Matrix3<f64> {
    Matrix3::from_columns(&[
        map.components[0].coeff[v],
        map.components[1].coeff[v],
        map.components[2].coeff[v],
    ])
}

/// Pointwise Gram matrices of the component differentials,
/// `g[j][k](v) = kappa^j(v)^T G^{-1}(v) kappa^k(v)`.
pub fn pointwise_gram(
    map: &HarmonicTorusMap,
    field: &MetricField,
) -> Result<PointwiseGramField> {
    let grid = field.grid();
    let nv = grid.vertex_count();
    for form in &map.components {
        if form.coeff.len() != nv {
            return Err(Error::Shape {
                left: form.coeff.len(),
                right: nv,
            });
        }
    }
    let values = (0..nv)
        .map(|v| {
            let m = coeff_matrix(map, v);
            m.transpose() * field.ginv(v) * m
        })
        .collect();
    Ok(PointwiseGramField { values })
}

/// Averaged Gram matrix with its closeness scale and the bounds it satisfies.
#[derive(Debug, Clone)]
pub struct ConstantApprox {
    /// Volume-weighted mean of the pointwise Gram field.
    pub a: Matrix3<f64>,
    /// Isoperimetric lower bound supplied by the caller.
    pub lambda: f64,
    /// Total volume used for the averages (vertex quadrature).
    pub volume: f64,
    /// Largest of the nine entrywise L1 deviations from the mean.
    pub l1_deficit: Matrix3<f64>,
    /// The mixed-norm supremum that drives every bound: the largest value of
    /// `|du^j|_L3^(1/2) * |du^k|_L3 * deficit_j^(1/2)` over ordered pairs.
    pub sup_term: f64,
    /// Closeness scale `tau = sqrt(36 / (volume * lambda) * sup_term)`.
    pub tau: f64,
    /// Whether `tau` is small enough for the extraction guarantees to apply.
    pub tau_hypothesis_ok: bool,
    /// Curvature-deficit diagnostics the scale was derived from.
    pub stern: SternReport,
    pub verdicts: Vec<Verdict>,
}

/// Volume-weighted mean of the Gram field plus the closeness scale `tau`,
/// with verdicts for the averaged-matrix bounds.
pub fn constant_approx(
    gram: &PointwiseGramField,
    field: &MetricField,
    lambda: f64,
    map: &HarmonicTorusMap,
) -> Result<ConstantApprox> {
    if !(lambda > 0.0) {
        return Err(Error::Parameter {
            name: "lambda",
            value: lambda,
            reason: "isoperimetric lower bound must be positive",
        });
    }
    let grid = field.grid();
    let nv = grid.vertex_count();
    if gram.values.len() != nv {
        return Err(Error::Shape {
            left: gram.values.len(),
            right: nv,
        });
    }
    let h3 = grid.h().powi(3);

    // Volume-weighted mean over the vertex quadrature. The same weights
    // normalize the L1 deviations below, so an exactly constant field has a
    // deficit at the rounding scale.
    let mut volume = 0.0;
    let mut a = Matrix3::zeros();
    for v in 0..nv {
        let w = field.sqrt_det(v) * h3;
        volume += w;
        a += gram.values[v] * w;
    }
    a /= volume;

    let mut l1_deficit = Matrix3::<f64>::zeros();
    for v in 0..nv {
        let w = field.sqrt_det(v) * h3;
        let d = gram.values[v] - a;
        for r in 0..3 {
            for c in 0..3 {
                l1_deficit[(r, c)] += d[(r, c)].abs() * w;
            }
        }
    }

    let stern = stern_report(map, field, 0.0)?;
    let mut sup_term = 0.0f64;
    for j in 0..3 {
        for k in 0..3 {
            let term = stern.components[j].l3.sqrt()
                * stern.components[k].l3
                * stern.components[j].deficit.sqrt();
            sup_term = sup_term.max(term);
        }
    }
    let tau = (36.0 / (volume * lambda) * sup_term).sqrt();

    let mut verdicts = Vec::new();
    let l1_max = (0..9).fold(0.0f64, |m, i| m.max(l1_deficit[(i / 3, i % 3)].abs()));
    // Both sides vanish together at constant metrics; the pad covers the
    // rounding noise the averaging loop leaves in the deviations.
    let l1_bound = 2.0 / lambda * sup_term;
    verdicts.push(Verdict::upper_bound(
        "eq:g_int_close_to_const",
        l1_max,
        l1_bound + VERDICT_EQUALITY_PAD * l1_bound.max(1.0),
        true,
    ));
    let a_max = (0..9).fold(0.0f64, |m, i| m.max(a[(i / 3, i % 3)].abs()));
    let l2_max = stern
        .components
        .iter()
        .fold(0.0f64, |m, c| m.max(c.l2));
    // The second term is attained with equality at constant metrics, where
    // both sides are the same quantity summed along different floating-point
    // paths; the pad covers that rounding, nothing else.
    let a_bound = 2.0 / (volume * lambda) * sup_term + l2_max * l2_max / volume;
    verdicts.push(Verdict::upper_bound(
        "eq:const_matrix_bounded",
        a_max,
        a_bound + VERDICT_EQUALITY_PAD * a_bound.max(1.0),
        true,
    ));

    Ok(ConstantApprox {
        a,
        lambda,
        volume,
        l1_deficit,
        sup_term,
        tau,
        tau_hypothesis_ok: tau <= TAU_HYPOTHESIS_MAX,
        stern,
        verdicts,
    })
}

/// Sum of entrywise absolute deviations and of squared deviations from `a`
/// at one vertex.
fn deviation_sums(g: &Matrix3<f64>, a: &Matrix3<f64>) -> (f64, f64) {
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for r in 0..3 {
        for c in 0..3 {
            let d = (g[(r, c)] - a[(r, c)]).abs();
            s1 += d;
            s2 += d * d;
        }
    }
    (s1, s2)
}

/// The two nested closeness regions at scale `tau`.
#[derive(Debug, Clone)]
pub struct LevelSets {
    /// Cells whose corners all have entrywise L1 deviation below `tau`.
    pub e1: CellSet,
    /// Cells whose corners all have squared deviation below `tau^2`.
    pub e2: CellSet,
    pub verdicts: Vec<Verdict>,
}

/// Closeness regions of the Gram field around `a`: a cell belongs to a region
/// exactly when all eight of its corners satisfy the vertex predicate. The
/// first region is always contained in the second. `tau = 0` yields empty
/// regions (the strict inequalities are unsatisfiable); extraction has its
/// own floor for that edge.
pub fn level_sets(
    gram: &PointwiseGramField,
    field: &MetricField,
    a: &Matrix3<f64>,
    tau: f64,
) -> Result<LevelSets> {
    if !(tau >= 0.0) {
        return Err(Error::Parameter {
            name: "tau",
            value: tau,
            reason: "closeness scale must be nonnegative",
        });
    }
    let grid = field.grid();
    let nv = grid.vertex_count();
    if gram.values.len() != nv {
        return Err(Error::Shape {
            left: gram.values.len(),
            right: nv,
        });
    }
    let sums: Vec<(f64, f64)> = gram.values.iter().map(|g| deviation_sums(g, a)).collect();
    let e1 = CellSet::from_fn(grid, |cell| {
        grid.cell_corners(cell).iter().all(|&v| sums[v].0 < tau)
    });
    let e2 = CellSet::from_fn(grid, |cell| {
        grid.cell_corners(cell)
            .iter()
            .all(|&v| sums[v].1 < tau * tau)
    });
    debug_assert!(e1.is_subset_of(&e2));

    // The half-volume guarantee is meaningful only on the open scale window;
    // outside it the statement is vacuous and no verdict is emitted.
    let mut verdicts = Vec::new();
    if tau > 0.0 && tau < 1.0 {
        let half = field.total_volume() / 2.0;
        verdicts.push(Verdict::upper_bound(
            "cor:first_approximating_set",
            half,
            field.region_volume(&e1),
            true,
        ));
    }
    Ok(LevelSets { e1, e2, verdicts })
}

/// Region extracted by the minimal-boundary threshold sweep.
#[derive(Debug, Clone)]
pub struct OmegaReport {
    /// Largest connected component of the chosen sublevel region.
    pub omega: CellSet,
    /// Threshold the sweep settled on.
    pub t0: f64,
    /// Closeness scale the sweep window was built from.
    pub tau: f64,
    /// Set when `tau` exceeds the certification threshold; extraction still
    /// runs, but the guarantees are no longer backed by the hypotheses.
    pub tau_warning: bool,
    /// Metric volume of the region.
    pub vol_omega: f64,
    /// Metric volume of its complement.
    pub vol_complement: f64,
    /// Metric area of the region boundary.
    pub boundary_area: f64,
    /// Largest entrywise deviation |g - a| over the region corners.
    pub sup_deficit: f64,
    pub verdicts: Vec<Verdict>,
}

/// Extracts the well-approximating region: sweeps thresholds over
/// `[tau^2, 4 tau^2]`, keeps the sublevel cell set with the smallest
/// boundary area (ties to the smaller threshold), and returns its largest
/// connected component together with the four region guarantees.
///
/// A scale above the certification threshold only sets `tau_warning`; the
/// sweep still runs. An empty second-level region (or an empty winning
/// candidate) is an extraction error.
pub fn extract_omega(
    e2: &CellSet,
    approx: &ConstantApprox,
    gram: &PointwiseGramField,
    field: &MetricField,
    map: &HarmonicTorusMap,
) -> Result<OmegaReport> {
    let grid = field.grid();
    let nv = grid.vertex_count();
    if gram.values.len() != nv || map.components[0].coeff.len() != nv {
        return Err(Error::Shape {
            left: gram.values.len(),
            right: nv,
        });
    }
    let tau = approx.tau;
    if tau > 0.0 && e2.is_empty() {
        return Err(Error::Extraction(format!(
            "closeness region is empty at tau = {tau:.3e}; nothing to extract"
        )));
    }

    let s2: Vec<f64> = gram
        .values
        .iter()
        .map(|g| deviation_sums(g, &approx.a).1)
        .collect();

    // Closed sublevel cuts with a floor: an exact approximation (tau = 0)
    // must return the full torus, not an empty region, and the floor sits at
    // the rounding scale of the squared deviations.
    let thresholds: Vec<f64> = (0..LEVEL_SAMPLE_COUNT)
        .map(|i| {
            let frac = i as f64 / (LEVEL_SAMPLE_COUNT - 1) as f64;
            (tau * tau * (1.0 + 3.0 * frac)).max(LEVEL_THRESHOLD_FLOOR)
        })
        .collect();
    let candidates: Vec<(CellSet, f64)> = thresholds
        .par_iter()
        .map(|&t| {
            let set = CellSet::from_fn(grid, |cell| {
                grid.cell_corners(cell).iter().all(|&v| s2[v] <= t)
            });
            let area = field.boundary_area(&set);
            (set, area)
        })
        .collect();
    let mut best = 0;
    for (i, cand) in candidates.iter().enumerate() {
        if cand.1 < candidates[best].1 {
            best = i;
        }
    }
    let (chosen, _) = &candidates[best];
    if chosen.is_empty() {
        return Err(Error::Extraction(format!(
            "every threshold in [{:.3e}, {:.3e}] gives an empty region",
            thresholds[0],
            thresholds[LEVEL_SAMPLE_COUNT - 1]
        )));
    }

    let mut omega = CellSet::empty(grid);
    let mut best_vol = -1.0;
    for comp in chosen.components(grid) {
        let vol = field.region_volume(&comp);
        if vol > best_vol {
            best_vol = vol;
            omega = comp;
        }
    }

    let vol_omega = field.region_volume(&omega);
    let vol_complement = field.region_volume(&omega.complement());
    let boundary_area = field.boundary_area(&omega);
    let corners = omega.corner_vertices(grid);
    let mut sup_deficit = 0.0f64;
    for v in 0..nv {
        if corners[v] {
            let d = gram.values[v] - approx.a;
            for r in 0..3 {
                for c in 0..3 {
                    sup_deficit = sup_deficit.max(d[(r, c)].abs());
                }
            }
        }
    }

    let volume = approx.volume;
    // The sup bound is attained with exact equality when the approximation
    // is exact (both sides zero); the pad covers that rounding edge.
    let mut verdicts = vec![Verdict::upper_bound(
        "lem:well_approximating_set (1)",
        sup_deficit,
        2.0 * tau + VERDICT_EQUALITY_PAD * (2.0 * tau).max(1.0),
        true,
    )];
    verdicts.push(Verdict::upper_bound(
        "lem:well_approximating_set (2)",
        volume / 2.0,
        vol_omega,
        true,
    ));
    verdicts.push(Verdict::upper_bound(
        "lem:well_approximating_set (3)",
        boundary_area,
        2.0 * volume * approx.lambda * tau,
        true,
    ));
    verdicts.push(Verdict::upper_bound(
        "lem:well_approximating_set (4)",
        vol_complement,
        2.0 * volume * tau,
        true,
    ));

    Ok(OmegaReport {
        omega,
        t0: thresholds[best],
        tau,
        tau_warning: !approx.tau_hypothesis_ok,
        vol_omega,
        vol_complement,
        boundary_area,
        sup_deficit,
        verdicts,
    })
}

/// Determinant and integrability diagnostics over the extracted region.
#[derive(Debug, Clone)]
pub struct OmegaDiagnostics {
    /// Integral of the coefficient determinant over the region, in the
    /// coordinate measure (so region + complement = map degree exactly).
    pub det_integral_omega: f64,
    /// Same integral over the complement.
    pub det_integral_complement: f64,
    /// Map degree, repeated for the additivity check.
    pub degree: f64,
    /// Whether the coefficient determinant keeps one sign on the region.
    pub sign_constant: bool,
    /// Cubed L3 norm of the full differential over the complement.
    pub l3_cubed_complement: f64,
    /// Smallest Gram determinant over the region corners.
    pub inf_det_gram: f64,
    /// Determinant of the averaged matrix.
    pub det_a: f64,
    pub verdicts: Vec<Verdict>,
}

/// Entrywise max norm of a 3x3 matrix.
fn max_abs(m: &Matrix3<f64>) -> f64 {
    (0..9).fold(0.0f64, |acc, i| acc.max(m[(i / 3, i % 3)].abs()))
}

/// Measures the region diagnostics: determinant integrals and sign
/// constancy, the complement energy, and the determinant lower bounds.
///
/// Soft verdict rows record measured quantities against unit-constant
/// reference envelopes in the curvature scale; their pass flags never gate a
/// run, and the measured constant is the ratio of the two sides.
pub fn omega_diagnostics(
    report: &OmegaReport,
    map: &HarmonicTorusMap,
    field: &MetricField,
    gram: &PointwiseGramField,
    approx: &ConstantApprox,
) -> Result<OmegaDiagnostics> {
    let grid = field.grid();
    let nv = grid.vertex_count();
    let h3 = grid.h().powi(3);
    if gram.values.len() != nv {
        return Err(Error::Shape {
            left: gram.values.len(),
            right: nv,
        });
    }

    // Cell-indexed determinant samples: each cell contributes the value at
    // its base vertex, which makes the region/complement split an exact
    // partition of the degree sum.
    let dets: Vec<f64> = (0..nv)
        .map(|v| coeff_matrix(map, v).determinant())
        .collect();
    let mut det_omega = 0.0;
    let mut abs_det_omega = 0.0;
    let mut pos = false;
    let mut neg = false;
    for cell in report.omega.iter() {
        let d = dets[cell];
        det_omega += d * h3;
        abs_det_omega += d.abs() * h3;
        pos |= d > 0.0;
        neg |= d < 0.0;
    }
    let complement = report.omega.complement();
    let det_complement: f64 = complement.iter().map(|c| dets[c] * h3).sum();

    let du_norm: Vec<f64> = gram.values.iter().map(|g| g.trace().sqrt()).collect();
    let l3_cubed_complement = lp_norm(field, &du_norm, 3.0, Some(&complement))?.powi(3);

    let corners = report.omega.corner_vertices(grid);
    let det_a = approx.a.determinant();
    let mut inf_det_gram = f64::INFINITY;
    let mut det_gap_ratio = 0.0f64;
    for v in 0..nv {
        if !corners[v] {
            continue;
        }
        let g = &gram.values[v];
        inf_det_gram = inf_det_gram.min(g.determinant());
        let diff = g - approx.a;
        let scale =
            DET_ESTIMATE_C3 * (max_abs(g) + max_abs(&approx.a)).powi(2) * max_abs(&diff);
        if scale > 1e-300 {
            det_gap_ratio = det_gap_ratio.max((g.determinant() - det_a).abs() / scale);
        }
    }
    if !inf_det_gram.is_finite() {
        inf_det_gram = 0.0;
    }

    let rneg = approx.stern.rneg_l2;
    let r4 = rneg.powf(0.25);
    let r12 = rneg.powf(1.0 / 12.0);
    let det_floor_ref = (1.0 - r12).powi(2) / (report.vol_omega * report.vol_omega) - r4;

    let mut verdicts = vec![Verdict::upper_bound(
        "eq:detdU_has_sign_Omega",
        abs_det_omega - det_omega.abs(),
        VERDICT_EQUALITY_PAD * abs_det_omega.max(1.0),
        true,
    )];
    verdicts.push(Verdict::upper_bound(
        "prop:det_estimate",
        det_gap_ratio,
        1.0,
        true,
    ));
    verdicts.push(Verdict::upper_bound(
        "eq:const_approximation",
        report.sup_deficit,
        r4,
        false,
    ));
    verdicts.push(Verdict::upper_bound(
        "eq:small_compliment",
        report.vol_complement,
        r4,
        false,
    ));
    verdicts.push(Verdict::upper_bound(
        "eq:small_boundary",
        report.boundary_area,
        r4,
        false,
    ));
    verdicts.push(Verdict::upper_bound(
        "eq:bound_on_L3_compl_Omega",
        l3_cubed_complement,
        r12,
        false,
    ));
    verdicts.push(Verdict::upper_bound(
        "eq:up_lower_int_bound_detU_Omega",
        (det_omega - 1.0).abs(),
        r12,
        false,
    ));
    verdicts.push(Verdict::upper_bound(
        "eq:det_g_bounded_below_Omega",
        det_floor_ref,
        inf_det_gram,
        false,
    ));
    verdicts.push(Verdict::upper_bound(
        "eq:det_a_bounded_below",
        det_floor_ref,
        det_a,
        false,
    ));

    Ok(OmegaDiagnostics {
        det_integral_omega: det_omega,
        det_integral_complement: det_complement,
        degree: map.degree,
        sign_constant: !(pos && neg),
        l3_cubed_complement,
        inf_det_gram,
        det_a,
        verdicts,
    })
}

/// Map values at every vertex: the linear part from the component periods
/// plus the periodic potential. Values live in the universal cover of the
/// target; reduce mod 1 for torus points.
pub fn map_values(map: &HarmonicTorusMap, field: &MetricField) -> Vec<Vector3<f64>> {
    let grid = field.grid();
    let h = grid.h();
    let mut u = vec![Vector3::zeros(); grid.vertex_count()];
    for (v, val) in u.iter_mut().enumerate() {
        let [i, j, k] = grid.coords(v);
        let x = Vector3::new(i as f64 * h, j as f64 * h, k as f64 * h);
        for comp in 0..3 {
            let form = &map.components[comp];
            val[comp] = form.class.dot(&x) + form.potential[v];
        }
    }
    u
}

/// Largest number of region cells whose image parallelepiped contains any
/// one sampled target point.
///
/// Targets are drawn from the image itself (a random cell and a random
/// offset inside it), so a degree-one embedding-like map reports 1 while a
/// doubled period reports 2. Sampling is seeded and deterministic. Cells
/// whose coefficient matrix is numerically singular are skipped.
pub fn injectivity_count(
    map: &HarmonicTorusMap,
    field: &MetricField,
    omega: &CellSet,
    sample_count: usize,
    seed: u64,
) -> usize {
    let grid = field.grid();
    let h = grid.h();
    if omega.is_empty() || sample_count == 0 {
        return 0;
    }

    let u = map_values(map, field);

    // Per-cell affine model of the map: base value, Jacobian (rows are
    // component differentials), and its inverse for the containment test.
    struct CellModel {
        base: Vector3<f64>,
        jac: Matrix3<f64>,
        jac_inv: Matrix3<f64>,
    }
    let cells: Vec<usize> = omega.iter().collect();
    let models: Vec<Option<CellModel>> = cells
        .iter()
        .map(|&c| {
            let jac = coeff_matrix(map, c).transpose();
            jac.try_inverse().map(|jac_inv| CellModel {
                base: u[c],
                jac,
                jac_inv,
            })
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = 1e-9;
    let mut worst = 0usize;
    for _ in 0..sample_count {
        let pick = rng.gen_range(0..cells.len());
        let t = Vector3::new(
            rng.gen::<f64>() * h,
            rng.gen::<f64>() * h,
            rng.gen::<f64>() * h,
        );
        let y = match &models[pick] {
            Some(m) => m.base + m.jac * t,
            None => continue,
        };
        let mut hits = 0usize;
        for model in models.iter().flatten() {
            // Reduce the offset to the nearest period representative; the
            // cell image is far smaller than half a period on any sane grid.
            let mut d = y - model.base;
            for i in 0..3 {
                d[i] -= d[i].round();
            }
            let s = model.jac_inv * d;
            if (0..3).all(|i| s[i] >= -tol && s[i] <= h + tol) {
                hits += 1;
            }
        }
        worst = worst.max(hits);
    }
    worst
}

/// Flat metric recovered from the averaged Gram matrix, with the pullback
/// comparison over the extracted region.
#[derive(Debug, Clone)]
pub struct FlatRecovery {
    /// Constant coefficient matrix of the recovered flat metric.
    pub g_flat: Matrix3<f64>,
    /// Supremum over region corners of the metric-normalized gap between the
    /// input metric and the pullback of the flat one.
    pub c0_deficit: f64,
    pub verdicts: Vec<Verdict>,
}

/// Inverts the averaged matrix into a flat reference metric and measures how
/// far the input metric is from the pullback of that flat metric under the
/// map, in the metric's own norm, over the region corners.
pub fn recover_flat(
    approx: &ConstantApprox,
    map: &HarmonicTorusMap,
    field: &MetricField,
    omega: &CellSet,
    rneg_l2: f64,
) -> Result<FlatRecovery> {
    let det = approx.a.determinant();
    if !(det >= RECOVERY_DET_FLOOR) {
        return Err(Error::Recovery {
            det,
            floor: RECOVERY_DET_FLOOR,
        });
    }
    let g_flat = approx.a.try_inverse().ok_or(Error::Recovery {
        det,
        floor: RECOVERY_DET_FLOOR,
    })?;

    let grid = field.grid();
    let nv = grid.vertex_count();
    let corners = omega.corner_vertices(grid);
    let mut worst_sq = 0.0f64;
    for v in 0..nv {
        if !corners[v] {
            continue;
        }
        // Pullback of the flat metric through the affine model at v:
        // columns of the coefficient matrix are the component differentials.
        let m = coeff_matrix(map, v);
        let pullback = m * g_flat * m.transpose();
        let diff = field.g(v) - pullback;
        let ginv = field.ginv(v);
        let nsq = (ginv * diff * ginv * diff.transpose()).trace();
        worst_sq = worst_sq.max(nsq);
    }
    let c0_deficit = worst_sq.max(0.0).sqrt();

    let verdicts = vec![Verdict::upper_bound(
        "cor:C0_close_to_flat_metric",
        c0_deficit,
        rneg_l2.powf(0.25),
        false,
    )];
    Ok(FlatRecovery {
        g_flat,
        c0_deficit,
        verdicts,
    })
}

/// Serializes a cell set as CSV with header `i, j, k, in_omega`, one row per
/// cell in index order, membership as 0/1.
pub fn omega_csv(grid: &PeriodicGrid, set: &CellSet) -> String {
    let mut out = String::from("i, j, k, in_omega\n");
    for cell in 0..grid.vertex_count() {
        let [i, j, k] = grid.coords(cell);
        out.push_str(&format!(
            "{}, {}, {}, {}\n",
            i,
            j,
            k,
            if set.contains(cell) { 1 } else { 0 }
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmap::build_map;
    use crate::hodge::{combine_forms, coordinate_representatives, SolverOptions};
    use crate::lattice::ReducedBasis;
    use crate::mesh::{FourierTerm, MetricSpec, PeriodicGrid};

    fn build(n: usize, spec: &MetricSpec) -> MetricField {
        MetricField::build(PeriodicGrid::new(n).unwrap(), spec).unwrap()
    }

    fn conformal(eps: f64) -> MetricSpec {
        MetricSpec::Conformal {
            base: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            terms: vec![
                FourierTerm {
                    amplitude: eps,
                    wave: [1, 0, 0],
                    phase: 0.0,
                },
                FourierTerm {
                    amplitude: 0.6 * eps,
                    wave: [0, 1, 1],
                    phase: 0.7,
                },
            ],
        }
    }

    fn diag_spec() -> MetricSpec {
        MetricSpec::Constant {
            matrix: [1.0, 0.0, 0.0, 0.0, 4.0, 0.0, 0.0, 0.0, 9.0],
        }
    }

    /// Full chain on one field: map, gram field, averaged matrix.
    fn chain(
        field: &MetricField,
        lambda: f64,
    ) -> (HarmonicTorusMap, PointwiseGramField, ConstantApprox) {
        let map = build_map(field, &SolverOptions::default()).unwrap();
        let gram = pointwise_gram(&map, field).unwrap();
        let approx = constant_approx(&gram, field, lambda, &map).unwrap();
        (map, gram, approx)
    }

    #[test]
    fn flat_gram_is_identity() {
        let field = build(8, &MetricSpec::flat());
        let (_, gram, _) = chain(&field, 3.0);
        for g in &gram.values {
            assert!((g - Matrix3::identity()).norm() < 1e-9);
        }
    }

    #[test]
    fn gram_volume_average_matches_l2_norms() {
        let field = build(12, &conformal(0.1));
        let (map, _gram, approx) = chain(&field, 3.0);
        let stern = stern_report(&map, &field, 0.0).unwrap();
        for j in 0..3 {
            // Diagonal averages against squared L2 norms, same quadrature.
            let avg = approx.a[(j, j)] * approx.volume;
            let l2sq = stern.components[j].l2 * stern.components[j].l2;
            assert!(
                (avg - l2sq).abs() <= 1e-10 * l2sq.max(1.0),
                "component {j}: {avg} vs {l2sq}"
            );
        }
    }

    #[test]
    fn constant_metric_approx_is_exact() {
        let field = build(8, &diag_spec());
        let (_, gram, approx) = chain(&field, 3.0);
        assert!(max_abs(&approx.l1_deficit) < 1e-12);
        assert_eq!(approx.tau, 0.0);
        assert!(approx.tau_hypothesis_ok);
        for v in approx.verdicts.iter() {
            assert!(v.pass, "verdict {} failed: {} vs {}", v.anchor, v.lhs, v.rhs);
        }
        // The averaged matrix equals the (constant) pointwise value.
        assert!((approx.a - gram.values[0]).norm() < 1e-12);
    }

    #[test]
    fn nonpositive_lambda_is_rejected() {
        let field = build(8, &MetricSpec::flat());
        let map = build_map(&field, &SolverOptions::default()).unwrap();
        let gram = pointwise_gram(&map, &field).unwrap();
        let err = constant_approx(&gram, &field, 0.0, &map).unwrap_err();
        assert!(matches!(err, Error::Parameter { name: "lambda", .. }));
    }

    #[test]
    fn approx_scales_quadratically_with_the_map() {
        let field = build(8, &conformal(0.1));
        let (map, _, approx) = chain(&field, 3.0);
        // Doubling the map doubles every differential, so the averaged
        // matrix and the L1 deficit pick up a factor of four.
        let mut doubled = map.clone();
        for form in doubled.components.iter_mut() {
            form.class *= 2.0;
            for p in form.potential.iter_mut() {
                *p *= 2.0;
            }
            for k in form.coeff.iter_mut() {
                *k *= 2.0;
            }
        }
        let gram2 = pointwise_gram(&doubled, &field).unwrap();
        let approx2 = constant_approx(&gram2, &field, 3.0, &doubled).unwrap();
        assert!((approx2.a - approx.a * 4.0).norm() < 1e-9);
        let want = max_abs(&approx.l1_deficit) * 4.0;
        let got = max_abs(&approx2.l1_deficit);
        assert!((got - want).abs() < 1e-6 * want.max(1e-12));
        // The closeness scale is built from cubes and square roots of the
        // same homogeneous quantities and doubles with the map.
        assert!((approx2.tau / approx.tau - 2.0).abs() < 1e-3);
    }

    #[test]
    fn level_sets_nest_and_fill_at_generous_tau() {
        let field = build(8, &diag_spec());
        let (_, gram, approx) = chain(&field, 3.0);
        let sets = level_sets(&gram, &field, &approx.a, 0.5).unwrap();
        let total = field.grid().vertex_count();
        assert_eq!(sets.e1.count(), total);
        assert_eq!(sets.e2.count(), total);
        assert!(sets.e1.is_subset_of(&sets.e2));
        assert_eq!(sets.verdicts.len(), 1);
        assert!(sets.verdicts[0].pass);
        assert_eq!(sets.verdicts[0].anchor, "cor:first_approximating_set");
    }

    #[test]
    fn level_sets_are_empty_below_the_noise_scale() {
        let field = build(8, &conformal(0.1));
        let (_, gram, approx) = chain(&field, 3.0);
        let sets = level_sets(&gram, &field, &approx.a, 1e-12).unwrap();
        assert!(sets.e1.is_empty());
        assert!(sets.e2.is_empty());
    }

    #[test]
    fn negative_tau_is_rejected() {
        let field = build(8, &MetricSpec::flat());
        let (_, gram, approx) = chain(&field, 3.0);
        let err = level_sets(&gram, &field, &approx.a, -0.1).unwrap_err();
        assert!(matches!(err, Error::Parameter { name: "tau", .. }));
    }

    #[test]
    fn constant_metric_extraction_returns_everything() {
        let field = build(8, &diag_spec());
        let (map, gram, approx) = chain(&field, 3.0);
        let sets = level_sets(&gram, &field, &approx.a, approx.tau).unwrap();
        let report = extract_omega(&sets.e2, &approx, &gram, &field, &map).unwrap();
        assert_eq!(report.omega.count(), field.grid().vertex_count());
        assert_eq!(report.t0, LEVEL_THRESHOLD_FLOOR);
        assert!(!report.tau_warning);
        assert_eq!(report.boundary_area, 0.0);
        assert_eq!(report.vol_complement, 0.0);
        for v in &report.verdicts {
            assert!(v.pass, "verdict {} failed: {} vs {}", v.anchor, v.lhs, v.rhs);
        }
    }

    #[test]
    fn wavy_extraction_keeps_the_guarantees() {
        let field = build(16, &conformal(0.05));
        let (map, gram, approx) = chain(&field, 3.0);
        // Oscillating curvature at this amplitude pushes the scale well past
        // the certification threshold: the warning fires, extraction runs,
        // and the generous threshold window keeps the whole torus.
        assert!(approx.tau > TAU_HYPOTHESIS_MAX);
        let sets = level_sets(&gram, &field, &approx.a, approx.tau).unwrap();
        let report = extract_omega(&sets.e2, &approx, &gram, &field, &map).unwrap();
        assert!(report.tau_warning);
        for v in &report.verdicts {
            assert!(v.pass, "verdict {} failed: {} vs {}", v.anchor, v.lhs, v.rhs);
        }
        // Containment in the doubled-scale region.
        let wide = level_sets(&gram, &field, &approx.a, 2.0 * approx.tau).unwrap();
        assert!(report.omega.is_subset_of(&wide.e2));
    }

    #[test]
    fn hopeless_average_is_an_extraction_error() {
        let field = build(8, &conformal(0.1));
        let (map, gram, approx) = chain(&field, 3.0);
        // An average shifted far off the field leaves every vertex outside
        // the window at a tiny scale.
        let mut bad = approx.clone();
        bad.a += Matrix3::identity() * 10.0;
        bad.tau = 0.01;
        let sets = level_sets(&gram, &field, &bad.a, bad.tau).unwrap();
        let err = extract_omega(&sets.e2, &bad, &gram, &field, &map).unwrap_err();
        assert!(matches!(err, Error::Extraction(_)));
    }

    #[test]
    fn determinant_split_is_an_exact_partition() {
        let field = build(12, &conformal(0.1));
        let (map, gram, approx) = chain(&field, 3.0);
        let sets = level_sets(&gram, &field, &approx.a, approx.tau).unwrap();
        let report = extract_omega(&sets.e2, &approx, &gram, &field, &map).unwrap();
        let diag = omega_diagnostics(&report, &map, &field, &gram, &approx).unwrap();
        let total = diag.det_integral_omega + diag.det_integral_complement;
        assert!((total - map.degree).abs() < 1e-10);
        assert!(diag.sign_constant);
        // Hard determinant rows hold.
        for v in diag.verdicts.iter().filter(|v| v.hard) {
            assert!(v.pass, "verdict {} failed: {} vs {}", v.anchor, v.lhs, v.rhs);
        }
    }

    #[test]
    fn constant_metric_diagnostics_are_clean() {
        let field = build(8, &diag_spec());
        let (map, gram, approx) = chain(&field, 3.0);
        let sets = level_sets(&gram, &field, &approx.a, approx.tau).unwrap();
        let report = extract_omega(&sets.e2, &approx, &gram, &field, &map).unwrap();
        let diag = omega_diagnostics(&report, &map, &field, &gram, &approx).unwrap();
        assert!((diag.det_integral_omega - 1.0).abs() < 1e-12);
        assert_eq!(diag.det_integral_complement, 0.0);
        assert_eq!(diag.l3_cubed_complement, 0.0);
        assert!(diag.sign_constant);
        // Gram determinant is constant, so the infimum equals det(a).
        assert!((diag.inf_det_gram - diag.det_a).abs() < 1e-12 * diag.det_a.abs());
    }

    #[test]
    fn gram_determinant_factorizes_pointwise() {
        let field = build(12, &conformal(0.1));
        let (map, gram, _) = chain(&field, 3.0);
        for v in 0..field.grid().vertex_count() {
            let m = coeff_matrix(&map, v);
            let want = m.determinant().powi(2) * field.ginv(v).determinant();
            let got = gram.values[v].determinant();
            assert!(
                (got - want).abs() <= 1e-10 * want.abs().max(1.0),
                "vertex {v}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn identity_map_hits_each_target_once() {
        let field = build(8, &MetricSpec::flat());
        let (map, _, _) = chain(&field, 3.0);
        let omega = CellSet::from_fn(field.grid(), |_| true);
        assert_eq!(injectivity_count(&map, &field, &omega, 24, 11), 1);
    }

    #[test]
    fn doubled_period_hits_each_target_twice() {
        let field = build(8, &MetricSpec::flat());
        let forms = coordinate_representatives(&field, &SolverOptions::default()).unwrap();
        let doubled = combine_forms(&field, &forms, &[2.0, 0.0, 0.0]).unwrap();
        let map = HarmonicTorusMap {
            components: [doubled, forms[1].clone(), forms[2].clone()],
            basis: ReducedBasis {
                columns: [
                    Vector3::new(2, 0, 0),
                    Vector3::new(0, 1, 0),
                    Vector3::new(0, 0, 1),
                ],
                norms: [2.0, 1.0, 1.0],
                minima: [1.0, 1.0, 1.0],
                unimodular: false,
            },
            orientation_flipped: false,
            degree: 2.0,
        };
        let omega = CellSet::from_fn(field.grid(), |_| true);
        assert_eq!(injectivity_count(&map, &field, &omega, 24, 11), 2);
    }

    #[test]
    fn constant_metric_recovery_is_exact() {
        let field = build(8, &diag_spec());
        let (map, gram, approx) = chain(&field, 3.0);
        let sets = level_sets(&gram, &field, &approx.a, approx.tau).unwrap();
        let report = extract_omega(&sets.e2, &approx, &gram, &field, &map).unwrap();
        let rec = recover_flat(&approx, &map, &field, &report.omega, 0.0).unwrap();
        assert!(rec.c0_deficit < 1e-10, "deficit {}", rec.c0_deficit);
        let a_inv = approx.a.try_inverse().unwrap();
        assert!((rec.g_flat - a_inv).norm() < 1e-14);
        assert_eq!(rec.verdicts[0].anchor, "cor:C0_close_to_flat_metric");
    }

    #[test]
    fn near_singular_average_refuses_recovery() {
        let field = build(8, &MetricSpec::flat());
        let (map, gram, approx) = chain(&field, 3.0);
        let mut bad = approx.clone();
        bad.a = Matrix3::identity() * 1e-3;
        let omega = CellSet::from_fn(field.grid(), |_| true);
        let err = recover_flat(&bad, &map, &field, &omega, 0.0).unwrap_err();
        assert!(matches!(err, Error::Recovery { .. }));
        let _ = gram;
    }

    #[test]
    fn csv_lists_every_cell_with_membership() {
        let field = build(4, &MetricSpec::flat());
        let omega = CellSet::from_fn(field.grid(), |c| c % 2 == 0);
        let csv = omega_csv(field.grid(), &omega);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "i, j, k, in_omega");
        assert_eq!(lines.len(), 1 + 64);
        assert_eq!(lines[1], "0, 0, 0, 1");
        assert_eq!(lines[2], "0, 0, 1, 0");
    }
}
