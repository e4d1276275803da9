//! Centralized numeric tolerances and calibration constants.
//!
//! Every threshold that a test or a verdict depends on lives here with a short
//! rationale, so recalibrating one number never means hunting through modules.

/// Minimum eigenvalue a metric sample must have to count as positive definite.
/// Anything smaller than this makes the inverse and the volume weights
/// meaningless at f64 precision.
pub const METRIC_EIG_FLOOR: f64 = 1e-6;

/// Maximum allowed asymmetry |G_ij - G_ji| in a metric sample. Construction
/// always produces symmetric matrices; this guards hand-built inputs.
pub const METRIC_SYMMETRY_TOL: f64 = 1e-12;

/// Default relative residual for the conjugate-gradient solves.
pub const SOLVER_TOL: f64 = 1e-10;

/// Default iteration cap factor: `50 * n^3` iterations before the solver
/// reports a stall. CG on these systems converges in O(n) iterations, so the
/// cap only triggers on genuinely broken inputs.
pub const SOLVER_MAX_ITER_FACTOR: usize = 50;

/// Hard cap on lattice enumeration candidates. Past this the Gram matrix is
/// so skewed that exact enumeration is the wrong tool.
pub const ENUMERATION_CAP: u64 = 10_000_000;

/// Relative tie window for lattice vector norms: two candidate vectors whose
/// squared norms differ by less than this (relative to the norm scale) are
/// ranked by the lexicographic rule instead of by the float comparison.
pub const LATTICE_TIE_REL: f64 = 1e-12;

/// Tolerance on |det(gram_1) * det(gram_2) - 1| at the default grid (n = 32).
/// Calibrated from the refinement study; the observed defect for trigonometric
/// metrics is far smaller, so this band is generous.
pub const DUAL_DET_TOL_N32: f64 = 5e-3;

/// Same identity at n = 64.
pub const DUAL_DET_TOL_N64: f64 = 1e-3;

/// Degree tolerance as a function of grid resolution: the map degree is an
/// integer up to quadrature error, which scales like h^2 with the measured
/// constant comfortably below 50.
pub fn degree_tol(n: usize) -> f64 {
    50.0 / (n as f64 * n as f64)
}

/// Regularizer scale for the curvature-deficit denominators:
/// `eps_reg = DEFICIT_REG_SCALE * mean(|du|)`.
pub const DEFICIT_REG_SCALE: f64 = 1e-8;

/// Oscillation verdicts allow this many grid spacings of slack: the discrete
/// sup/inf land on cell corners, which overshoot the continuum oscillation by
/// up to one cell per side.
pub const OSC_SLACK_CELLS: f64 = 2.0;

/// Determinant floor below which the averaged Gram matrix is considered
/// singular and flat-metric recovery refuses to invert it.
pub const RECOVERY_DET_FLOOR: f64 = 1e-6;

/// Above this threshold the closeness scale no longer certifies anything and
/// the extraction sets a warning flag (the hypothesis of the construction).
pub const TAU_HYPOTHESIS_MAX: f64 = 0.125;

/// Number of level thresholds sampled in `[tau^2, 4 tau^2]` when choosing the
/// cut with the smallest boundary area.
pub const LEVEL_SAMPLE_COUNT: usize = 16;

/// Absolute floor on the level-set threshold used during region extraction.
/// An exactly constant pointwise Gram field has a squared deficit at the
/// rounding scale (~1e-30), so a closed cut at this floor returns the full
/// torus instead of an empty region while staying far below any genuine
/// metric variation.
pub const LEVEL_THRESHOLD_FLOOR: f64 = 1e-14;

/// Relative pad added to a verdict bound that is attained with exact equality
/// on reference inputs (e.g. the averaged-matrix norm bound at constant
/// metrics, where both sides are the same number computed along different
/// floating-point paths). Covers rounding only, not discretization error.
pub const VERDICT_EQUALITY_PAD: f64 = 1e-12;

/// Max loop defect tolerated when integrating an edge cochain to a lift.
/// Exact forms telescope to rounding noise; anything larger means the input
/// was not closed.
pub const LIFT_CLOSEDNESS_TOL: f64 = 1e-9;

/// Explicit constant in the determinant difference bound
/// |det(a) - det(b)| <= C * (max|a| + max|b|)^2 * max|a - b| for 3x3 matrices:
/// each cofactor is a 2x2 determinant bounded by 2 * max^2 and nine entries
/// contribute, so C = 18 works for the entrywise max norm.
pub const DET_ESTIMATE_C3: f64 = 18.0;

/// Volume of the unit ball in R^3, |B(0,1)| = 4*pi/3.
pub const UNIT_BALL_VOLUME_3D: f64 = 4.0 * std::f64::consts::PI / 3.0;

/// Window half-width (in integer shifts per axis) used when evaluating flat
/// torus distances by minimizing over deck translates.
pub const FLAT_DISTANCE_SHIFT_RADIUS: i64 = 2;

/// Ratio band for the refinement check "curvature error shrinks by ~4x when
/// n doubles" (second-order stencils).
pub const REFINEMENT_RATIO_LO: f64 = 3.5;
pub const REFINEMENT_RATIO_HI: f64 = 4.5;

/// Tie tolerance for the sweep's monotone-column verdicts: consecutive rows
/// may increase by at most this much and still count as non-increasing.
pub const MONOTONE_TIE_TOL: f64 = 1e-9;

/// Allowed deviation of the floor-subtracted curvature ratio from exact
/// halving across one amplitude halving: the ratio must land in
/// `[2 - band, 2 + band]`.
pub const HALVING_RATIO_BAND: f64 = 0.4;
