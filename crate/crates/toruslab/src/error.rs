//! Error vocabulary shared by every module.
//!
//! Each variant corresponds to one failure family the operations can report;
//! callers match on the variant rather than parsing strings.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Grid resolution is too coarse for the finite-difference stencils.
    #[error("grid resolution {n} is too coarse (need n >= {min})")]
    Resolution { n: usize, min: usize },

    /// A metric sample failed the symmetric-positive-definite validation.
    #[error("metric is not positive definite at vertex {vertex}: min eigenvalue {min_eig:e}")]
    DegenerateMetric { vertex: usize, min_eig: f64 },

    /// A numeric parameter is outside its documented range.
    #[error("parameter {name} = {value} is out of range: {reason}")]
    Parameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    /// Two fields that must share a grid do not.
    #[error("field shapes disagree: {left} vs {right}")]
    Shape { left: usize, right: usize },

    /// The iterative solver ran out of iterations before reaching tolerance.
    #[error("solver stalled after {iterations} iterations at relative residual {residual:e}")]
    Solver { iterations: usize, residual: f64 },

    /// An enumeration would visit more candidates than the hard cap allows.
    #[error("enumeration needs ~{estimate} candidates, over the cap of {cap}")]
    Capacity { estimate: u64, cap: u64 },

    /// A lifted computation reached the boundary of the deck-translate window.
    #[error("deck-translate window of radius {radius} is too small: {context}")]
    Window { radius: i32, context: &'static str },

    /// A point or cell that must belong to a domain does not.
    #[error("domain error: {0}")]
    Domain(String),

    /// An edge cochain failed the closedness check.
    #[error("cochain is not closed: max plaquette defect {defect:e}")]
    ConsistencyDefect { defect: f64 },

    /// A region that must be connected is not.
    #[error("connectivity error: {0}")]
    Connectivity(String),

    /// A Gromov-Hausdorff correspondence does not cover both sample sets.
    #[error("correspondence error: {0}")]
    Correspondence(String),

    /// A slice subset violates the topological hypothesis of an operation.
    #[error("topology error: {0}")]
    Topology(String),

    /// Level-set extraction found nothing to extract.
    #[error("extraction error: {0}")]
    Extraction(String),

    /// Flat-metric recovery hit a near-singular averaged Gram matrix.
    #[error("recovery error: det(a) = {det:e} is below the floor {floor:e}")]
    Recovery { det: f64, floor: f64 },

    /// A computed map degree is incompatible with a degree-one torus map.
    #[error("degeneracy error: measured degree {degree} is not +/-1 within {tol}")]
    Degeneracy { degree: f64, tol: f64 },

    /// A sweep stage failed; wraps the underlying error with the family
    /// index it happened at.
    #[error("sweep stage failed at eps[{index}] = {eps}: {source}")]
    Stage {
        index: usize,
        eps: f64,
        source: Box<Error>,
    },

    /// Configuration file or flag problems.
    #[error("config error: {0}")]
    Config(String),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure.
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
