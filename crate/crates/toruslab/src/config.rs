//! Run configuration: JSON ingestion, defaults, and validation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hodge::SolverOptions;
use crate::mesh::MetricSpec;

fn default_grid() -> usize {
    32
}
fn default_sigma() -> f64 {
    0.9
}
fn default_lambda() -> f64 {
    3.0
}
fn default_eta() -> f64 {
    0.1
}
fn default_vol_cap() -> f64 {
    8.0
}
fn default_rneg_cap() -> f64 {
    50.0
}
fn default_kappa_cap() -> usize {
    8
}
fn default_eps() -> Vec<f64> {
    vec![0.2, 0.1, 0.05, 0.025]
}
fn default_samples() -> usize {
    64
}
fn default_injectivity_samples() -> usize {
    512
}
fn default_report_path() -> String {
    "report.json".into()
}
fn default_csv_path() -> String {
    "sweep.csv".into()
}

/// Full description of one diagnostic run. Every knob has a sane default
/// except the metric itself; unknown fields are rejected so typos surface
/// as parse errors rather than silently ignored settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Vertices per period in each axis.
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// The metric under study; also the unit-amplitude template the sweep
    /// scales.
    pub metric: MetricSpec,
    /// Stable-systole lower-bound hypothesis.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Isoperimetric (Cheeger) lower-bound hypothesis.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Neighborhood size for the covering-constant check.
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Family volume cap.
    #[serde(default = "default_vol_cap")]
    pub vol_cap: f64,
    /// Family cap on the L2 norm of negative scalar curvature.
    #[serde(default = "default_rneg_cap")]
    pub rneg_cap: f64,
    /// Family cap on the covering constant.
    #[serde(default = "default_kappa_cap")]
    pub kappa_cap: usize,
    #[serde(default)]
    pub solver: SolverOptions,
    /// Sweep amplitudes, strictly decreasing.
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    /// Farthest-point sample size for distance comparisons.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Random target count for the injectivity spot-check.
    #[serde(default = "default_injectivity_samples")]
    pub injectivity_samples: usize,
    /// Report file name, relative to the output directory.
    #[serde(default = "default_report_path")]
    pub report_path: String,
    /// Sweep table file name, relative to the output directory.
    #[serde(default = "default_csv_path")]
    pub csv_path: String,
    /// Seed for the randomized spot-checks; fixed seed means bit-identical
    /// reports.
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    /// Parses and validates a configuration from JSON text.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config parse: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads, parses, and validates a configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("config read {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    /// Field-level validation beyond what parsing enforces.
    pub fn validate(&self) -> Result<()> {
        let positive: [(&str, f64); 7] = [
            ("sigma", self.sigma),
            ("lambda", self.lambda),
            ("eta", self.eta),
            ("vol_cap", self.vol_cap),
            ("rneg_cap", self.rneg_cap),
            ("kappa_cap", self.kappa_cap as f64),
            ("solver.tol", self.solver.tol),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::Config(format!(
                    "field {name}: must be positive and finite, got {value}"
                )));
            }
        }
        for e in &self.eps {
            if !e.is_finite() || *e < 0.0 {
                return Err(Error::Config(format!(
                    "field eps: amplitudes must be finite and nonnegative, got {e}"
                )));
            }
        }
        for w in self.eps.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::Config(format!(
                    "field eps: list must be strictly decreasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if self.samples < 2 {
            return Err(Error::Config(format!(
                "field samples: need at least 2, got {}",
                self.samples
            )));
        }
        if self.report_path.is_empty() || self.csv_path.is_empty() {
            return Err(Error::Config(
                "fields report_path/csv_path: must be nonempty".into(),
            ));
        }
        Ok(())
    }
}
