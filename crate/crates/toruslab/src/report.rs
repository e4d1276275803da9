//! Report data types: inequality verdicts and the run-level report tree.
//!
//! Every inequality the pipeline evaluates becomes a `Verdict` carrying the
//! anchor string of the statement it instantiates, both sides of the
//! inequality, the slack, and whether a failure should flip the process
//! exit code (`hard`) or is informational (`soft`, used for measured-constant
//! fits whose truth the theory does not pin down at finite resolution).

use serde::{Deserialize, Serialize};

/// Outcome of one evaluated inequality `lhs <= rhs`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verdict {
    /// Anchor string tying the verdict to the statement it instantiates.
    pub anchor: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`; negative means the inequality failed.
    pub slack: f64,
    pub pass: bool,
    /// Hard verdicts drive the exit code; soft ones are informational.
    pub hard: bool,
}

impl Verdict {
    /// Builds a verdict for `lhs <= rhs`.
    pub fn upper_bound(anchor: impl Into<String>, lhs: f64, rhs: f64, hard: bool) -> Self {
        let slack = rhs - lhs;
        Verdict {
            anchor: anchor.into(),
            lhs,
            rhs,
            slack,
            pass: slack >= 0.0 && slack.is_finite(),
            hard,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slack_sign_decides_pass() {
        let good = Verdict::upper_bound("x", 1.0, 2.0, true);
        assert!(good.pass && good.slack == 1.0);
        let bad = Verdict::upper_bound("x", 2.0, 1.0, true);
        assert!(!bad.pass && bad.slack == -1.0);
        let nan = Verdict::upper_bound("x", f64::NAN, 1.0, true);
        assert!(!nan.pass);
    }

    #[test]
    fn verdict_round_trips_through_json() {
        let v = Verdict::upper_bound("lem:example", 0.5, 1.5, false);
        let text = serde_json::to_string(&v).unwrap();
        let back: Verdict = serde_json::from_str(&text).unwrap();
        assert_eq!(back.anchor, "lem:example");
        assert_eq!(back.lhs, 0.5);
        assert!(!back.hard);
    }
}
