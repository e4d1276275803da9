//! End-to-end orchestration: runs every diagnostic stage on one
//! configuration, assembles the report with its verdict list, and writes the
//! output files. Each stage is also exposed on its own for the per-module
//! subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::approx::{
    constant_approx, extract_omega, injectivity_count, level_sets, omega_diagnostics,
    pointwise_gram, recover_flat,
};
use crate::config::RunConfig;
use crate::convergence::{
    large_connected_subset, sweep, sweep_csv, FamilyMembership, SweepParams, SweepRow,
};
use crate::cover::{covering_constant, lift, oscillation_bounds, unit_cube_domain};
use crate::error::Result;
use crate::harmap::{
    build_map, l3_inequality_check, pointwise_norm, stern_report, HarmonicTorusMap, SternReport,
};
use crate::hodge::{coordinate_representatives, dual_gram, gram_matrix, SolverOptions};
use crate::lattice::{minkowski_and_dual_checks, LatticeGram};
use crate::mesh::{lp_norm, MetricField, PeriodicGrid};
use crate::report::Verdict;
use crate::tolerances::DUAL_DET_TOL_N32;

fn mat_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, entry) in row.iter_mut().enumerate() {
            *entry = m[(i, j)];
        }
    }
    out
}

/// Dual-determinant tolerance at the run's resolution: second-order in the
/// grid step, pinned at the reference resolution.
fn dual_det_tolerance(n: usize) -> f64 {
    DUAL_DET_TOL_N32 * (32.0 / n as f64).powi(2)
}

/// Cohomology Gram matrices and solver statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HodgeBlock {
    pub gram: [[f64; 3]; 3],
    pub dual_gram: [[f64; 3]; 3],
    pub det_product: f64,
    pub residuals: [f64; 3],
    pub iterations: [usize; 3],
    pub dual_residuals: [f64; 3],
    pub dual_iterations: [usize; 3],
}

/// Reduced-basis and successive-minima summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatticeBlock {
    /// Reduced basis, one integer column per entry.
    pub basis_columns: [[i64; 3]; 3],
    pub basis_norms: [f64; 3],
    pub minima: [f64; 3],
    pub dual_minima: [f64; 3],
    pub unimodular: bool,
    pub stsys1_bound: f64,
    pub stsys2_bound: f64,
}

/// One curvature-deficit row of the map block.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SternRow {
    pub l2: f64,
    pub l3: f64,
    pub deficit: f64,
    pub rhs: f64,
    pub slack: f64,
}

/// Harmonic-map summary: degree, frame, and curvature-deficit rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapBlock {
    pub degree: f64,
    pub orientation_flipped: bool,
    pub basis_columns: [[i64; 3]; 3],
    pub rneg_l2: f64,
    pub stern: [SternRow; 3],
}

/// Per-component oscillation numbers over the fundamental domain and its
/// neighborhood.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OscRow {
    pub osc_domain: f64,
    pub osc_eta: f64,
    pub bound_domain: f64,
    pub bound_eta: f64,
}

/// Covering-constant and oscillation summary, plus the norm-comparison rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverBlock {
    pub eta: f64,
    pub kappa: usize,
    pub oscillation: [OscRow; 3],
    pub l3_rows: [SternRow; 3],
}

/// Region-extraction and flat-recovery summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OmegaBlock {
    pub a: [[f64; 3]; 3],
    pub tau: f64,
    pub tau_warning: bool,
    pub threshold: f64,
    pub vol_omega: f64,
    pub vol_complement: f64,
    pub boundary_area: f64,
    pub sup_deficit: f64,
    pub e1_cells: usize,
    pub e2_cells: usize,
    pub omega_cells: usize,
    pub det_integral_omega: f64,
    pub det_integral_complement: f64,
    pub degree: f64,
    pub sign_constant: bool,
    pub l3_cubed_complement: f64,
    pub inf_det_gram: f64,
    pub det_a: f64,
    pub injective_hits: usize,
    pub injectivity_samples: usize,
    pub g_flat: [[f64; 3]; 3],
    pub c0_deficit: f64,
}

/// Sweep table and membership flags (trend verdicts live in the global
/// verdict list).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepBlock {
    pub baseline: SweepRow,
    pub rows: Vec<SweepRow>,
    pub membership: Vec<FamilyMembership>,
    pub rneg_floor: f64,
}

/// Everything one run produces: the echoed configuration, per-stage
/// diagnostic blocks, and the full verdict list. Serializes with a fixed
/// field order, so identical configurations yield byte-identical files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub hodge: HodgeBlock,
    pub lattice: LatticeBlock,
    pub map: MapBlock,
    pub cover: CoverBlock,
    pub omega: OmegaBlock,
    pub sweep: SweepBlock,
    pub verdicts: Vec<Verdict>,
    pub hard_pass: bool,
    pub all_pass: bool,
}

struct Prepared {
    field: MetricField,
    opts: SolverOptions,
}

fn prepare(config: &RunConfig) -> Result<Prepared> {
    config.validate()?;
    let grid = PeriodicGrid::new(config.grid)?;
    let field = MetricField::build(grid, &config.metric)?;
    Ok(Prepared {
        field,
        opts: config.solver,
    })
}

fn hodge_part(field: &MetricField, opts: &SolverOptions) -> Result<(HodgeBlock, Matrix3<f64>, Matrix3<f64>)> {
    let forms = coordinate_representatives(field, opts)?;
    let q1 = gram_matrix(field, &forms)?;
    let dual = dual_gram(field, opts)?;
    let block = HodgeBlock {
        gram: mat_rows(&q1),
        dual_gram: mat_rows(&dual.gram),
        det_product: q1.determinant() * dual.gram.determinant(),
        residuals: [forms[0].residual, forms[1].residual, forms[2].residual],
        iterations: [forms[0].iterations, forms[1].iterations, forms[2].iterations],
        dual_residuals: [
            dual.stats[0].residual,
            dual.stats[1].residual,
            dual.stats[2].residual,
        ],
        dual_iterations: [
            dual.stats[0].iterations,
            dual.stats[1].iterations,
            dual.stats[2].iterations,
        ],
    };
    Ok((block, q1, dual.gram))
}

fn lattice_part(
    config: &RunConfig,
    field: &MetricField,
    q1: Matrix3<f64>,
    q2: Matrix3<f64>,
) -> Result<(LatticeBlock, Vec<Verdict>)> {
    let checks = minkowski_and_dual_checks(
        &LatticeGram::new(q1)?,
        &LatticeGram::new(q2)?,
        config.sigma,
        field.total_volume(),
        dual_det_tolerance(config.grid),
    )?;
    let mut basis_columns = [[0i64; 3]; 3];
    for (c, col) in basis_columns.iter_mut().enumerate() {
        for (r, entry) in col.iter_mut().enumerate() {
            *entry = checks.basis.columns[c][r];
        }
    }
    let block = LatticeBlock {
        basis_columns,
        basis_norms: checks.basis.norms,
        minima: checks.minima.values,
        dual_minima: checks.dual_minima.values,
        unimodular: checks.basis.unimodular,
        stsys1_bound: checks.stsys1_bound,
        stsys2_bound: checks.stsys2_bound,
    };
    Ok((block, checks.verdicts))
}

fn stern_rows(stern: &SternReport) -> [SternRow; 3] {
    let mut rows = [SternRow {
        l2: 0.0,
        l3: 0.0,
        deficit: 0.0,
        rhs: 0.0,
        slack: 0.0,
    }; 3];
    for (row, c) in rows.iter_mut().zip(&stern.components) {
        *row = SternRow {
            l2: c.l2,
            l3: c.l3,
            deficit: c.deficit,
            rhs: c.rhs,
            slack: c.slack,
        };
    }
    rows
}

fn map_part(
    field: &MetricField,
    opts: &SolverOptions,
) -> Result<(HarmonicTorusMap, SternReport, MapBlock, Vec<Verdict>)> {
    let map = build_map(field, opts)?;
    let stern = stern_report(&map, field, 0.0)?;
    let mut basis_columns = [[0i64; 3]; 3];
    for (c, col) in basis_columns.iter_mut().enumerate() {
        for (r, entry) in col.iter_mut().enumerate() {
            *entry = map.basis.columns[c][r];
        }
    }
    let block = MapBlock {
        degree: map.degree,
        orientation_flipped: map.orientation_flipped,
        basis_columns,
        rneg_l2: stern.rneg_l2,
        stern: stern_rows(&stern),
    };
    let verdicts = stern.verdicts.clone();
    Ok((map, stern, block, verdicts))
}

fn cover_part(
    config: &RunConfig,
    field: &MetricField,
    map: &HarmonicTorusMap,
    eta: f64,
) -> Result<(CoverBlock, Vec<Verdict>)> {
    let domain = unit_cube_domain(field);
    let kappa = covering_constant(field, &domain, eta)?;

    let mut osc_rows = [OscRow {
        osc_domain: 0.0,
        osc_eta: 0.0,
        bound_domain: 0.0,
        bound_eta: 0.0,
    }; 3];
    // One oscillation report per component; the verdict list carries the
    // tightest instance of each bound so every anchor appears exactly once.
    let mut worst: [Option<Verdict>; 2] = [None, None];
    for (j, form) in map.components.iter().enumerate() {
        let lifted = lift(field, form)?;
        let du_l2 = lp_norm(field, &pointwise_norm(field, form), 2.0, None)?;
        let report = oscillation_bounds(&lifted, &domain, eta, kappa, config.sigma, field, du_l2)?;
        osc_rows[j] = OscRow {
            osc_domain: report.osc_domain,
            osc_eta: report.osc_eta,
            bound_domain: report.bound_domain,
            bound_eta: report.bound_eta,
        };
        for (slot, verdict) in worst.iter_mut().zip(&report.verdicts) {
            let replace = slot.as_ref().is_none_or(|held| verdict.slack < held.slack);
            if replace {
                *slot = Some(verdict.clone());
            }
        }
    }
    let mut verdicts: Vec<Verdict> = worst.into_iter().flatten().collect();

    let l3 = l3_inequality_check(
        map,
        field,
        config.sigma,
        eta,
        kappa,
        field.total_volume(),
    )?;
    let l3_rows = stern_rows(&SternReport {
        rneg_l2: 0.0,
        components: l3.components,
        verdicts: Vec::new(),
    });
    verdicts.extend(l3.verdicts);

    Ok((
        CoverBlock {
            eta,
            kappa,
            oscillation: osc_rows,
            l3_rows,
        },
        verdicts,
    ))
}

fn omega_part(
    config: &RunConfig,
    field: &MetricField,
    map: &HarmonicTorusMap,
) -> Result<(OmegaBlock, Vec<Verdict>)> {
    let gram = pointwise_gram(map, field)?;
    let approx = constant_approx(&gram, field, config.lambda, map)?;
    let sets = level_sets(&gram, field, &approx.a, approx.tau)?;
    let large = large_connected_subset(&sets.e2, config.lambda, field)?;
    let omega = extract_omega(&sets.e2, &approx, &gram, field, map)?;
    let diag = omega_diagnostics(&omega, map, field, &gram, &approx)?;
    let hits = injectivity_count(
        map,
        field,
        &omega.omega,
        config.injectivity_samples,
        config.seed,
    );
    let recovery = recover_flat(&approx, map, field, &omega.omega, approx.stern.rneg_l2)?;

    let mut verdicts = Vec::new();
    verdicts.extend(approx.verdicts.iter().cloned());
    verdicts.extend(sets.verdicts.iter().cloned());
    verdicts.extend(large.verdicts.iter().cloned());
    verdicts.extend(omega.verdicts.iter().cloned());
    verdicts.extend(diag.verdicts.iter().cloned());
    verdicts.extend(recovery.verdicts.iter().cloned());

    let block = OmegaBlock {
        a: mat_rows(&approx.a),
        tau: approx.tau,
        tau_warning: omega.tau_warning,
        threshold: omega.t0,
        vol_omega: omega.vol_omega,
        vol_complement: omega.vol_complement,
        boundary_area: omega.boundary_area,
        sup_deficit: omega.sup_deficit,
        e1_cells: sets.e1.count(),
        e2_cells: sets.e2.count(),
        omega_cells: omega.omega.count(),
        det_integral_omega: diag.det_integral_omega,
        det_integral_complement: diag.det_integral_complement,
        degree: diag.degree,
        sign_constant: diag.sign_constant,
        l3_cubed_complement: diag.l3_cubed_complement,
        inf_det_gram: diag.inf_det_gram,
        det_a: diag.det_a,
        injective_hits: hits,
        injectivity_samples: config.injectivity_samples,
        g_flat: mat_rows(&recovery.g_flat),
        c0_deficit: recovery.c0_deficit,
    };
    Ok((block, verdicts))
}

fn sweep_params(config: &RunConfig) -> SweepParams {
    SweepParams {
        n: config.grid,
        base: config.metric.clone(),
        eps: config.eps.clone(),
        lambda: config.lambda,
        eta: config.eta,
        vol_cap: config.vol_cap,
        rneg_cap: config.rneg_cap,
        kappa_cap: config.kappa_cap,
        solver: config.solver,
        samples: config.samples,
    }
}

fn sweep_part(config: &RunConfig) -> Result<(SweepBlock, Vec<Verdict>, String)> {
    let report = sweep(&sweep_params(config))?;
    let csv = sweep_csv(&report.rows);
    let block = SweepBlock {
        baseline: report.baseline,
        rows: report.rows,
        membership: report.membership,
        rneg_floor: report.rneg_floor,
    };
    Ok((block, report.verdicts, csv))
}

/// Cohomology stage on its own.
pub fn hodge_stage(config: &RunConfig) -> Result<HodgeBlock> {
    let prep = prepare(config)?;
    hodge_part(&prep.field, &prep.opts).map(|(block, _, _)| block)
}

/// Lattice stage on its own (solves the cohomology problems first).
pub fn lattice_stage(config: &RunConfig) -> Result<(LatticeBlock, Vec<Verdict>)> {
    let prep = prepare(config)?;
    let (_, q1, q2) = hodge_part(&prep.field, &prep.opts)?;
    lattice_part(config, &prep.field, q1, q2)
}

/// Map stage on its own.
pub fn map_stage(config: &RunConfig) -> Result<(MapBlock, Vec<Verdict>)> {
    let prep = prepare(config)?;
    map_part(&prep.field, &prep.opts).map(|(_, _, block, verdicts)| (block, verdicts))
}

/// Covering/oscillation stage on its own; `eta_override` substitutes the
/// configured neighborhood size.
pub fn cover_stage(config: &RunConfig, eta_override: Option<f64>) -> Result<(CoverBlock, Vec<Verdict>)> {
    let prep = prepare(config)?;
    let (map, _, _, _) = map_part(&prep.field, &prep.opts)?;
    cover_part(config, &prep.field, &map, eta_override.unwrap_or(config.eta))
}

/// Region-extraction stage on its own.
pub fn omega_stage(config: &RunConfig) -> Result<(OmegaBlock, Vec<Verdict>)> {
    let prep = prepare(config)?;
    let (map, _, _, _) = map_part(&prep.field, &prep.opts)?;
    omega_part(config, &prep.field, &map)
}

/// Sweep stage on its own; returns the block, trend verdicts, and the CSV.
pub fn sweep_stage(config: &RunConfig) -> Result<(SweepBlock, Vec<Verdict>, String)> {
    config.validate()?;
    sweep_part(config)
}

/// Runs every stage once and assembles the full report. The verdict list
/// holds each evaluated inequality exactly once.
pub fn run_pipeline(config: &RunConfig) -> Result<RunReport> {
    let prep = prepare(config)?;
    let (hodge_block, q1, q2) = hodge_part(&prep.field, &prep.opts)?;
    let (lattice_block, lattice_verdicts) = lattice_part(config, &prep.field, q1, q2)?;
    let (map, _, map_block, map_verdicts) = map_part(&prep.field, &prep.opts)?;
    let (cover_block, cover_verdicts) = cover_part(config, &prep.field, &map, config.eta)?;
    let (omega_block, omega_verdicts) = omega_part(config, &prep.field, &map)?;
    let (sweep_block, sweep_verdicts, _) = sweep_part(config)?;

    let mut verdicts = Vec::new();
    verdicts.extend(lattice_verdicts);
    verdicts.extend(map_verdicts);
    verdicts.extend(cover_verdicts);
    verdicts.extend(omega_verdicts);
    verdicts.extend(sweep_verdicts);
    debug_assert!(
        {
            let mut anchors: Vec<&str> = verdicts.iter().map(|v| v.anchor.as_str()).collect();
            anchors.sort_unstable();
            anchors.windows(2).all(|w| w[0] != w[1])
        },
        "duplicate verdict anchor in the report"
    );

    let hard_pass = verdicts.iter().filter(|v| v.hard).all(|v| v.pass);
    let all_pass = verdicts.iter().all(|v| v.pass);
    Ok(RunReport {
        config: config.clone(),
        hodge: hodge_block,
        lattice: lattice_block,
        map: map_block,
        cover: cover_block,
        omega: omega_block,
        sweep: sweep_block,
        verdicts,
        hard_pass,
        all_pass,
    })
}

/// Stable JSON rendering of any report piece (pretty, trailing newline).
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

/// Writes `report.json` and `sweep.csv` next to each other and returns the
/// two paths.
pub fn write_run_outputs(
    report: &RunReport,
    out_dir: Option<&Path>,
) -> Result<(PathBuf, PathBuf)> {
    let dir = out_dir.unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let report_path = dir.join(&report.config.report_path);
    let csv_path = dir.join(&report.config.csv_path);
    fs::write(&report_path, to_json(report)?)?;
    fs::write(&csv_path, sweep_csv(&report.sweep.rows))?;
    Ok((report_path, csv_path))
}

/// Process exit code for a verdict list: 0 when every hard invariant holds,
/// 2 when any fails. Soft rows measure unknown constants against unit
/// references and never gate a run.
pub fn exit_code(verdicts: &[Verdict]) -> u8 {
    if verdicts.iter().filter(|v| v.hard).all(|v| v.pass) {
        0
    } else {
        2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_config(n: usize) -> RunConfig {
        let text = format!(
            r#"{{"grid": {n},
                "metric": {{"kind": "constant", "matrix": [1,0,0, 0,1,0, 0,0,1]}},
                "eps": [0.2, 0.1],
                "samples": 12}}"#
        );
        RunConfig::from_json(&text).unwrap()
    }

    #[test]
    fn flat_run_passes_every_hard_verdict() {
        let report = run_pipeline(&flat_config(8)).unwrap();
        assert!(report.hard_pass);
        assert_eq!(exit_code(&report.verdicts), 0);
        for v in report.verdicts.iter().filter(|v| v.hard) {
            assert!(v.pass, "{}: {} vs {}", v.anchor, v.lhs, v.rhs);
        }
        // Flat geometry: identity grams, unit degree, empty complement.
        assert!((report.hodge.det_product - 1.0).abs() < 1e-6);
        assert!((report.map.degree - 1.0).abs() < 1e-10);
        assert_eq!(report.omega.vol_complement, 0.0);
        assert_eq!(report.cover.kappa, 8);
        assert!(report.omega.c0_deficit < 1e-8);
    }

    #[test]
    fn verdict_anchors_are_unique() {
        let report = run_pipeline(&flat_config(8)).unwrap();
        let mut anchors: Vec<&str> = report.verdicts.iter().map(|v| v.anchor.as_str()).collect();
        let total = anchors.len();
        anchors.sort_unstable();
        anchors.dedup();
        assert_eq!(anchors.len(), total);
    }

    #[test]
    fn oversized_systole_hypothesis_fails_the_run() {
        let mut config = flat_config(8);
        config.sigma = 10.0;
        let report = run_pipeline(&config).unwrap();
        assert!(!report.hard_pass);
        assert_eq!(exit_code(&report.verdicts), 2);
        // The failure is in the hypothesis-consistency checks, not an error.
        let failing: Vec<&str> = report
            .verdicts
            .iter()
            .filter(|v| v.hard && !v.pass)
            .map(|v| v.anchor.as_str())
            .collect();
        assert!(
            failing
                .iter()
                .any(|a| a.contains("latice_constant_systole_bound")
                    || a.contains("u_bounded_fund_domain")),
            "{failing:?}"
        );
    }

    #[test]
    fn report_json_round_trips_and_is_deterministic() {
        let report = run_pipeline(&flat_config(8)).unwrap();
        let text = to_json(&report).unwrap();
        let back: RunReport = serde_json::from_str(&text).unwrap();
        assert_eq!(to_json(&back).unwrap(), text);
        let report2 = run_pipeline(&flat_config(8)).unwrap();
        assert_eq!(to_json(&report2).unwrap(), text);
    }

    #[test]
    fn run_outputs_land_in_the_requested_directory() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_pipeline(&flat_config(8)).unwrap();
        let (report_path, csv_path) = write_run_outputs(&report, Some(dir.path())).unwrap();
        assert!(report_path.exists());
        let csv = fs::read_to_string(&csv_path).unwrap();
        assert!(csv.starts_with(
            "eps, rneg_l2, tau, omega_c_vol, omega_bdry, c0_deficit, gh_bound, a_drift"
        ));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn stage_functions_agree_with_the_full_run() {
        let config = flat_config(8);
        let report = run_pipeline(&config).unwrap();
        let hodge = hodge_stage(&config).unwrap();
        assert_eq!(to_json(&hodge).unwrap(), to_json(&report.hodge).unwrap());
        let (cover, _) = cover_stage(&config, None).unwrap();
        assert_eq!(cover.kappa, report.cover.kappa);
        let (sweep_block, _, csv) = sweep_stage(&config).unwrap();
        assert_eq!(sweep_block.rows.len(), 2);
        assert_eq!(csv.lines().count(), 3);
    }
}
