//! Command-line entry point: whole-pipeline runs plus per-module
//! subcommands, all driven by one JSON configuration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::Matrix3;

use toruslab::config::RunConfig;
use toruslab::lattice::{reduced_basis, successive_minima, LatticeGram};
use toruslab::pipeline::{
    cover_stage, exit_code, hodge_stage, lattice_stage, map_stage, omega_stage, run_pipeline,
    sweep_stage, to_json, write_run_outputs,
};
use toruslab::report::Verdict;
use toruslab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "toruslab",
    version,
    about = "Flat-metric recovery diagnostics on the three-torus"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Directory for output files (default: current directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the grid resolution.
    #[arg(long)]
    grid: Option<usize>,
    /// Override the random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the solver tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: writes report.json and sweep.csv.
    Run(Common),
    /// Cohomology Gram matrices and solver statistics.
    Hodge(Common),
    /// Lattice reduction checks; `--gram` skips the solver and reduces a
    /// bare Gram matrix file instead.
    Lattice {
        /// JSON run configuration (not needed with --gram).
        #[arg(long, required_unless_present = "gram")]
        config: Option<PathBuf>,
        /// JSON file holding one symmetric positive-definite 3x3 matrix
        /// (nine numbers, row-major, or three rows of three).
        #[arg(long)]
        gram: Option<PathBuf>,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Harmonic map assembly and curvature-deficit rows.
    Map(Common),
    /// Covering constant and oscillation bounds.
    Cover {
        #[command(flatten)]
        common: Common,
        /// Override the neighborhood size.
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Region extraction, determinant diagnostics, and flat recovery.
    Omega(Common),
    /// Amplitude sweep; prints the CSV table.
    Sweep(Common),
}

fn load_config(path: &Path, grid: Option<usize>, seed: Option<u64>, tol: Option<f64>) -> Result<RunConfig> {
    let mut config = RunConfig::load(path)?;
    if let Some(n) = grid {
        config.grid = n;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(t) = tol {
        config.solver.tol = t;
    }
    config.validate()?;
    Ok(config)
}

fn print_failures(verdicts: &[Verdict]) {
    for v in verdicts.iter().filter(|v| v.hard && !v.pass) {
        eprintln!("FAIL {}: {} > {}", v.anchor, v.lhs, v.rhs);
    }
}

/// Prints a block as JSON and turns its verdicts into the process result.
fn emit(block_json: String, verdicts: &[Verdict]) -> u8 {
    print!("{block_json}");
    print_failures(verdicts);
    exit_code(verdicts)
}

fn parse_gram_file(path: &PathBuf) -> Result<Matrix3<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("gram read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("gram parse: {e}")))?;
    let flat: Vec<f64> = if let Ok(rows) = serde_json::from_value::<Vec<Vec<f64>>>(value.clone()) {
        rows.into_iter().flatten().collect()
    } else {
        serde_json::from_value::<Vec<f64>>(value)
            .map_err(|e| Error::Config(format!("gram parse: {e}")))?
    };
    if flat.len() != 9 {
        return Err(Error::Config(format!(
            "gram file must hold 9 numbers, got {}",
            flat.len()
        )));
    }
    Ok(Matrix3::from_row_slice(&flat))
}

fn lattice_from_gram(path: &PathBuf) -> Result<u8> {
    let gram = LatticeGram::new(parse_gram_file(path)?)?;
    let minima = successive_minima(&gram)?;
    let basis = reduced_basis(&gram)?;
    #[derive(serde::Serialize)]
    struct GramReport {
        minima: [f64; 3],
        minima_squared: [f64; 3],
        basis_columns: [[i64; 3]; 3],
        basis_norms: [f64; 3],
        unimodular: bool,
    }
    let mut basis_columns = [[0i64; 3]; 3];
    for (c, col) in basis_columns.iter_mut().enumerate() {
        for (r, entry) in col.iter_mut().enumerate() {
            *entry = basis.columns[c][r];
        }
    }
    let report = GramReport {
        minima: minima.values,
        minima_squared: [
            minima.values[0] * minima.values[0],
            minima.values[1] * minima.values[1],
            minima.values[2] * minima.values[2],
        ],
        basis_columns,
        basis_norms: basis.norms,
        unimodular: basis.unimodular,
    };
    print!("{}", to_json(&report)?);
    Ok(0)
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.cmd {
        Command::Run(c) => {
            let config = load_config(&c.config, c.grid, c.seed, c.tol)?;
            let report = run_pipeline(&config)?;
            let (report_path, csv_path) = write_run_outputs(&report, c.out.as_deref())?;
            let hard_total = report.verdicts.iter().filter(|v| v.hard).count();
            let hard_passed = report
                .verdicts
                .iter()
                .filter(|v| v.hard && v.pass)
                .count();
            println!(
                "wrote {} and {}; hard verdicts {hard_passed}/{hard_total} passed",
                report_path.display(),
                csv_path.display()
            );
            print_failures(&report.verdicts);
            Ok(exit_code(&report.verdicts))
        }
        Command::Hodge(c) => {
            let config = load_config(&c.config, c.grid, c.seed, c.tol)?;
            let block = hodge_stage(&config)?;
            print!("{}", to_json(&block)?);
            Ok(0)
        }
        Command::Lattice {
            config,
            gram,
            grid,
            tol,
        } => {
            if let Some(path) = gram {
                return lattice_from_gram(&path);
            }
            let config = load_config(&config.expect("clap enforces config without gram"), grid, None, tol)?;
            let (block, verdicts) = lattice_stage(&config)?;
            Ok(emit(to_json(&block)?, &verdicts))
        }
        Command::Map(c) => {
            let config = load_config(&c.config, c.grid, c.seed, c.tol)?;
            let (block, verdicts) = map_stage(&config)?;
            Ok(emit(to_json(&block)?, &verdicts))
        }
        Command::Cover { common: c, eta } => {
            let config = load_config(&c.config, c.grid, c.seed, c.tol)?;
            let (block, verdicts) = cover_stage(&config, eta)?;
            Ok(emit(to_json(&block)?, &verdicts))
        }
        Command::Omega(c) => {
            let config = load_config(&c.config, c.grid, c.seed, c.tol)?;
            let (block, verdicts) = omega_stage(&config)?;
            Ok(emit(to_json(&block)?, &verdicts))
        }
        Command::Sweep(c) => {
            let config = load_config(&c.config, c.grid, c.seed, c.tol)?;
            let (_, verdicts, csv) = sweep_stage(&config)?;
            if let Some(dir) = &c.out {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join(&config.csv_path), &csv)?;
            }
            print!("{csv}");
            print_failures(&verdicts);
            Ok(exit_code(&verdicts))
        }
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("TORUSLAB_THREADS") {
        match threads.parse::<usize>() {
            Ok(t) if t > 0 => {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build_global();
            }
            _ => {
                eprintln!("error: TORUSLAB_THREADS must be a positive integer, got {threads:?}");
                return ExitCode::from(1);
            }
        }
    }
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
