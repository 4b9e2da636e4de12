//! `ppcr`: bound queries, scenario checks and Monte Carlo runs.
//!
//! Exit codes: 0 success, 1 config or I/O error, 2 not identifiable,
//! 3 a requested assertion failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{ArgAction, Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use ppcr_core::bounds::ppcr_bound_gaussian;
use ppcr_core::experiments::{self, parse_json, ExperimentSpec, MatrixSpec, Sweep};
use ppcr_core::psdlinalg::PsdMatrix;
use ppcr_core::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_NOT_IDENTIFIABLE: u8 = 2;
const EXIT_ASSERTION: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "ppcr", version, about = "Privacy-preserving CR bounds and identification experiments")]
struct Cli {
    /// Worker threads for replications.
    #[arg(long, global = true, env = "PPCR_THREADS")]
    threads: Option<usize>,
    /// More diagnostics on stderr.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Privacy-preserving Fisher information and bound for H, S, Σ_w.
    Bound(BoundArgs),
    /// Run a scenario and write CSV output.
    Run(RunArgs),
    /// Identifiability and admissibility audit of a scenario.
    Check(CheckArgs),
}

#[derive(Args, Debug)]
struct BoundArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "ppcr-out")]
    out: PathBuf,
    /// Also write an SVG plot per CSV.
    #[arg(long)]
    svg: bool,
    /// Budget grid `start:step:stop`.
    #[arg(long)]
    grid: Option<String>,
    /// Exit with status 3 when a result falls below its bound.
    #[arg(long)]
    assert_dominance: bool,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    grid: Option<String>,
}

/// A budget given as `s` (meaning `s I`) or as a matrix.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Budget {
    Scalar(f64),
    Matrix(MatrixSpec),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundConfig {
    h: MatrixSpec,
    s: Budget,
    #[serde(default)]
    sigma_w: Option<f64>,
    #[serde(default)]
    noise_cov: Option<MatrixSpec>,
    /// Seed of uniformly drawn matrices.
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Serialize)]
struct BoundOutput {
    identifiable: bool,
    pp_fisher: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_ppcr: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<f64>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn config_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| config_err("--config", format!("{}: {e}", path.display())))
}

fn psd(field: &str, m: DMatrix<f64>) -> Result<PsdMatrix<f64>, Error> {
    PsdMatrix::from_matrix(m).map_err(|e| config_err(field, e.to_string()))
}

fn cmd_bound(args: &BoundArgs) -> Result<u8, Error> {
    let cfg: BoundConfig = parse_json(&read(&args.config)?)?;
    let h = cfg.h.realize(cfg.seed, 0).map_err(|e| config_err("h", e.to_string()))?;
    let m = h.nrows();
    let s = match cfg.s {
        Budget::Scalar(v) if v >= 0.0 && v.is_finite() => PsdMatrix::scaled_identity(m, v),
        Budget::Scalar(_) => return Err(config_err("s", "must be finite and non-negative")),
        Budget::Matrix(spec) => psd("s", spec.realize(cfg.seed, 1).map_err(|e| config_err("s", e.to_string()))?)?,
    };
    let cov = match (cfg.sigma_w, cfg.noise_cov) {
        (Some(_), Some(_)) => return Err(config_err("noise_cov", "give either sigma_w or noise_cov")),
        (Some(sd), None) if sd > 0.0 && sd.is_finite() => PsdMatrix::scaled_identity(m, sd * sd),
        (Some(_), None) => return Err(config_err("sigma_w", "must be positive")),
        (None, Some(spec)) => psd(
            "noise_cov",
            spec.realize(cfg.seed, 2).map_err(|e| config_err("noise_cov", e.to_string()))?,
        )?,
        (None, None) => return Err(config_err("sigma_w", "missing; give sigma_w or noise_cov")),
    };
    let res = ppcr_bound_gaussian(&h, &s, &cov).map_err(|e| match e {
        Error::DimensionMismatch { context, .. } => config_err(context, e.to_string()),
        other => other,
    })?;
    let out = BoundOutput {
        identifiable: res.identifiable,
        pp_fisher: rows(res.pp_fisher.as_matrix()),
        trace: res.trace(),
        sigma_ppcr: res.sigma_ppcr.as_ref().map(|m| rows(m.as_matrix())),
    };
    println!("{}", serde_json::to_string_pretty(&out).expect("output serializes"));
    Ok(if res.identifiable { 0 } else { EXIT_NOT_IDENTIFIABLE })
}

fn load_spec(path: &Path, seed: Option<u64>, grid: Option<&str>) -> Result<ExperimentSpec, Error> {
    let mut spec = ExperimentSpec::from_file(path)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    if let Some(g) = grid {
        spec.sweep = Some(Sweep::parse(g)?);
    }
    Ok(spec)
}

fn cmd_run(args: &RunArgs, verbose: u8) -> Result<u8, Error> {
    let mut spec = load_spec(&args.config, args.seed, args.grid.as_deref())?;
    if let Some(r) = args.reps {
        spec.reps = r;
    }
    spec.validate()?;
    let started = Instant::now();
    let result = experiments::run(&spec)?;
    let files = result.write_to(&args.out, args.svg)?;
    print!("{}", result.summary());
    if verbose > 0 {
        eprintln!("finished in {:.2} s", started.elapsed().as_secs_f64());
        for f in &files {
            eprintln!("wrote {}", f.display());
        }
    }
    if args.assert_dominance && !result.dominance_violations().is_empty() {
        return Ok(EXIT_ASSERTION);
    }
    Ok(0)
}

fn cmd_check(args: &CheckArgs) -> Result<u8, Error> {
    let spec = load_spec(&args.config, args.seed, args.grid.as_deref())?;
    let report = experiments::check_scenario(&spec)?;
    for item in &report.items {
        let tag = if item.passed { "PASS" } else { "FAIL" };
        println!("{tag} {}: {}", item.criterion, item.detail);
    }
    for e in &report.events {
        println!("note: {e}");
    }
    Ok(if report.passed() {
        0
    } else if report.identifiability_failed() {
        EXIT_NOT_IDENTIFIABLE
    } else {
        EXIT_ASSERTION
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let outcome = match &cli.command {
        Command::Bound(a) => cmd_bound(a),
        Command::Run(a) => cmd_run(a, cli.verbose),
        Command::Check(a) => cmd_check(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(Error::NotIdentifiable) => {
            eprintln!("error: {}", Error::NotIdentifiable);
            ExitCode::from(EXIT_NOT_IDENTIFIABLE)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
