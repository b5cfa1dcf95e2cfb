//! Command-line front end: simulate, analyze, partner, equiv, identify.
//!
//! Exit codes: 0 success (and "equivalent" for `equiv`), 1 parse/read error,
//! 2 invalid state, 3 closure cap exceeded, 10 not equivalent.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spinid::dynamics::DEFAULT_GRID;
use spinid::equivalence::{equivalence_test, partner_pair};
use spinid::identify::{fit_known_state, fit_unknown_state, FitOptions, ParameterVector};
use spinid::io::{
    read_dataset_dir, read_json, trace_to_csv, write_atomic, write_json, FitReport, ModelFile,
    ScheduleFile,
};
use spinid::liealg::analyze;
use spinid::Error;

const EXIT_PARSE: u8 = 1;
const EXIT_INVALID_STATE: u8 = 2;
const EXIT_CAP: u8 = 3;
const EXIT_NOT_EQUIVALENT: u8 = 10;

#[derive(Parser)]
#[command(
    name = "spinid",
    about = "Simulate, analyze, and identify driven spin-1/2 exchange networks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate magnetization traces for a model file under a schedule.
    Simulate {
        /// Model JSON (must embed initial_state).
        #[arg(long)]
        model: PathBuf,
        /// Schedule JSON.
        #[arg(long)]
        schedule: PathBuf,
        /// Sample spacing.
        #[arg(long, default_value_t = DEFAULT_GRID)]
        grid: f64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Controllability/observability report for a model file.
    Analyze {
        #[arg(long)]
        model: PathBuf,
        /// Output JSON path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Construct the sign-flip partner of a pair file.
    Partner {
        /// Pair JSON (model with initial_state).
        #[arg(long)]
        pair: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Numerically certify output equivalence of two pair files.
    Equiv {
        #[arg(long = "pair-a")]
        pair_a: PathBuf,
        #[arg(long = "pair-b")]
        pair_b: PathBuf,
        /// Number of random schedules compared.
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Deviation tolerance for the verdict.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Verdict JSON path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit couplings and ratios against a recorded dataset directory.
    Identify {
        #[arg(long = "data-dir")]
        data_dir: PathBuf,
        /// Multi-start count.
        #[arg(long, default_value_t = 1)]
        starts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fit report JSON path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}

type CmdResult = Result<ExitCode, (u8, String)>;

fn fail(code: u8, err: impl std::fmt::Display) -> (u8, String) {
    (code, err.to_string())
}

/// Map library errors onto the documented exit codes.
fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidState(_) | Error::NotHermitian { .. } | Error::ScalarState => {
            EXIT_INVALID_STATE
        }
        Error::CapExceeded { .. } => EXIT_CAP,
        _ => EXIT_PARSE,
    }
}

fn lib<T>(res: spinid::Result<T>) -> Result<T, (u8, String)> {
    res.map_err(|e| (exit_code_for(&e), e.to_string()))
}

fn read_model(path: &Path) -> Result<ModelFile, (u8, String)> {
    read_json::<ModelFile>(path).map_err(|e| fail(EXIT_PARSE, format!("{}: {e}", path.display())))
}

fn emit_json<T: serde::Serialize>(out: Option<&Path>, value: &T) -> Result<(), (u8, String)> {
    match out {
        Some(path) => write_json(path, value).map_err(|e| fail(EXIT_PARSE, e)),
        None => {
            let text = serde_json::to_string_pretty(value).map_err(|e| fail(EXIT_PARSE, e))?;
            println!("{text}");
            Ok(())
        }
    }
}

fn run(command: Command) -> CmdResult {
    match command {
        Command::Simulate { model, schedule, grid, out } => {
            let model_file = read_model(&model)?;
            let sched_file: ScheduleFile = read_json(&schedule)
                .map_err(|e| fail(EXIT_PARSE, format!("{}: {e}", schedule.display())))?;
            let net = lib(model_file.network())?;
            let state = lib(model_file.state())?
                .ok_or_else(|| fail(EXIT_INVALID_STATE, "model file has no initial_state"))?;
            let sched = lib(sched_file.schedule())?;
            let trace = lib(spinid::dynamics::magnetization_trace(&net, &sched, &state, grid))?;
            write_atomic(&out, trace_to_csv(&trace).as_bytes())
                .map_err(|e| fail(EXIT_PARSE, e))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Analyze { model, out } => {
            let model_file = read_model(&model)?;
            let net = lib(model_file.network())?;
            let report = lib(analyze(&net))?;
            emit_json(out.as_deref(), &report)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Partner { pair, out } => {
            let pair_file = read_model(&pair)?;
            let pair = lib(pair_file.pair())?;
            let (partner, psd_ok) = partner_pair(&pair);
            let mut out_file = ModelFile::from_network(partner.network());
            out_file.initial_state =
                Some(spinid::io::StateSpec::from_state(partner.initial_state()));
            write_json(&out, &out_file).map_err(|e| fail(EXIT_PARSE, e))?;
            println!("psd_ok {psd_ok}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Equiv { pair_a, pair_b, trials, seed, tol, out } => {
            let a = lib(read_model(&pair_a)?.pair())?;
            let b = lib(read_model(&pair_b)?.pair())?;
            let verdict = lib(equivalence_test(&a, &b, trials, seed, tol))?;
            emit_json(out.as_deref(), &verdict)?;
            if verdict.equivalent {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(EXIT_NOT_EQUIVALENT))
            }
        }
        Command::Identify { data_dir, starts, seed, out } => {
            let loaded =
                read_dataset_dir(&data_dir).map_err(|e| (exit_code_for(&e), e.to_string()))?;
            let opts = FitOptions { starts, seed, ..FitOptions::default() };
            let edges = loaded.dataset.edges().to_vec();
            let guess = loaded.guess.clone().unwrap_or_else(|| default_guess(&loaded.dataset));
            let reports: Vec<FitReport> = match &loaded.known_state {
                Some(rho0) => {
                    let fit = lib(fit_known_state(&loaded.dataset, rho0, &guess, &opts))?;
                    vec![FitReport::new(&fit, &edges)]
                }
                None => {
                    let (primary, partner) =
                        lib(fit_unknown_state(&loaded.dataset, &guess, &opts))?;
                    println!(
                        "branch J: residual {:.6e}; branch -J: residual {:.6e}",
                        primary.residual, partner.residual
                    );
                    vec![FitReport::new(&primary, &edges), FitReport::new(&partner, &edges)]
                }
            };
            emit_json(out.as_deref(), &reports)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Fallback starting point when the hypothesis file carries no guess:
/// mid-range couplings and spread-out ratios.
fn default_guess(dataset: &spinid::identify::Dataset) -> ParameterVector {
    let j = vec![0.5; dataset.edges().len()];
    let gamma = (1..=dataset.n_spins()).map(|k| 0.5 + 0.5 * k as f64).collect();
    ParameterVector::new(j, gamma)
}
