use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deepesn::data::{synthetic_dataset, SyntheticSpec, BENCHMARKS};
use deepesn::selection::{count_free_parameters, solve_units_for_budget, GatedKind};
use deepesn::EsnError;
use deepesn_cli::config::{Command, ExperimentConfig};
use deepesn_cli::{error_record, execute_to_file, validate_data, Overrides};

/// Deep Echo State Network experiments on piano-roll next-step prediction.
#[derive(Parser, Debug)]
#[command(name = "deepesn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train and test one hyperparameter point over several guesses.
    Run(RunArgs),
    /// Grid search on the validation split, report the selected point.
    Grid(RunArgs),
    /// Check a dataset file and print diagnostics.
    ValidateData {
        #[arg(env = "DEEPESN_DATASET")]
        path: PathBuf,
    },
    /// Write a synthetic piano-roll dataset.
    Synth {
        #[arg(long, env = "DEEPESN_OUT")]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        dim: usize,
        #[arg(long, default_value_t = 6)]
        train: usize,
        #[arg(long, default_value_t = 2)]
        valid: usize,
        #[arg(long, default_value_t = 2)]
        test: usize,
        #[arg(long, default_value_t = 8)]
        min_len: usize,
        #[arg(long, default_value_t = 16)]
        max_len: usize,
        #[arg(long, default_value = "synthetic")]
        name: String,
        #[arg(long, env = "DEEPESN_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Print free-parameter accounting for the four benchmarks.
    Params,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long, env = "DEEPESN_CONFIG")]
    config: PathBuf,
    #[arg(long, env = "DEEPESN_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "DEEPESN_WORKERS")]
    workers: Option<usize>,
    #[arg(long, env = "DEEPESN_OUT")]
    out: Option<PathBuf>,
}

fn run_experiment(args: &RunArgs, command: Command) -> Result<(), EsnError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    Overrides {
        seed: args.seed,
        workers: args.workers,
        out: args.out.clone(),
    }
    .apply(&mut cfg);
    let text = execute_to_file(&cfg, command)?;
    if cfg.output.is_none() {
        println!("{text}");
    } else {
        let v: serde_json::Value = serde_json::from_str(&text)?;
        let best = &v["selected"];
        eprintln!(
            "selected grid point {}: test ACC {:.4} ± {:.4} over {} guesses, {:.2}s",
            best["grid_index"],
            best["test_mean"].as_f64().unwrap_or(f64::NAN),
            best["test_std"].as_f64().unwrap_or(f64::NAN),
            best["test_acc"].as_array().map_or(0, Vec::len),
            v["elapsed_seconds"].as_f64().unwrap_or(f64::NAN),
        );
    }
    Ok(())
}

fn params_table() -> serde_json::Value {
    let rows: Vec<serde_json::Value> = BENCHMARKS
        .iter()
        .map(|&(name, dim)| {
            let d = dim as u64;
            let budget = count_free_parameters(d, 30, 200);
            let gated = |k: GatedKind| {
                let (units, params) = solve_units_for_budget(k, d, d, budget).expect("budget is large");
                serde_json::json!({"units": units, "free_parameters": params})
            };
            serde_json::json!({
                "dataset": name,
                "dim": dim,
                "deepesn": {"units": 6000, "free_parameters": budget},
                "esn": {"units": 6000, "free_parameters": count_free_parameters(d, 1, 6000)},
                "srn": gated(GatedKind::Srn),
                "lstm": gated(GatedKind::Lstm),
                "gru": gated(GatedKind::Gru),
            })
        })
        .collect();
    serde_json::Value::Array(rows)
}

fn dispatch(cli: Cli) -> Result<(), EsnError> {
    match cli.command {
        Cmd::Run(args) => run_experiment(&args, Command::Run),
        Cmd::Grid(args) => run_experiment(&args, Command::Grid),
        Cmd::ValidateData { path } => {
            let report = validate_data(&path)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Cmd::Synth {
            out,
            dim,
            train,
            valid,
            test,
            min_len,
            max_len,
            name,
            seed,
        } => {
            let spec = SyntheticSpec {
                dim,
                train,
                valid,
                test,
                min_len,
                max_len,
                ..SyntheticSpec::smoke()
            };
            synthetic_dataset(&name, &spec, seed)?.save(&out)?;
            Ok(())
        }
        Cmd::Params => {
            println!("{}", serde_json::to_string_pretty(&params_table())?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("DEEPESN_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            match e {
                EsnError::Config(_) | EsnError::Data(_) | EsnError::Parse(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
