use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use ascr::cli::{self, Command};
use ascr::config::RunConfig;
use clap::{Parser, Subcommand};

/// Acoustic spatial capture-recapture: fit call-density models to
/// multi-sensor detections, simulate surveys and check designs.
///
/// Every command reads a JSON run configuration (`ascr config-schema`
/// prints all fields with their defaults) and writes its artifacts to the
/// output directory. Exit codes: 0 success, 2 configuration error, 3 data
/// error, 4 numerical failure.
#[derive(Parser)]
#[command(name = "ascr", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "ascr-out")]
    out: PathBuf,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Replaces every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit one density formula: fit.json, density.csv, mesh.csv, truncation.json.
    Fit,
    /// Simulate datasets: replicate_NNN/ matrices with truth.json, sensors.csv, mesh.csv, fit_config.json.
    Simulate,
    /// Run simulation scenarios and refit analysis models: metrics.csv, replicates.csv, metrics.json.
    Scenarios,
    /// Fit, then bootstrap over calls: bootstrap.json, bootstrap_replicates.csv, qcd.csv.
    Bootstrap,
    /// Fit and rank candidate formulas by AIC: selection.csv.
    Select,
    /// Check that boundary cells are rarely multiply detected: buffer.json.
    CheckBuffer,
    /// Print configuration defaults and field descriptions as JSON.
    ConfigSchema,
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let command = match args.command {
        Cmd::Fit => Command::Fit,
        Cmd::Simulate => Command::Simulate,
        Cmd::Scenarios => Command::Scenarios,
        Cmd::Bootstrap => Command::Bootstrap,
        Cmd::Select => Command::Select,
        Cmd::CheckBuffer => Command::CheckBuffer,
        Cmd::ConfigSchema => {
            print_json(&cli::config_schema());
            return ExitCode::SUCCESS;
        }
    };
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot set thread count: {e}");
        }
    }
    let result = (|| {
        let mut cfg = match &args.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = args.seed {
            cfg.set_seed(seed);
        }
        cli::run(command, &cfg, &args.out)
    })();
    match result {
        Ok(outcome) => {
            print_json(&outcome);
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            let report = cli::error_report(&e);
            eprintln!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
            if args.out.is_dir() {
                let _ = std::fs::write(args.out.join("error.json"), report.to_string() + "\n");
            }
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}

/// Prints to stdout, ignoring a closed pipe.
fn print_json<T: serde::Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    let _ = writeln!(std::io::stdout(), "{text}");
}
