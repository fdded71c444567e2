use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;
use shtc_cli::commands;
use shtc_cli::{CliError, CliResult, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "shtc", version, about = "Hierarchical transform coding of attribute tables")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; SHTC_THREADS is used when absent.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// λ, or a comma-separated grid for `bench`.
    #[arg(long, global = true, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    /// Method preset, or a comma-separated list for `bench`.
    #[arg(long, global = true)]
    method: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a codec on a table; writes model.shtcm and train_log.csv.
    Fit { input: PathBuf },
    /// Encode a table with a fitted model; writes table.shtc.
    Encode {
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Decode a .shtc file to a table.
    Decode {
        file: PathBuf,
        /// Output file name inside --out; `.csv` or raw f32 otherwise.
        #[arg(long, default_value = "decoded.csv")]
        name: String,
    },
    /// Compare two tables; with --bitstream also report the rate split.
    Eval {
        original: PathBuf,
        decoded: PathBuf,
        #[arg(long)]
        bitstream: Option<PathBuf>,
    },
    /// R-D sweep over methods and λ on a table or the synthetic source.
    Bench {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// YCbCr distortion between two binary PPM images.
    ImageMetric { reference: PathBuf, decoded: PathBuf },
    /// Correlation and energy matrices of raw, DCT, Haar and KLT coefficients.
    Report {
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<Value> {
    let overrides = Overrides {
        seed: cli.seed,
        threads: cli.threads,
        lambda: cli.lambda.clone(),
        method: cli.method.as_deref().map(commands::split_methods),
    };
    let cfg = RunConfig::load(cli.config.as_deref())?.resolve(&overrides)?;
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    }
    let out = cli.out.as_path();
    match &cli.cmd {
        Cmd::Fit { input } => commands::fit(input, &cfg, out),
        Cmd::Encode { input, model } => commands::encode(input, model, out),
        Cmd::Decode { file, name } => commands::decode(file, out, name),
        Cmd::Eval {
            original,
            decoded,
            bitstream,
        } => commands::eval(original, decoded, bitstream.as_deref()),
        Cmd::Bench { input } => {
            let (v, warnings) = commands::bench(input.as_deref(), &cfg, out)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            Ok(v)
        }
        Cmd::ImageMetric { reference, decoded } => commands::image_metric(reference, decoded),
        Cmd::Report { input } => commands::report(input.as_deref(), &cfg, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(v) => {
            // a closed pipe downstream is not an error worth reporting
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&v).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("shtc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
