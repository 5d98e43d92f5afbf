use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fraclab_cli::{export, ExportFormat, RunOptions, EXIT_OK, EXIT_USAGE, OUT_ENV};

#[derive(Parser)]
#[command(name = "fraclab", version, about = "Numerical experiments for fractional Calderón-type inverse problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named experiment and write its artifacts and manifest.
    Run {
        experiment: String,
        /// INI config; the shipped default is used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-encode a raw artifact (with its JSON sidecar) as csv or raw.
    Export {
        artifact: PathBuf,
        #[arg(long)]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            return ExitCode::from(code as u8);
        }
    };
    let code = match cli.command {
        Command::Run { experiment, config, threads, seed } => {
            let out_dir = std::env::var_os(OUT_ENV).map(PathBuf::from);
            let opts = RunOptions { threads: Some(threads), seed, out_dir };
            fraclab_cli::run(&experiment, config.as_deref(), &opts)
        }
        Command::Export { artifact, format, out } => {
            match format.parse::<ExportFormat>().and_then(|f| export(&artifact, f, out.as_deref())) {
                Ok(path) => {
                    println!("{}", path.display());
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_USAGE
                }
            }
        }
    };
    ExitCode::from(code as u8)
}
