use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mose_cli::config::OUTPUT_DIR_ENV;
use mose_cli::{CliError, ExperimentConfig};

/// Sequential editing experiments on synthetic linear memories.
///
/// Any config field can be overridden with trailing `--section.field=value`
/// flags. `MOSE_OUTPUT_DIR` replaces `output.directory` unless a flag sets it.
#[derive(Parser)]
#[command(name = "mose", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one editor and write its artifacts.
    Run {
        config: PathBuf,
        #[arg(
            trailing_var_arg = true,
            allow_hyphen_values = true,
            value_name = "--KEY.PATH=VALUE"
        )]
        overrides: Vec<String>,
    },
    /// Run several editors on a shared memory and stream.
    Compare {
        config: PathBuf,
        /// Comma-separated editor names.
        #[arg(long, value_delimiter = ',', required = true)]
        editors: Vec<String>,
        #[arg(
            trailing_var_arg = true,
            allow_hyphen_values = true,
            value_name = "--KEY.PATH=VALUE"
        )]
        overrides: Vec<String>,
    },
    /// Multiplicative versus additive chains of 500 updates.
    Figure2 {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(
            trailing_var_arg = true,
            allow_hyphen_values = true,
            value_name = "--KEY.PATH=VALUE"
        )]
        overrides: Vec<String>,
    },
}

fn output_env() -> Option<PathBuf> {
    std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            mose_cli::run(&cfg)?;
            eprintln!("wrote {}", cfg.output.directory.display());
        }
        Command::Compare {
            config,
            editors,
            overrides,
        } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            mose_cli::compare(&cfg, &editors)?;
            eprintln!("wrote {}", cfg.output.directory.display());
        }
        Command::Figure2 { seed, overrides } => {
            let cfg = ExperimentConfig::from_value(
                mose_cli::figure2_config(seed),
                &overrides,
                output_env(),
            )?;
            let editors: Vec<String> = mose_cli::FIGURE2_EDITORS
                .iter()
                .map(|s| s.to_string())
                .collect();
            let summary = mose_cli::compare(&cfg, &editors)?;
            for e in &summary {
                eprintln!(
                    "{:<18} norm ratio {:.6}  cond ratio {:.6}",
                    e.editor, e.stability.frob_norm.ratio, e.stability.cond_number.ratio
                );
            }
            eprintln!("wrote {}", cfg.output.directory.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
