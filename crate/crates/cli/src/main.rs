mod args;
mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use config::CliConfig;
use error::{CliError, CliResult};

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::user("InvalidArgument", "--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::internal("Internal", e))?;
    }
    let cfg = CliConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::DatasetBuild(a) => commands::dataset_build(cfg, a),
        Command::Views(a) => commands::views(cfg, a),
        Command::EmbedValidate(a) => commands::embed_validate(cfg, a),
        Command::Eval(a) => commands::eval(cfg, *a),
        Command::ExportFeatures(a) => commands::export_features(cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version.
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.kind().to_string();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or(&msg).trim_start_matches("error: ");
            eprintln!("{}", CliError::user("UsageError", first).to_json_line());
            return ExitCode::from(error::EXIT_USER);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code)
        }
    }
}
