mod args;
mod commands;
mod stage;
mod staging;

use std::process::ExitCode;

use clap::Parser;
use log::LevelFilter;

use crate::args::Cli;
use crate::stage::Stage;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => LevelFilter::Error,
        (false, 0) => LevelFilter::Warn,
        (false, 1) => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .init();

    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: {} stage failed: {e}", Stage::Config);
            return ExitCode::from(Stage::Config.exit_code() as u8);
        }
    }

    let ctx = commands::Context {
        cli: &cli,
        argv: std::env::args().collect(),
    };
    match commands::run(&ctx) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.stage.exit_code() as u8)
        }
    }
}
