mod args;
mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

const CONFIG_ENV: &str = "OLFALIGN_CONFIG";

fn execute(argv: Vec<OsString>, config: Option<PathBuf>) -> u8 {
    let argv = match config {
        Some(path) => match config::merge(argv, &path) {
            Ok(a) => a,
            Err(e) => {
                eprintln!("error[config]: {e}");
                return 1;
            }
        },
        None => argv,
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code() as u8;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();

    let argv: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let result = match &cli.command {
        Command::Classify(a) => commands::classify(a, &argv),
        Command::Regress(a) => commands::regress(a, &argv),
        Command::Rsa(a) => commands::rsa(a, &argv),
        Command::Physchem(a) => commands::physchem(a, &argv),
        Command::NoiseCeiling(a) => commands::noise_ceiling(a, &argv),
        Command::Layers(a) => commands::layers(a, &argv),
        Command::Rsm(a) => commands::rsm(a, &argv),
        Command::PcaScatter(a) => commands::pca_scatter(a, &argv),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}: {e}", e.kind(), cli.command.name());
            1
        }
    }
}

fn main() -> ExitCode {
    let config = std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    ExitCode::from(execute(std::env::args_os().collect(), config))
}
