mod args;
mod commands;
mod config;
mod error;
mod output;

use clap::Parser;

use crate::args::Cli;
use crate::config::{GlobalConfig, OUT_ENV};
use crate::error::{EXIT_FINDINGS, EXIT_OK, EXIT_USAGE};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = GlobalConfig::resolve(&cli.global, std::env::var_os(OUT_ENV).map(Into::into))
        .and_then(|cfg| commands::run(&cli.command, &cfg).map(|o| (o, cfg)));
    match result {
        Ok((out, cfg)) => {
            print!("{}", out.render(cfg.format));
            std::process::exit(if out.failed { EXIT_FINDINGS } else { EXIT_OK });
        }
        Err(e) => {
            eprintln!("rigorbench: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
