mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::{resolve, Cli, Command};
use commands::VerificationFailed;

fn init_threads() -> anyhow::Result<()> {
    let threads = match std::env::var("AMPLIFY_ACCT_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| anyhow::anyhow!("AMPLIFY_ACCT_THREADS must be a positive integer, got `{v}`"))?,
        Err(_) => 1,
    };
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    init_threads()?;
    let config = cli.config.as_deref();
    let name = cli.command.name();
    match &cli.command {
        Command::Epsilon(a) => commands::epsilon(&resolve(a, config, name)?),
        Command::Curve(a) => commands::curve(&resolve(a, config, name)?),
        Command::Calibrate(a) => commands::calibrate(&resolve(a, config, name)?),
        Command::Verify(a) => commands::verify(&resolve(a, config, name)?),
        Command::Simulate(a) => commands::simulate(&resolve(a, config, name)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<VerificationFailed>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
