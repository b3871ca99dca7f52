//! `rede`: distances, embedding statistics, synthetic tasks, training and
//! evaluation from the command line.
//!
//! Exit codes: 0 success, 1 invalid input or usage, 2 internal failure.
//! Results go to stdout; logs (level from `REDE_LOG`) go to stderr.

mod commands;

use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("REDE_LOG", "warn"))
        .format_timestamp(None)
        .init();

    let cli = match commands::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let user = e.chain().any(|cause| {
        cause
            .downcast_ref::<rede_core::Error>()
            .is_some_and(|err| err.is_user_error() || matches!(err, rede_core::Error::Checkpoint(_)))
            || cause.is::<commands::InputError>()
    });
    if user {
        1
    } else {
        2
    }
}
