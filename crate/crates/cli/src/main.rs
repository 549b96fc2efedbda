//! `t4v`: build frozen classifiers, train temporal heads and run the
//! recognition protocols on pre-extracted video embeddings.

mod commands;

use std::process::ExitCode;

use clap::Parser;

use commands::Cli;
use t4v_core::Error;

/// 1 usage, 2 data or format, 3 numeric.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Dimension(_) | Error::Config(_) | Error::Template(_) | Error::Spec(_) => 1,
        Error::Numeric(_) => 3,
        Error::Rank(_)
        | Error::NotPositiveDefinite(_)
        | Error::DegenerateRow { .. }
        | Error::Index(_)
        | Error::InsufficientData(_)
        | Error::Normalization { .. }
        | Error::Manifest(_)
        | Error::Format { .. }
        | Error::Alignment(_)
        | Error::Io { .. } => 2,
    }
}

fn configure_threads() {
    let Ok(v) = std::env::var("T4V_THREADS") else {
        return;
    };
    match v.parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
            {
                log::warn!("cannot size thread pool: {e}");
            }
        }
        _ => log::warn!("ignoring T4V_THREADS={v:?}; expected a positive integer"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    configure_threads();
    let name = cli.command.name();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("t4v {name}: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
