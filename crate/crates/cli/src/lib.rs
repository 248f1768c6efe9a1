//! The `cardiosim` command-line front end.
//!
//! Exit codes: 0 on success, 1 on domain errors (validation, degenerate
//! fits), 2 on I/O, parse or usage errors.

pub mod args;
pub mod commands;
pub mod manifest;
pub mod plot;

use std::ffi::OsString;

use clap::Parser;

use crate::args::{Cli, Command};
use crate::manifest::RunManifest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_IO: i32 = 2;

fn execute(command: &Command) -> cardiosim_core::Result<()> {
    match command {
        Command::Simulate(a) => commands::simulate_cmd(a),
        Command::Calibrate(a) => commands::calibrate_cmd(a),
        Command::BeatExtract(a) => commands::beat_extract_cmd(a),
        Command::Loss(a) => commands::loss_cmd(a),
        Command::Retrieve(a) => commands::retrieve_cmd(a),
        Command::Metrics(a) => commands::metrics_cmd(a),
        Command::Schedule(a) => commands::schedule_cmd(a),
        Command::DiffuseDemo(a) => commands::diffuse_demo_cmd(a),
    }
}

fn fail(e: &cardiosim_core::Error) -> i32 {
    eprintln!("error: {e}");
    if e.is_io() {
        EXIT_IO
    } else {
        EXIT_DOMAIN
    }
}

/// Parse `argv` and run the selected subcommand, returning the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_IO } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    // digest inputs before running: calibrate may rewrite its registry
    let manifest = match RunManifest::new(commands::name(&cli.command), &commands::inputs(&cli.command)) {
        Ok(m) => m,
        Err(e) => return fail(&e),
    };
    if let Err(e) = execute(&cli.command) {
        return fail(&e);
    }
    eprintln!("manifest: {}", manifest.to_json());
    if let Some(path) = &cli.manifest {
        if let Err(e) = manifest.write(path) {
            return fail(&e);
        }
    }
    EXIT_OK
}
