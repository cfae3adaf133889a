//! The `annoforge` command line: one subcommand per pipeline stage, each writing
//! its artifacts plus a `manifest.json` into an output directory.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 numeric
//! failure (a NaN or infinity aborted the run).

mod args;
mod commands;
mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::Parser;

pub use args::{Cli, Command};
pub use manifest::{verify_manifest, RunManifest, MANIFEST_FILE};

/// Environment variable naming the root that relative artifact paths resolve against.
pub const DATA_DIR_ENV: &str = "ANNOFORGE_DATA_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] annoforge::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            CliError::Core(_) => EXIT_DATA,
        }
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Runs one invocation (`argv[0]` is the program name) with relative paths
/// resolved against `$ANNOFORGE_DATA_DIR` when it is set. Returns the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let root = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from);
    run_command_in(argv, root.as_deref())
}

/// [`run_command`] with an explicit artifact root instead of the environment.
pub fn run_command_in<I, T>(argv: I, data_root: Option<&Path>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    match execute(argv, data_root) {
        Ok(()) => EXIT_OK,
        Err(Outcome::Clap(e)) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_OK
            }
        }
        Err(Outcome::Failed(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

enum Outcome {
    Clap(clap::Error),
    Failed(CliError),
}

impl From<CliError> for Outcome {
    fn from(e: CliError) -> Self {
        Outcome::Failed(e)
    }
}

fn execute(argv: Vec<OsString>, data_root: Option<&Path>) -> Result<(), Outcome> {
    let argv = config::merge_config_file(argv, data_root)?;
    let cli = Cli::try_parse_from(&argv).map_err(Outcome::Clap)?;
    let ctx = commands::Context::new(&cli, data_root);
    annoforge::rng::with_workers(cli.workers, || commands::dispatch(&cli.command, &ctx))?;
    Ok(())
}
