//! Subcommands of the `dfmsd` binary, callable in-process.
//!
//! Each command returns the files it wrote. Errors map onto exit codes with
//! [`exit_code`]: 2 for bad input, 3 for numeric failure.

pub mod commands;
pub mod io;
pub mod plot;

use std::path::PathBuf;

use dfmsd::Error;

pub use commands::{
    ablation_plan, cmd_ablate, cmd_augment_preview, cmd_eval, cmd_export, cmd_spectrum, cmd_train, AblationRow,
    RunOptions,
};

/// Outcome of one command.
#[derive(Debug, Default)]
pub struct CommandResult {
    pub exit_code: i32,
    pub artifacts: Vec<PathBuf>,
}

impl CommandResult {
    pub fn from_result(r: dfmsd::Result<Vec<PathBuf>>) -> (Self, Option<Error>) {
        match r {
            Ok(artifacts) => (CommandResult { exit_code: 0, artifacts }, None),
            Err(e) => (
                CommandResult {
                    exit_code: exit_code(&e),
                    artifacts: Vec::new(),
                },
                Some(e),
            ),
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Diverged { .. } | Error::NonFinite(_) => 3,
        _ => 2,
    }
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/ablation.md")]
    mod ablation {}
}
