//! Configuration and stage drivers behind the `spm` command.

pub mod commands;
pub mod config;

pub use commands::{cmd_encode, cmd_eval, cmd_learn_dict, cmd_pipeline, cmd_synth, cmd_train, Layout, Split};
pub use config::PipelineConfig;

use spm_core::{Error, ErrorKind};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Config => EXIT_CONFIG,
        ErrorKind::Data => EXIT_DATA,
        ErrorKind::Numeric => EXIT_NUMERIC,
    }
}
