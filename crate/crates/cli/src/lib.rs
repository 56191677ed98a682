//! Commands and configuration behind the `ctxprobe` binary.

pub mod commands;
pub mod config;

use std::fmt;

/// Bad invocation: missing inputs or conflicting options.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// 2 for usage, configuration and I/O failures, 1 for everything else (bad data).
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err
        .chain()
        .any(|e| e.is::<UsageError>() || e.is::<config::ConfigError>() || e.is::<std::io::Error>());
    if usage {
        2
    } else {
        1
    }
}
