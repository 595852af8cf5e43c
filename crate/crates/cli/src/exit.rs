//! Process exit codes and the error wrapper that carries them.

use std::fmt;

pub const OK: u8 = 0;
/// A stage failed, or a suite missed its thresholds.
pub const FAILURE: u8 = 1;
/// The reflection loop ran out of iterations.
pub const EXHAUSTED: u8 = 2;
/// Config, runner or replay problems: nothing about the query itself.
pub const SETUP: u8 = 3;
/// An input file could not be parsed.
pub const BAD_INPUT: u8 = 4;
/// Command-line usage error (sysexits EX_USAGE).
pub const USAGE: u8 = 64;

#[derive(Debug)]
pub struct Coded {
    pub code: u8,
    pub error: anyhow::Error,
}

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for Coded {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        self.error.source()
    }
}

pub trait WithCode<T> {
    fn code(self, code: u8) -> anyhow::Result<T>;
}

impl<T, E: Into<anyhow::Error>> WithCode<T> for Result<T, E> {
    fn code(self, code: u8) -> anyhow::Result<T> {
        self.map_err(|e| Coded { code, error: e.into() }.into())
    }
}

/// The code attached anywhere in the chain, else [`FAILURE`].
pub fn code_of(err: &anyhow::Error) -> u8 {
    err.chain().find_map(|e| e.downcast_ref::<Coded>()).map_or(FAILURE, |c| c.code)
}

/// The error chain on one line. Causes whose text the previous message
/// already quotes are skipped.
pub fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}
