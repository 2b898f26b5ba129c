//! Exit codes: 0 success, 1 invalid input, 2 backend failure, 64 usage.

use std::fmt;
use std::process::ExitCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Failure(u8);

impl Failure {
    pub const VALIDATION: Failure = Failure(1);
    pub const BACKEND: Failure = Failure(2);
    pub const USAGE: Failure = Failure(64);
}

impl From<Failure> for ExitCode {
    fn from(f: Failure) -> Self {
        ExitCode::from(f.0)
    }
}

#[derive(Debug)]
struct Coded {
    failure: Failure,
    message: String,
}

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Coded {}

fn coded(failure: Failure, message: impl fmt::Display) -> anyhow::Error {
    anyhow::Error::new(Coded {
        failure,
        message: message.to_string(),
    })
}

pub fn validation(message: impl fmt::Display) -> anyhow::Error {
    coded(Failure::VALIDATION, message)
}

pub fn backend(message: impl fmt::Display) -> anyhow::Error {
    coded(Failure::BACKEND, message)
}

pub fn usage(message: impl fmt::Display) -> anyhow::Error {
    coded(Failure::USAGE, message)
}

/// Uncoded errors (I/O, unreadable inputs) count as invalid input.
pub fn code_for(e: &anyhow::Error) -> Failure {
    e.chain()
        .find_map(|c| c.downcast_ref::<Coded>())
        .map_or(Failure::VALIDATION, |c| c.failure)
}
