use std::fmt;

/// A command failure and the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

pub const EXIT_FAILURE: i32 = 1;
/// Invalid configuration, empty input or a checkpoint that does not match.
pub const EXIT_USAGE: i32 = 2;
/// Training produced a non-finite value.
pub const EXIT_NUMERIC: i32 = 3;

impl Failure {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Failure {
            code: EXIT_USAGE,
            error: anyhow::anyhow!("{msg}"),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure {
            code: EXIT_FAILURE,
            error: e.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Failure>;

/// Attaches an exit code to an error.
pub trait ExitCode<T> {
    fn exit(self, code: i32) -> Result<T>;
}

impl<T, E: Into<anyhow::Error>> ExitCode<T> for std::result::Result<T, E> {
    fn exit(self, code: i32) -> Result<T> {
        self.map_err(|e| Failure {
            code,
            error: e.into(),
        })
    }
}
