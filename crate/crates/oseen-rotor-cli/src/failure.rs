//! Mapping from library and I/O errors to process exit codes.
//!
//! The contract: `0` success, `1` a verification suite produced a failing
//! verdict (the report is still written), `2` usage errors (bad flags,
//! malformed config, arguments outside the mathematical domain of the
//! requested operation), `3` runtime evaluation errors (singular points,
//! unsupported derivative orders, quadrature that cannot reach tolerance,
//! violated data certificates, unreadable input files).

use oseen_rotor::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_EVAL: i32 = 3;

/// A failure carrying the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn eval(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_EVAL,
            message: message.into(),
        }
    }

    /// Attach a record label to an evaluation error so the offending input
    /// is identifiable in batch runs.
    pub fn for_record(err: Error, index: usize, detail: &str) -> Self {
        let base = Failure::from(err);
        Failure {
            code: base.code,
            message: format!("{} (record #{index}: {detail})", base.message),
        }
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let code = match &err {
            // Domain errors mean the *request* was outside the operation's
            // mathematical domain — a usage problem, not a runtime one.
            Error::Domain(_) => EXIT_USAGE,
            Error::Singular(_)
            | Error::UnsupportedOrder(_)
            | Error::Accuracy { .. }
            | Error::DivergentIntegral(_)
            | Error::Data(_) => EXIT_EVAL,
        };
        // Shorten the singular-diagonal message to the documented phrasing.
        let message = match &err {
            Error::Singular(detail) => format!("singular: y=z — {detail}"),
            other => other.to_string(),
        };
        Failure { code, message }
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Failure::eval(format!("i/o error: {err}"))
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}
