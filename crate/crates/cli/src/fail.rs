//! Error classification into process exit codes.

use std::fmt;

pub type Result<T, E = Failure> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    /// Bad flags, config, or input files: exit code 2.
    Input,
    /// The computation itself failed: exit code 3.
    Runtime,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            Kind::Input => 2,
            Kind::Runtime => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

pub fn input(message: impl Into<String>) -> Failure {
    Failure {
        kind: Kind::Input,
        message: message.into(),
    }
}

pub fn runtime(message: impl Into<String>) -> Failure {
    Failure {
        kind: Kind::Runtime,
        message: message.into(),
    }
}

impl From<kbnet_core::Error> for Failure {
    fn from(e: kbnet_core::Error) -> Self {
        use kbnet_core::Error as E;
        let kind = match e {
            E::NonFiniteLoss { .. } | E::Infeasible(_) | E::Contract(_) => Kind::Runtime,
            _ => Kind::Input,
        };
        Failure {
            kind,
            message: e.to_string(),
        }
    }
}

/// I/O on run-directory artifacts: missing or unreadable inputs are input
/// errors.
pub fn io(path: &std::path::Path, e: std::io::Error) -> Failure {
    input(format!("{}: {e}", path.display()))
}
