use std::fmt;

/// A failed command: exit code plus a one-line `category: message` report.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or inconsistent inputs (exit 2).
    Usage { category: &'static str, message: String },
    /// A verification command found a violation (exit 3).
    Verification(String),
    /// Anything that went wrong while running (exit 4).
    Runtime { category: &'static str, message: String },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage {
            category: "BadArguments",
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage { .. } => 2,
            CliError::Verification(_) => 3,
            CliError::Runtime { .. } => 4,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::Usage { category, .. } | CliError::Runtime { category, .. } => category,
            CliError::Verification(_) => "VerificationFailed",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let message = match self {
            CliError::Usage { message, .. } | CliError::Runtime { message, .. } | CliError::Verification(message) => {
                message
            }
        };
        // Keep the report on one line whatever the message contains.
        let flat: String = message.split_whitespace().collect::<Vec<_>>().join(" ");
        write!(f, "error: {}: {flat}", self.category())
    }
}

impl From<nhnn::Error> for CliError {
    fn from(e: nhnn::Error) -> Self {
        use nhnn::Error as E;
        let category = e.category();
        let message = e.to_string();
        match e {
            E::InvalidConfig(_)
            | E::DegenerateSpec(_)
            | E::MalformedFile(_)
            | E::VersionMismatch { .. }
            | E::DuplicatePair { .. }
            | E::OutOfRangeIndex { .. } => CliError::Usage { category, message },
            _ => CliError::Runtime { category, message },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime {
            category: "Io",
            message: e.to_string(),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        match e.kind() {
            csv::ErrorKind::Io(_) => CliError::Runtime {
                category: "Io",
                message: e.to_string(),
            },
            _ => CliError::Usage {
                category: "MalformedFile",
                message: e.to_string(),
            },
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Usage {
            category: "InvalidConfig",
            message: e.to_string(),
        }
    }
}
