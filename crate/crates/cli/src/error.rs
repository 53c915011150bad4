use std::process::ExitCode;

/// Usage errors (bad flags, missing inputs) exit 2; data errors exit 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Data(_) => ExitCode::from(1),
        }
    }

    /// Writes a one-line JSON summary to stderr.
    pub fn report(&self, command: Option<&str>) {
        let (kind, code, message) = match self {
            CliError::Usage(m) => ("usage", 2, m),
            CliError::Data(m) => ("data", 1, m),
        };
        let summary = serde_json::json!({
            "error": kind,
            "exit_code": code,
            "command": command,
            "message": message,
        });
        eprintln!("{summary}");
    }
}

pub fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

pub fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}
