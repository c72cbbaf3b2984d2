use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Computation(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("output directory is locked by another run ({0}); remove the lock file if no run is active")]
    Locked(String),
}

impl CliError {
    pub fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Config {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn computation(e: impl std::fmt::Display) -> Self {
        CliError::Computation(e.to_string())
    }

    pub fn input(e: impl std::fmt::Display) -> Self {
        CliError::Input(e.to_string())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Input(_) => "input",
            CliError::Computation(_) => "computation",
            CliError::Io(_) => "io",
            CliError::Locked(_) => "locked",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Locked(_) => 3,
            _ => 1,
        }
    }

    pub fn to_json(&self, command: &str) -> serde_json::Value {
        let mut obj = json!({
            "command": command,
            "kind": self.kind(),
            "message": self.to_string(),
        });
        if let CliError::Config { path, reason } = self {
            obj["path"] = json!(path);
            obj["reason"] = json!(reason);
        }
        json!({ "error": obj })
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
