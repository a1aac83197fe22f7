//! Flag/config-file merging and the error type that maps onto exit codes.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config or input data. Exit code 1.
    #[error("{0}")]
    Invalid(String),
    /// Failure while doing the work. Exit code 2.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<selcal::Error> for CliError {
    fn from(e: selcal::Error) -> Self {
        match e {
            selcal::Error::Io(_) | selcal::Error::NonFiniteLoss { .. } => CliError::Runtime(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn invalid<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Invalid(msg.into()))
}

/// Overlays the flags given on the command line onto an optional JSON config
/// file. Keys are the long flag names in snake_case; unknown keys are rejected.
pub fn resolve<T: Serialize + DeserializeOwned>(flags: T, config: Option<&Path>) -> CliResult<T> {
    let Some(path) = config else {
        return Ok(flags);
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Invalid(format!("cannot read config {}: {e}", path.display())))?;
    let mut merged = match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(map)) => map,
        Ok(_) => return invalid(format!("config {} must be a JSON object", path.display())),
        Err(e) => return invalid(format!("config {}: {e}", path.display())),
    };
    let Value::Object(given) = serde_json::to_value(flags).map_err(|e| CliError::Runtime(e.to_string()))? else {
        unreachable!("argument structs serialize to objects");
    };
    for (key, value) in given {
        if !value.is_null() {
            merged.insert(key, value);
        }
    }
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| CliError::Invalid(format!("config {}: {e}", path.display())))
}

pub fn require<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Invalid(format!("missing required --{flag}")))
}

pub fn parse_with<T: std::str::FromStr<Err = selcal::Error>>(value: Option<&str>, default: &str) -> CliResult<T> {
    value.unwrap_or(default).parse::<T>().map_err(CliError::from)
}

pub fn existing_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        invalid(format!("no such file: {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;
    use std::io::Write;

    #[derive(Debug, Default, Serialize, Deserialize, PartialEq)]
    #[serde(deny_unknown_fields)]
    struct Demo {
        bins: Option<usize>,
        csf: Option<String>,
    }

    fn config_file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn flags_override_file() {
        let f = config_file(r#"{"bins": 10, "csf": "margin"}"#);
        let flags = Demo {
            bins: Some(20),
            csf: None,
        };
        let got = resolve(flags, Some(f.path())).unwrap();
        assert_eq!(got.bins, Some(20));
        assert_eq!(got.csf.as_deref(), Some("margin"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let f = config_file(r#"{"bins": 10, "colour": "red"}"#);
        let err = resolve(Demo::default(), Some(f.path())).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("colour"));
    }
}
