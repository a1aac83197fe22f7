//! Fixed-precision report formatting and atomic file output.

use std::io::Write;
use std::path::Path;

use serde_json::Value;

use crate::config::{CliError, CliResult};

/// Rounds to 9 significant digits so reports are stable byte for byte.
pub fn sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

/// Applies [`sig9`] to every float in a JSON value; non-finite floats become null.
pub fn round_report(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            serde_json::Number::from_f64(sig9(x)).map_or(Value::Null, Value::Number)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(round_report).collect()),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, round_report(v))).collect()),
        other => other,
    }
}

pub fn print_report(v: Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(&round_report(v)).map_err(|e| CliError::Runtime(e.to_string()))?;
    print_line(&text)
}

pub fn print_line(text: &str) -> CliResult<()> {
    writeln!(std::io::stdout().lock(), "{text}").map_err(|e| CliError::Runtime(format!("writing stdout: {e}")))
}

/// CSV cell for a float, empty for missing values.
pub fn cell(x: Option<f64>) -> String {
    x.map(|v| sig9(v).to_string()).unwrap_or_default()
}

/// Writes via a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> CliResult<()>) -> CliResult<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let runtime = |e: std::io::Error| CliError::Runtime(format!("writing {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(runtime)?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf)?;
        buf.flush().map_err(runtime)?;
    }
    tmp.persist(path).map_err(|e| runtime(e.error))?;
    Ok(())
}

pub fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> CliResult<()> {
    write_atomic(path, |w| {
        let io = |e: std::io::Error| CliError::Runtime(e.to_string());
        writeln!(w, "{header}").map_err(io)?;
        for row in rows {
            writeln!(w, "{row}").map_err(io)?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig9(0.1 + 0.2), 0.3);
        assert_eq!(sig9(1.0 / 3.0), 0.333333333);
        assert_eq!(sig9(123456789012.0), 123456789000.0);
        assert_eq!(sig9(0.0), 0.0);
    }

    #[test]
    fn report_rounding_keeps_integers() {
        let v = round_report(json!({"n": 7, "x": [3.0f64.sqrt()], "bad": f64::NAN}));
        assert_eq!(v, json!({"n": 7, "x": [1.73205081], "bad": null}));
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        write_csv(&path, "x", ["1".to_string()]).unwrap();
        write_csv(&path, "x", ["2".to_string()]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "x\n2\n");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
