//! Result-file assembly. Payloads are built fully in memory so that a
//! given config and seed always produce the same bytes: LF line
//! endings, `.` decimals, shortest-round-trip float formatting, no
//! timestamps. CSV files open with `#`-prefixed comment lines echoing
//! the command, the resolved config, and the oracle provenance, so a
//! results file can be interpreted (and re-run) without its invocation.

use std::path::{Path, PathBuf};

use crate::CliError;

/// A CSV payload under construction.
pub struct Csv {
    lines: Vec<String>,
}

impl Csv {
    /// Starts a payload with the standard preamble: the subcommand name
    /// and the full config echo.
    pub fn with_preamble(command: &str, config_toml: &str) -> Self {
        let mut csv = Csv { lines: Vec::new() };
        csv.comment(&format!("kac {command}"));
        csv.comment("config:");
        for line in config_toml.lines() {
            csv.comment(&format!("  {line}"));
        }
        csv
    }

    /// Adds one `# `-prefixed comment line.
    pub fn comment(&mut self, text: &str) {
        self.lines.push(format!("# {text}"));
    }

    /// Adds the header row (no quoting; callers pass plain identifiers).
    pub fn header(&mut self, columns: &[&str]) {
        self.lines.push(columns.join(","));
    }

    /// Adds a data row: numeric fields first, then an optional trailing
    /// string field (quoted as needed).
    pub fn row(&mut self, numbers: &[f64], tag: Option<&str>) {
        let mut fields: Vec<String> = numbers.iter().map(|v| format!("{v}")).collect();
        if let Some(tag) = tag {
            fields.push(quote(tag));
        }
        self.lines.push(fields.join(","));
    }

    /// The finished payload (LF separators, trailing newline).
    pub fn finish(self) -> String {
        let mut text = self.lines.join("\n");
        text.push('\n');
        text
    }
}

/// RFC-4180 quoting: wrap a field in double quotes when it contains a
/// comma, quote, or newline, doubling any embedded quotes.
fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Serializes a JSON payload: pretty-printed with serde's stable field
/// order, trailing newline.
pub fn json_payload<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Run {
        message: format!("serializing result: {e}"),
    })?;
    text.push('\n');
    Ok(text)
}

/// Writes the payload to `path`, or to stdout when no path is given.
pub fn write_payload(path: Option<&Path>, payload: &str) -> Result<(), CliError> {
    match path {
        Some(path) => std::fs::write(path, payload).map_err(|e| CliError::Io {
            path: PathBuf::from(path),
            message: e.to_string(),
        }),
        None => {
            print!("{payload}");
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fields_with_commas_are_quoted_and_plain_fields_are_not() {
        let mut csv = Csv::with_preamble("demo", "model = \"thermostat\"");
        csv.header(&["t", "value", "provenance"]);
        csv.row(&[0.5, 1.0], Some("rate a, then \"b\""));
        let text = csv.finish();
        assert!(text.starts_with("# kac demo\n# config:\n#   model = \"thermostat\"\n"));
        assert!(text.contains("t,value,provenance\n"));
        assert!(text.contains("0.5,1,\"rate a, then \"\"b\"\"\"\n"));
        assert!(!text.contains('\r'));
    }
}
