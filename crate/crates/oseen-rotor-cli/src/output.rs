//! Report writing. One rule makes the CSV/JSON numeric-identity invariant
//! hold by construction: every floating-point number, in either format,
//! is printed by the same shortest-round-trip formatter (the one JSON
//! uses). Reports end with a newline and contain no timestamps, so equal
//! runs produce byte-identical files.

use std::io::Write;

use serde::Serialize;

use crate::config::{OutputFormat, RunConfig};
use crate::failure::Failure;

/// Shortest decimal string that round-trips to the same f64 — the exact
/// digits JSON serialization would emit.
pub fn fmt_f64(x: f64) -> String {
    debug_assert!(x.is_finite(), "reports never contain non-finite numbers");
    serde_json::to_string(&x).unwrap_or_else(|_| x.to_string())
}

/// Write `content` to the configured destination (`-` = stdout).
pub fn write_output(path: &str, content: &str) -> Result<(), Failure> {
    if path == "-" {
        let mut out = std::io::stdout().lock();
        out.write_all(content.as_bytes())?;
        out.flush()?;
    } else {
        std::fs::write(path, content)?;
    }
    Ok(())
}

/// Render a serializable report as pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(report: &T) -> Result<String, Failure> {
    let body = serde_json::to_string_pretty(report)
        .map_err(|e| Failure::eval(format!("report serialization failed: {e}")))?;
    Ok(format!("{body}\n"))
}

/// A CSV table: provenance comment lines, one header row, data rows.
///
/// The comment lines carry the same config/version stamp the JSON reports
/// embed (single-line JSON after `# `), satisfying the provenance rule
/// without breaking the header-row-first schema for readers that strip
/// `#` comments.
pub struct CsvTable {
    lines: Vec<String>,
}

impl CsvTable {
    pub fn new(cfg: &RunConfig, command: &str, header: &[&str]) -> Result<Self, Failure> {
        let stamp = serde_json::to_string(cfg)
            .map_err(|e| Failure::eval(format!("config serialization failed: {e}")))?;
        let lines = vec![
            format!("# version: {}", oseen_rotor::VERSION),
            format!("# command: {command}"),
            format!("# config: {stamp}"),
            header.join(","),
        ];
        Ok(CsvTable { lines })
    }

    pub fn push_row(&mut self, cells: Vec<String>) {
        self.lines.push(cells.join(","));
    }

    pub fn finish(self) -> String {
        let mut body = self.lines.join("\n");
        body.push('\n');
        body
    }
}

/// Emit a report in the configured format and write it out.
///
/// `json_report` is the full JSON document; `csv` lazily builds the CSV
/// flavor of the same numbers.
pub fn emit<T: Serialize>(
    cfg: &RunConfig,
    json_report: &T,
    csv: impl FnOnce() -> Result<CsvTable, Failure>,
) -> Result<(), Failure> {
    let content = match cfg.format {
        OutputFormat::Json => to_json(json_report)?,
        OutputFormat::Csv => csv()?.finish(),
    };
    write_output(&cfg.output_path, &content)
}
