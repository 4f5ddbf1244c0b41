//! CSV ingestion and emission. Inputs need a header row; lines starting with
//! `#` carry provenance and are skipped by the reader.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::config::parse_key_values;
use crate::CliError;

pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<csv::StringRecord>,
    /// 1-based file line of each row, for error messages.
    pub lines: Vec<u64>,
    /// `# key=value` comment lines found in the file.
    pub provenance: BTreeMap<String, String>,
}

pub fn read_table(path: &Path) -> Result<Table, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let comments: String = text
        .lines()
        .filter_map(|l| l.strip_prefix('#'))
        .filter(|l| l.contains('='))
        .map(|l| format!("{}\n", l.trim()))
        .collect();
    let provenance = parse_key_values(&comments).unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        lines.push(rec.position().map_or(0, |p| p.line()));
        rows.push(rec);
    }
    Ok(Table { headers, rows, lines, provenance })
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    /// Column parsed as numbers; empty cells become `None`.
    pub fn optional_column(&self, name: &str, path: &Path) -> Result<Option<Vec<Option<f64>>>, CliError> {
        let Some(idx) = self.column_index(name) else { return Ok(None) };
        self.rows
            .iter()
            .zip(&self.lines)
            .map(|(rec, line)| {
                let cell = rec.get(idx).unwrap_or("");
                if cell.is_empty() {
                    return Ok(None);
                }
                parse_number(cell).map(Some).ok_or_else(|| {
                    CliError::Data(format!("{} line {line}: column `{name}` holds non-numeric value `{cell}`", path.display()))
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    pub fn column(&self, name: &str, path: &Path) -> Result<Vec<f64>, CliError> {
        let col = self
            .optional_column(name, path)?
            .ok_or_else(|| CliError::Data(format!("{} has no column `{name}` (found: {})", path.display(), self.headers.join(", "))))?;
        col.into_iter()
            .zip(&self.lines)
            .map(|(v, line)| v.ok_or_else(|| CliError::Data(format!("{} line {line}: empty `{name}` value", path.display()))))
            .collect()
    }
}

/// Decimal-point numbers only; no locale handling.
fn parse_number(s: &str) -> Option<f64> {
    if s.contains(',') {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn read_column(path: &Path, col: &str) -> Result<Vec<f64>, CliError> {
    read_table(path)?.column(col, path)
}

pub fn provenance_header(command: &str, config: &BTreeMap<String, String>) -> String {
    let mut s = format!("# calsel {} {command}\n", env!("CARGO_PKG_VERSION"));
    for (k, v) in config {
        s.push_str(&format!("# {k}={v}\n"));
    }
    s
}

/// Writes to `path`, or stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, content: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, content).map_err(|e| CliError::Data(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(content.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Data(format!("cannot write to stdout: {e}")))
        }
    }
}

/// CSV body with a provenance preamble.
pub fn render_csv(preamble: &str, headers: &[&str], rows: &[Vec<String>]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(headers).map_err(|e| CliError::Data(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::Data(e.to_string()))?;
    }
    let body = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(format!("{preamble}{}", String::from_utf8(body).expect("csv output is utf-8")))
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
