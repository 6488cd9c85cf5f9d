//! Result tables, JSON summaries and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use clap::ValueEnum;
use metastable_core::model::sha256_hex;
use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// One CSV file: header row plus string-formatted cells.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, headers: &[&str]) -> Self {
        Self { name: name.into(), headers: headers.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn with_headers(name: impl Into<String>, headers: Vec<String>) -> Self {
        Self { name: name.into(), headers, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers).map_err(CliError::csv)?;
        for r in &self.rows {
            w.write_record(r).map_err(CliError::csv)?;
        }
        w.into_inner().map_err(|e| CliError::Internal(format!("csv buffer: {e}")))
    }
}

/// Cell formatting shared by every table: shortest round-trip form (exponent notation for
/// very small or large magnitudes), `NaN` as empty.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:?}")
    }
}

/// Everything a subcommand produced.
#[derive(Debug, Clone)]
pub struct Report {
    pub command: String,
    pub digest: String,
    pub summary: Value,
    pub tables: Vec<Table>,
    pub flagged: bool,
}

impl Report {
    pub fn new<S: Serialize>(command: &str, digest: String, summary: &S) -> Result<Self, CliError> {
        Ok(Self { command: command.into(), digest, summary: to_value(summary)?, tables: Vec::new(), flagged: false })
    }
}

pub fn to_value<S: Serialize>(s: &S) -> Result<Value, CliError> {
    serde_json::to_value(s).map_err(|e| CliError::Internal(format!("serialize summary: {e}")))
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub config_digest: String,
    pub seed: u64,
    pub tool_version: String,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<OutputFile>,
}

pub fn timestamp() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub const MANIFEST: &str = "manifest.json";

/// Common invocation context recorded in the manifest.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub argv: Vec<String>,
    pub seed: u64,
    pub started: String,
}

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Output { path: path.to_path_buf(), source }
}

/// Writes the report into `out` (or prints the summary when `out` is `None`) and returns
/// the final output paths. Outputs are staged, the manifest is written, then files are
/// moved into place.
pub fn emit_report(report: &Report, out: Option<&Path>, formats: &[Format], inv: &Invocation) -> Result<Vec<PathBuf>, CliError> {
    let Some(dir) = out else {
        let text = serde_json::to_string_pretty(&report.summary).map_err(|e| CliError::Internal(e.to_string()))?;
        println!("{text}");
        return Ok(Vec::new());
    };
    fs::create_dir_all(dir).map_err(write_err(dir))?;
    let mut staged: Vec<(String, Vec<u8>)> = Vec::new();
    if formats.contains(&Format::Csv) {
        for t in &report.tables {
            staged.push((format!("{}.csv", t.name), t.to_csv()?));
        }
    }
    if formats.contains(&Format::Json) {
        let mut text = serde_json::to_vec_pretty(&report.summary).map_err(|e| CliError::Internal(e.to_string()))?;
        text.push(b'\n');
        staged.push((format!("{}.json", report.command), text));
    }
    let mut names: Vec<&str> = staged.iter().map(|s| s.0.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) || names.contains(&MANIFEST) {
        return Err(CliError::Internal("duplicate output file name".into()));
    }
    let mut outputs = Vec::new();
    for (name, bytes) in &staged {
        let tmp = dir.join(format!(".{name}.partial"));
        fs::write(&tmp, bytes).map_err(write_err(&tmp))?;
        outputs.push(OutputFile { path: name.clone(), sha256: sha256_hex(bytes) });
    }
    let manifest = RunManifest {
        command_line: inv.argv.clone(),
        config_digest: report.digest.clone(),
        seed: inv.seed,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        started: inv.started.clone(),
        finished: timestamp(),
        outputs,
    };
    let mpath = dir.join(MANIFEST);
    let mut mtext = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
    mtext.push(b'\n');
    fs::write(&mpath, mtext).map_err(write_err(&mpath))?;
    let mut paths = vec![mpath];
    for (name, _) in &staged {
        let (tmp, fin) = (dir.join(format!(".{name}.partial")), dir.join(name));
        fs::rename(&tmp, &fin).map_err(write_err(&fin))?;
        paths.push(fin);
    }
    Ok(paths)
}
