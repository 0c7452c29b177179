//! Artifact writing. JSON artifacts carry a `provenance` object, CSVs a
//! leading `#` comment line, and JSONL files a provenance header record.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use electosim_core::ENGINE_VERSION;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub master_seed: u64,
    pub engine_version: String,
}

impl Provenance {
    pub fn new(config_hash: String, master_seed: u64) -> Self {
        Self { config_hash, master_seed, engine_version: ENGINE_VERSION.to_string() }
    }

    pub fn comment_line(&self) -> String {
        format!(
            "# config_hash={} master_seed={} engine_version={}\n",
            self.config_hash, self.master_seed, self.engine_version
        )
    }
}

/// `{"provenance": ..., <body fields>}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub provenance: Provenance,
    #[serde(flatten)]
    pub body: T,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

pub fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, provenance: &Provenance, body: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(&Stamped { provenance: provenance.clone(), body })
        .map_err(|e| io_err(path, e))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Stamped<T>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column())))
}

/// Writes `rows` (header first) as CSV under a provenance comment.
pub fn write_csv(path: &Path, provenance: &Provenance, rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut buf = provenance.comment_line().into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for row in rows {
            w.write_record(row).map_err(|e| io_err(path, e))?;
        }
        w.flush().map_err(|e| io_err(path, e))?;
    }
    write_file(path, &buf)
}

/// Prefixes already-rendered CSV bytes with the provenance comment.
pub fn write_csv_bytes(path: &Path, provenance: &Provenance, body: &[u8]) -> Result<(), CliError> {
    let mut buf = provenance.comment_line().into_bytes();
    buf.extend_from_slice(body);
    write_file(path, &buf)
}

pub fn write_jsonl<T: Serialize>(path: &Path, provenance: &Provenance, items: &[T]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    let header = serde_json::json!({ "provenance": provenance });
    writeln!(buf, "{header}").map_err(|e| io_err(path, e))?;
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|e| io_err(path, e))?;
        buf.push(b'\n');
    }
    write_file(path, &buf)
}

/// Reads a JSONL file written by [`write_jsonl`], skipping the header.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<(Option<Provenance>, Vec<T>), CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut provenance = None;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |e: serde_json::Error| CliError::Config(format!("{}:{}: {e}", path.display(), i + 1));
        if i == 0 {
            let v: serde_json::Value = serde_json::from_str(&line).map_err(bad)?;
            if let Some(p) = v.get("provenance") {
                provenance = Some(serde_json::from_value(p.clone()).map_err(bad)?);
                continue;
            }
        }
        items.push(serde_json::from_str(&line).map_err(bad)?);
    }
    Ok((provenance, items))
}

/// Reads a small CSV with `#` comments and the given leading columns,
/// returning (line, trimmed cells) for each row.
pub fn read_keyed_csv(path: &Path, columns: &[&str]) -> Result<Vec<(u64, Vec<String>)>, CliError> {
    let bad = |m: String| CliError::Config(format!("{}: {m}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let idx: Vec<usize> = columns
        .iter()
        .map(|c| headers.iter().position(|h| h == *c).ok_or_else(|| bad(format!("missing column {c:?}"))))
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        out.push((line, idx.iter().map(|&i| row.get(i).unwrap_or("").to_string()).collect()));
    }
    Ok(out)
}
