use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::domain::sha256_hex;
use crate::error::StageError;

pub fn file_hash(path: &Path) -> Result<String, StageError> {
    let bytes = std::fs::read(path).map_err(|e| StageError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), StageError> {
    let file = std::fs::File::create(path).map_err(|e| StageError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| format_err(path, e))?;
        writeln!(w, "{line}").map_err(|e| StageError::io(path, e))?;
    }
    w.flush().map_err(|e| StageError::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StageError> {
    let file = std::fs::File::open(path).map_err(|e| StageError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| StageError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| StageError::Format {
            path: path.display().to_string(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), StageError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| StageError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StageError> {
    let text = std::fs::read_to_string(path).map_err(|e| StageError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e))
}

pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<(), StageError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let csv_err = |e: csv::Error| StageError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| StageError::io(path, e))
}

fn format_err(path: &Path, e: serde_json::Error) -> StageError {
    StageError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}
