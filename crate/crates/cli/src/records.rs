//! JSONL document format.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anchormark::{FallbackEvent, FlagAssignment};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub prompt: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flags_used: Option<FlagAssignment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_events: Option<Vec<FallbackEvent>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Anything else found in the input is carried through unchanged.
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl RecordMeta {
    /// Drops detection results that no longer describe the sentences.
    pub fn clear_detection(&mut self) {
        self.z = None;
        self.decision = None;
        self.tau = None;
        self.error = None;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub id: String,
    pub prompt: String,
    pub sentences: Vec<String>,
    pub condition: String,
    #[serde(default)]
    pub meta: RecordMeta,
}

fn check_ids<'a>(path: &Path, ids: impl Iterator<Item = &'a str>) -> CliResult<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if id.is_empty() {
            return Err(CliError::config(format!(
                "{}: empty record id",
                path.display()
            )));
        }
        if !seen.insert(id) {
            return Err(CliError::config(format!(
                "{}: duplicate record id {id:?}",
                path.display()
            )));
        }
    }
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|e| CliError::config(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(value);
    }
    Ok(out)
}

pub fn read_prompts(path: &Path) -> CliResult<Vec<PromptRecord>> {
    let prompts: Vec<PromptRecord> = read_jsonl(path)?;
    check_ids(path, prompts.iter().map(|p| p.id.as_str()))?;
    Ok(prompts)
}

pub fn read_documents(path: &Path) -> CliResult<Vec<DocumentRecord>> {
    let docs: Vec<DocumentRecord> = read_jsonl(path)?;
    check_ids(path, docs.iter().map(|d| d.id.as_str()))?;
    Ok(docs)
}

/// Writes to a temporary file next to `path` and renames it into place, so
/// a failed run never leaves partial output.
pub fn write_atomic(
    path: &Path,
    fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w).map_err(|e| CliError::io(path, e))?;
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> CliResult<()> {
    write_atomic(path, |w| {
        for item in items {
            serde_json::to_writer(&mut *w, item)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")
    })
}
