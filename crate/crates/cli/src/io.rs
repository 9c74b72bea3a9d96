//! Atomic file output, checked input and the per-stage JSON-lines log.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::Failure;

/// Writes `path` through a temporary file in the same directory and renames
/// it into place, so readers never see a partial file.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<&mut File>) -> Result<()>,
{
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("temp file in {}", dir.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Failure::MissingInput(path.to_path_buf()).into()),
        Err(e) => Err(anyhow::Error::new(e).context(format!("opening {}", path.display()))),
    }
}

/// Files in `dir` with extension `ext`, sorted by name.
pub fn list(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let rd = match std::fs::read_dir(dir) {
        Ok(rd) => rd,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Failure::MissingInput(dir.to_path_buf()).into()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for entry in rd {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e == ext) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Line-delimited records of one stage run. The records hold no timing so
/// a rerun reproduces the file byte for byte.
pub struct StageLog {
    stage: String,
    lines: Vec<String>,
}

impl StageLog {
    pub fn new(stage: &str) -> Self {
        Self {
            stage: stage.to_string(),
            lines: Vec::new(),
        }
    }

    pub fn record(&mut self, event: &str, data: impl Serialize) {
        let data = serde_json::to_value(data).unwrap_or(Value::Null);
        let line = json!({ "stage": self.stage, "event": event, "data": data });
        log::info!("{}: {event} {data}", self.stage);
        self.lines.push(line.to_string());
    }

    pub fn warn(&mut self, what: &str, count: usize) {
        if count > 0 {
            log::warn!("{}: {count} {what}", self.stage);
        }
        self.lines
            .push(json!({ "stage": self.stage, "event": "warning", "data": { "what": what, "count": count } }).to_string());
    }

    pub fn write(&self, logs_dir: &Path) -> Result<()> {
        write_atomic(&logs_dir.join(format!("{}.jsonl", self.stage)), |w| {
            for l in &self.lines {
                writeln!(w, "{l}")?;
            }
            Ok(())
        })
    }
}
