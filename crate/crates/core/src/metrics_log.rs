//! Append-only JSON-lines metrics log.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub scalars: BTreeMap<String, f64>,
    /// Seconds since the run (or resumed run) started.
    pub wall_time: f64,
}

pub struct MetricsLog {
    path: PathBuf,
    file: File,
    last_step: Option<u64>,
}

impl MetricsLog {
    /// Opens `path` for appending, keeping only records with
    /// `step < keep_before` (everything when `None`).
    pub fn open(path: &Path, keep_before: Option<u64>) -> Result<Self> {
        let kept: Vec<MetricsRecord> = match keep_before {
            Some(limit) if path.exists() => read_metrics_log(path)?.into_iter().filter(|r| r.step < limit).collect(),
            _ => Vec::new(),
        };
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        for r in &kept {
            writeln!(file, "{}", serde_json::to_string(r).expect("record serializes")).map_err(|e| Error::io(path, e))?;
        }
        drop(file);
        let file = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            last_step: kept.last().map(|r| r.step),
        })
    }

    pub fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        if let Some(last) = self.last_step {
            if record.step <= last {
                return Err(Error::validation(format!(
                    "metrics steps must increase: {} after {last}",
                    record.step
                )));
            }
        }
        let line = serde_json::to_string(record)
            .map_err(|e| Error::numeric(format!("metrics record at step {}: {e}", record.step)))?;
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))?;
        self.last_step = Some(record.step);
        Ok(())
    }
}

/// Reads a log, ignoring a torn final line left by an interrupted write.
pub fn read_metrics_log(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))?;
    let mut out: Vec<MetricsRecord> = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<MetricsRecord>(line) {
            Ok(r) => {
                if let Some(prev) = out.last() {
                    if r.step <= prev.step {
                        return Err(Error::data(path, format!("line {}: step {} does not increase", i + 1, r.step)));
                    }
                }
                out.push(r);
            }
            Err(_) if i + 1 == lines.len() => break,
            Err(e) => return Err(Error::data(path, format!("line {}: {e}", i + 1))),
        }
    }
    Ok(out)
}
