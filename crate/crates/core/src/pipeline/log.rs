//! Line-delimited JSON training log.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: u64,
    pub phase: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub epoch: Option<u64>,
    pub losses: BTreeMap<String, f64>,
    pub lr: f64,
    pub grad_norms: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub warning: Option<String>,
    pub wall_time: f64,
}

/// Appends records to `logs/train.jsonl`; `wall_time` is seconds since the
/// log was opened.
pub struct TrainLog {
    path: PathBuf,
    out: Option<BufWriter<File>>,
    start: Instant,
}

impl TrainLog {
    pub fn open(path: &Path) -> Result<TrainLog> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io_at(parent, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io_at(path, e))?;
        Ok(TrainLog {
            path: path.to_path_buf(),
            out: Some(BufWriter::new(file)),
            start: Instant::now(),
        })
    }

    /// A log that drops every record.
    pub fn discard() -> TrainLog {
        TrainLog {
            path: PathBuf::new(),
            out: None,
            start: Instant::now(),
        }
    }

    pub fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    pub fn write(&mut self, mut record: LogRecord) -> Result<()> {
        record.wall_time = self.elapsed();
        if let Some(out) = &mut self.out {
            serde_json::to_writer(&mut *out, &record)?;
            out.write_all(b"\n")
                .map_err(|e| Error::io_at(&self.path, e))?;
            out.flush().map_err(|e| Error::io_at(&self.path, e))?;
        }
        Ok(())
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
