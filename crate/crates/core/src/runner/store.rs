//! Append-only JSON Lines store of assessment records.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Rating;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("run store I/O error on {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("run store {path} line {line} is corrupt: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("record ({0}, {1}, run {2}) already exists in the store")]
    Duplicate(String, String, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// The reply never contained a usable rating.
    NoRatingFound,
    /// The provider failed after its retries.
    Provider,
    /// The image could not be read or encoded.
    Image,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Rating(Rating),
    Failure { kind: FailureKind, detail: String },
}

impl Outcome {
    pub fn rating(&self) -> Option<Rating> {
        match self {
            Outcome::Rating(r) => Some(*r),
            Outcome::Failure { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentRecord {
    pub image_id: String,
    pub model_id: String,
    pub run_index: u32,
    pub prompt_version: String,
    pub provider: String,
    pub raw_text: String,
    pub parsed: Outcome,
    pub attempts_used: u32,
    /// Seconds.
    pub latency: f64,
    pub timestamp: DateTime<Utc>,
}

pub type RecordKey = (String, String, u32);

impl AssessmentRecord {
    pub fn key(&self) -> RecordKey {
        (self.image_id.clone(), self.model_id.clone(), self.run_index)
    }
}

struct Inner {
    file: File,
    keys: HashSet<RecordKey>,
    records: Vec<AssessmentRecord>,
}

/// Each record is written as one complete line; a torn final line left by a
/// crash is truncated away on open.
pub struct RunStore {
    path: PathBuf,
    inner: Mutex<Inner>,
}

impl RunStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        let io = |e: std::io::Error| StoreError::Io {
            path: path.clone(),
            message: e.to_string(),
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(io)?;

        let mut records = Vec::new();
        let mut keys = HashSet::new();
        let mut valid_len: u64 = 0;
        {
            let mut reader = BufReader::new(&mut file);
            reader.seek(SeekFrom::Start(0)).map_err(io)?;
            let mut line = String::new();
            let mut line_no = 0;
            loop {
                line.clear();
                let n = reader.read_line(&mut line).map_err(io)?;
                if n == 0 {
                    break;
                }
                line_no += 1;
                if !line.ends_with('\n') {
                    log::warn!("dropping torn final line {line_no} of {}", path.display());
                    break;
                }
                valid_len += n as u64;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: AssessmentRecord =
                    serde_json::from_str(line.trim_end()).map_err(|e| StoreError::Corrupt {
                        path: path.clone(),
                        line: line_no,
                        message: e.to_string(),
                    })?;
                let key = rec.key();
                if !keys.insert(key.clone()) {
                    return Err(StoreError::Duplicate(key.0, key.1, key.2));
                }
                records.push(rec);
            }
        }
        if file.metadata().map_err(io)?.len() != valid_len {
            file.set_len(valid_len).map_err(io)?;
        }
        Ok(Self {
            path,
            inner: Mutex::new(Inner {
                file,
                keys,
                records,
            }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn contains(&self, image_id: &str, model_id: &str, run_index: u32) -> bool {
        self.inner
            .lock()
            .unwrap()
            .keys
            .contains(&(image_id.to_string(), model_id.to_string(), run_index))
    }

    pub fn append(&self, record: AssessmentRecord) -> Result<(), StoreError> {
        let mut inner = self.inner.lock().unwrap();
        let key = record.key();
        if inner.keys.contains(&key) {
            return Err(StoreError::Duplicate(key.0, key.1, key.2));
        }
        let mut line = serde_json::to_string(&record).expect("record serializes");
        line.push('\n');
        inner
            .file
            .write_all(line.as_bytes())
            .and_then(|_| inner.file.flush())
            .map_err(|e| StoreError::Io {
                path: self.path.clone(),
                message: e.to_string(),
            })?;
        inner.keys.insert(key);
        inner.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Snapshot in append order.
    pub fn records(&self) -> Vec<AssessmentRecord> {
        self.inner.lock().unwrap().records.clone()
    }
}
