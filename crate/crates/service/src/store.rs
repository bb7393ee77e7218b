//! Append-only label log.
//!
//! Every accepted label is written as one JSON line and synced to disk
//! before the call returns. State is rebuilt by replaying the log; a
//! truncated final line (from a crash mid-write) is dropped and cut off the
//! file. Appends go through one writer lock; readers load an immutable
//! snapshot.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use arc_swap::ArcSwap;
use chrono::{SecondsFormat, Utc};
use qagen::data::VerificationLabel;

use crate::error::ServiceError;

/// Replayed view of the log.
#[derive(Clone, Debug, Default)]
pub struct Snapshot {
    /// Every record in log order.
    pub log: Vec<VerificationLabel>,
    /// (task_id, annotator) → index of the winning record in `log`.
    pub effective: HashMap<(String, String), usize>,
}

impl Snapshot {
    fn apply(&mut self, label: VerificationLabel) {
        let key = (label.task_id.clone(), label.annotator.clone());
        let idx = self.log.len();
        let wins = match self.effective.get(&key) {
            Some(&old) => label.ts.as_str() >= self.log[old].ts.as_str(),
            None => true,
        };
        self.log.push(label);
        if wins {
            self.effective.insert(key, idx);
        }
    }

    pub fn has_label(&self, task_id: &str, annotator: &str) -> bool {
        self.effective.contains_key(&(task_id.to_string(), annotator.to_string()))
    }

    /// Effective labels in the log order of their winning records.
    pub fn effective_labels(&self) -> Vec<&VerificationLabel> {
        let mut idx: Vec<usize> = self.effective.values().copied().collect();
        idx.sort_unstable();
        idx.into_iter().map(|i| &self.log[i]).collect()
    }

    /// JSONL export of the effective labels.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for l in self.effective_labels() {
            out.push_str(&serde_json::to_string(l).expect("labels serialize"));
            out.push('\n');
        }
        out
    }
}

struct Writer {
    file: File,
    last_ts: String,
}

pub struct LabelStore {
    path: PathBuf,
    writer: Mutex<Writer>,
    state: ArcSwap<Snapshot>,
}

impl LabelStore {
    /// Opens (creating if needed) and replays the log at `path`.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)
            .map_err(|e| ServiceError::Io(path.clone(), e))?;
        let (snapshot, good_len) = replay(&file, &path)?;
        let len = file.metadata().map_err(|e| ServiceError::Io(path.clone(), e))?.len();
        if good_len < len {
            log::warn!("{}: dropping truncated final record ({} bytes)", path.display(), len - good_len);
            file.set_len(good_len).map_err(|e| ServiceError::Io(path.clone(), e))?;
            file.seek(SeekFrom::End(0)).map_err(|e| ServiceError::Io(path.clone(), e))?;
        }
        let last_ts = snapshot.log.iter().map(|l| l.ts.clone()).max().unwrap_or_default();
        Ok(LabelStore {
            path,
            writer: Mutex::new(Writer { file, last_ts }),
            state: ArcSwap::from_pointee(snapshot),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.state.load_full()
    }

    /// Appends a label stamped with the current time (never earlier than the
    /// previous record) and returns it once it is on disk.
    pub fn append(&self, task_id: &str, annotator: &str, label: bool) -> Result<VerificationLabel, ServiceError> {
        let mut w = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        let now = Utc::now().to_rfc3339_opts(SecondsFormat::Nanos, true);
        let ts = if now < w.last_ts { w.last_ts.clone() } else { now };
        let record = VerificationLabel {
            task_id: task_id.to_string(),
            annotator: annotator.to_string(),
            label,
            ts: ts.clone(),
        };
        let mut line = serde_json::to_string(&record).expect("labels serialize");
        line.push('\n');
        w.file
            .write_all(line.as_bytes())
            .and_then(|_| w.file.sync_data())
            .map_err(|e| ServiceError::Io(self.path.clone(), e))?;
        w.last_ts = ts;
        let mut next = Snapshot::clone(&self.state.load());
        next.apply(record.clone());
        self.state.store(Arc::new(next));
        Ok(record)
    }
}

/// Replays a log file; returns the state and the byte length of the valid
/// prefix.
fn replay(file: &File, path: &Path) -> Result<(Snapshot, u64), ServiceError> {
    let mut reader = BufReader::new(file);
    let mut snapshot = Snapshot::default();
    let mut good = 0u64;
    let mut line_no = 0;
    let mut buf = String::new();
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(|e| ServiceError::Io(path.to_path_buf(), e))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.ends_with('\n');
        if buf.trim().is_empty() {
            if complete {
                good += n as u64;
            }
            continue;
        }
        match qagen::data::parse_record::<VerificationLabel>(buf.trim_end(), line_no) {
            Ok(l) => {
                if !complete {
                    // a full record missing only its newline: keep it and
                    // restore the terminator
                    snapshot.apply(l);
                    let mut f = file;
                    f.write_all(b"\n").map_err(|e| ServiceError::Io(path.to_path_buf(), e))?;
                    good += n as u64 + 1;
                    break;
                }
                snapshot.apply(l);
                good += n as u64;
            }
            Err(_) if !complete => break,
            Err(e) => return Err(ServiceError::CorruptLog(path.to_path_buf(), e.to_string())),
        }
    }
    Ok((snapshot, good))
}
