//! Append-only event journal.
//!
//! Every scheduler mutation is one [`Envelope`] serialized as a single JSON
//! line (UTF-8, `\n` terminated). Lines carry a gap-free sequence number
//! starting at 1. Replaying the lines in order through
//! [`Scheduler::replay`](super::Scheduler::replay) rebuilds the calendar.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::allocator::Allocation;
use crate::{ReservationId, Timestamp, TimeWindow};

use super::{Admission, Conflict, ResourceSpec, SurveyResponses, UsageRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Requested {
        id: ReservationId,
        user: String,
        window: TimeWindow,
        spec: ResourceSpec,
    },
    Evaluated {
        id: ReservationId,
        outcome: Admission,
        conflicts: Vec<Conflict>,
    },
    Reviewed {
        id: ReservationId,
        approve: bool,
    },
    Activated {
        id: ReservationId,
        allocation: Allocation,
    },
    ActivationFailed {
        id: ReservationId,
        reason: String,
    },
    Completed {
        id: ReservationId,
        usage: UsageRecord,
    },
    Cancelled {
        id: ReservationId,
        reason: String,
        usage: Option<UsageRecord>,
    },
    SurveySubmitted {
        id: ReservationId,
        responses: SurveyResponses,
    },
}

impl Event {
    pub fn reservation_id(&self) -> &ReservationId {
        match self {
            Event::Requested { id, .. }
            | Event::Evaluated { id, .. }
            | Event::Reviewed { id, .. }
            | Event::Activated { id, .. }
            | Event::ActivationFailed { id, .. }
            | Event::Completed { id, .. }
            | Event::Cancelled { id, .. }
            | Event::SurveySubmitted { id, .. } => id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub seq: u64,
    pub t: Timestamp,
    pub actor: String,
    pub event: Event,
}

pub trait Journal: Send + Sync {
    /// Makes `entry` durable. Must not return before it is.
    fn append(&mut self, entry: &Envelope) -> io::Result<()>;
}

/// Journal kept in memory; clones share the same buffer.
#[derive(Debug, Clone, Default)]
pub struct MemoryJournal {
    entries: Arc<Mutex<Vec<Envelope>>>,
}

impl MemoryJournal {
    pub fn new() -> MemoryJournal {
        MemoryJournal::default()
    }

    pub fn entries(&self) -> Vec<Envelope> {
        self.entries.lock().unwrap().clone()
    }
}

impl Journal for MemoryJournal {
    fn append(&mut self, entry: &Envelope) -> io::Result<()> {
        self.entries.lock().unwrap().push(entry.clone());
        Ok(())
    }
}

/// Discards everything. For scratch schedulers.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullJournal;

impl Journal for NullJournal {
    fn append(&mut self, _: &Envelope) -> io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RecoveryError {
    #[error("RecoveryError: {path}: corrupt record at byte offset {offset}: {reason}")]
    Corrupt {
        path: PathBuf,
        offset: u64,
        reason: String,
    },
    #[error("RecoveryError: {0}")]
    Io(#[from] io::Error),
    #[error("RecoveryError: replay failed at seq {seq}: {reason}")]
    Replay { seq: u64, reason: String },
}

/// JSON-lines journal on disk, fsynced after every append.
#[derive(Debug)]
pub struct FileJournal {
    path: PathBuf,
    file: File,
}

impl FileJournal {
    /// Opens (creating if needed) the journal at `path` and returns it with
    /// every complete record it already holds.
    ///
    /// A final line without its newline is an append that never completed
    /// and was never acknowledged; it is cut off. Any complete line that does
    /// not parse, or breaks the sequence, fails with the line's byte offset.
    pub fn open(path: impl AsRef<Path>) -> Result<(FileJournal, Vec<Envelope>), RecoveryError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .read(true)
            .write(true)
            .open(&path)?;
        let entries = read_entries(&path, &mut file)?;
        file.seek(SeekFrom::End(0))?;
        Ok((FileJournal { path, file }, entries))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

fn read_entries(path: &Path, file: &mut File) -> Result<Vec<Envelope>, RecoveryError> {
    file.seek(SeekFrom::Start(0))?;
    let mut reader = BufReader::new(&mut *file);
    let mut entries = Vec::new();
    let mut offset = 0u64;
    let mut line = Vec::new();
    let mut torn_at = None;
    loop {
        line.clear();
        let n = reader.read_until(b'\n', &mut line)?;
        if n == 0 {
            break;
        }
        if line.last() != Some(&b'\n') {
            torn_at = Some(offset);
            break;
        }
        let corrupt = |reason: String| RecoveryError::Corrupt {
            path: path.to_path_buf(),
            offset,
            reason,
        };
        let text = std::str::from_utf8(&line[..n - 1]).map_err(|e| corrupt(e.to_string()))?;
        let entry: Envelope = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
        let expected = entries.len() as u64 + 1;
        if entry.seq != expected {
            return Err(corrupt(format!("sequence {} where {expected} was expected", entry.seq)));
        }
        entries.push(entry);
        offset += n as u64;
    }
    drop(reader);
    if let Some(at) = torn_at {
        file.set_len(at)?;
        file.sync_all()?;
    }
    Ok(entries)
}

impl Journal for FileJournal {
    fn append(&mut self, entry: &Envelope) -> io::Result<()> {
        let mut line = serde_json::to_vec(entry).map_err(io::Error::other)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(seq: u64) -> Envelope {
        Envelope {
            seq,
            t: Timestamp(seq as i64),
            actor: "a".into(),
            event: Event::Reviewed {
                id: ReservationId::from_seq(1),
                approve: true,
            },
        }
    }

    #[test]
    fn reopen_returns_appended_entries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        {
            let (mut j, existing) = FileJournal::open(&path).unwrap();
            assert!(existing.is_empty());
            j.append(&entry(1)).unwrap();
            j.append(&entry(2)).unwrap();
        }
        let (_, entries) = FileJournal::open(&path).unwrap();
        assert_eq!(entries, vec![entry(1), entry(2)]);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        {
            let (mut j, _) = FileJournal::open(&path).unwrap();
            j.append(&entry(1)).unwrap();
        }
        let intact = std::fs::metadata(&path).unwrap().len();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"seq\":2,\"t\":").unwrap();
        drop(f);
        let (mut j, entries) = FileJournal::open(&path).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), intact);
        j.append(&entry(2)).unwrap();
        let (_, entries) = FileJournal::open(&path).unwrap();
        assert_eq!(entries.len(), 2);
    }

    #[test]
    fn corrupt_line_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        {
            let (mut j, _) = FileJournal::open(&path).unwrap();
            j.append(&entry(1)).unwrap();
        }
        let offset = std::fs::metadata(&path).unwrap().len();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"not json\n").unwrap();
        drop(f);
        match FileJournal::open(&path) {
            Err(RecoveryError::Corrupt { offset: at, .. }) => assert_eq!(at, offset),
            other => panic!("expected corruption error, got {other:?}"),
        }
    }

    #[test]
    fn sequence_gap_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        {
            let (mut j, _) = FileJournal::open(&path).unwrap();
            j.append(&entry(1)).unwrap();
            j.append(&entry(3)).unwrap();
        }
        assert!(matches!(FileJournal::open(&path), Err(RecoveryError::Corrupt { .. })));
    }
}
