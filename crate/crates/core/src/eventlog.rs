//! Append-only, sequence-numbered event log persisted as NDJSON.
//!
//! One writer owns the [`EventLog`]; any number of [`LogReader`]s may read
//! concurrently. A line without its trailing newline is a torn write and is
//! dropped on load.

use crate::event::{Event, EventDraft};
use crate::model::Minutes;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("timestamp regression: ts {ts} is before last ts {last}")]
    TimestampRegression { ts: Minutes, last: Minutes },
    #[error("log corrupt at seq {seq}: {reason}")]
    Corrupt { seq: u64, reason: String },
    #[error("seq_start must be >= 1")]
    InvalidStart,
    #[error("storage failure: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Durability {
    /// fsync before acknowledging an append.
    #[default]
    Sync,
    /// Flush to the OS only.
    Flush,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadReport {
    pub head: u64,
    /// Bytes of a trailing torn record that were discarded.
    pub discarded_bytes: usize,
}

#[derive(Debug, Default)]
struct Shared {
    events: Vec<Event>,
}

/// Read handle. Each read takes a point-in-time copy, so an iteration never
/// observes a concurrent append halfway.
#[derive(Debug, Clone)]
pub struct LogReader {
    shared: Arc<RwLock<Shared>>,
}

impl LogReader {
    pub fn read_from(&self, seq_start: u64) -> Result<Vec<Event>, LogError> {
        if seq_start == 0 {
            return Err(LogError::InvalidStart);
        }
        let shared = self.shared.read().expect("log lock poisoned");
        let from = (seq_start - 1) as usize;
        Ok(shared.events.get(from..).map(<[Event]>::to_vec).unwrap_or_default())
    }

    pub fn head(&self) -> u64 {
        self.shared.read().expect("log lock poisoned").events.len() as u64
    }
}

#[derive(Debug)]
pub struct EventLog {
    shared: Arc<RwLock<Shared>>,
    file: Option<File>,
    path: Option<PathBuf>,
    durability: Durability,
    last_ts: Option<Minutes>,
}

impl EventLog {
    /// A log that lives only in memory.
    pub fn in_memory() -> Self {
        Self {
            shared: Arc::default(),
            file: None,
            path: None,
            durability: Durability::Flush,
            last_ts: None,
        }
    }

    /// Opens (or creates) the log at `path`, recovering every complete record.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, LoadReport), LogError> {
        Self::load_with(path, Durability::default())
    }

    pub fn load_with(path: impl AsRef<Path>, durability: Durability) -> Result<(Self, LoadReport), LogError> {
        let path = path.as_ref();
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;

        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        let discarded = bytes.len() - complete;
        let mut events: Vec<Event> = Vec::new();
        let mut last_ts: Option<Minutes> = None;
        let body = bytes[..complete].strip_suffix(b"\n").unwrap_or(&[]);
        let lines = (complete > 0).then(|| body.split(|&b| b == b'\n'));
        for line in lines.into_iter().flatten() {
            let expected = events.len() as u64 + 1;
            let event: Event = serde_json::from_slice(line).map_err(|e| LogError::Corrupt {
                seq: expected,
                reason: e.to_string(),
            })?;
            if event.seq != expected {
                return Err(LogError::Corrupt {
                    seq: expected,
                    reason: format!("found seq {}", event.seq),
                });
            }
            if last_ts.is_some_and(|t| event.ts < t) {
                return Err(LogError::Corrupt {
                    seq: expected,
                    reason: "timestamp regression".into(),
                });
            }
            last_ts = Some(event.ts);
            events.push(event);
        }
        if discarded > 0 {
            tracing::warn!(
                path = %path.display(),
                bytes = discarded,
                "discarding torn record at end of event log"
            );
            file.set_len(complete as u64)?;
        }
        file.seek(SeekFrom::End(0))?;

        let head = events.len() as u64;
        let log = Self {
            shared: Arc::new(RwLock::new(Shared { events })),
            file: Some(file),
            path: Some(path.to_owned()),
            durability,
            last_ts,
        };
        Ok((
            log,
            LoadReport {
                head,
                discarded_bytes: discarded,
            },
        ))
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn reader(&self) -> LogReader {
        LogReader {
            shared: Arc::clone(&self.shared),
        }
    }

    pub fn head(&self) -> u64 {
        self.reader().head()
    }

    pub fn last_ts(&self) -> Option<Minutes> {
        self.last_ts
    }

    pub fn read_from(&self, seq_start: u64) -> Result<Vec<Event>, LogError> {
        self.reader().read_from(seq_start)
    }

    pub fn append(&mut self, draft: EventDraft) -> Result<u64, LogError> {
        Ok(self.append_batch(vec![draft])?[0])
    }

    /// Appends all drafts or none. Returns the assigned seqs once the records
    /// are written (and fsynced under [`Durability::Sync`]).
    pub fn append_batch(&mut self, drafts: Vec<EventDraft>) -> Result<Vec<u64>, LogError> {
        let mut last = self.last_ts;
        for d in &drafts {
            if let Some(l) = last {
                if d.ts < l {
                    return Err(LogError::TimestampRegression { ts: d.ts, last: l });
                }
            }
            last = Some(d.ts);
        }
        let head = self.head();
        let events: Vec<Event> = drafts
            .into_iter()
            .enumerate()
            .map(|(i, d)| d.with_seq(head + 1 + i as u64))
            .collect();

        if let Some(file) = self.file.as_mut() {
            let mut buf = Vec::new();
            for e in &events {
                serde_json::to_writer(&mut buf, e).map_err(io::Error::from)?;
                buf.push(b'\n');
            }
            let before = file.stream_position()?;
            let written = file
                .write_all(&buf)
                .and_then(|_| file.flush())
                .and_then(|_| match self.durability {
                    Durability::Sync => file.sync_data(),
                    Durability::Flush => Ok(()),
                });
            if let Err(e) = written {
                // Leave the file exactly as it was.
                let _ = file.set_len(before);
                let _ = file.seek(SeekFrom::Start(before));
                return Err(e.into());
            }
        }

        let seqs = events.iter().map(|e| e.seq).collect();
        self.last_ts = last;
        self.shared
            .write()
            .expect("log lock poisoned")
            .events
            .extend(events);
        Ok(seqs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{EventPayload, Maintenance};

    fn draft(ts: Minutes) -> EventDraft {
        EventDraft::new(ts, EventPayload::MaintenanceStart(Maintenance { line_id: "L1".into() }))
    }

    #[test]
    fn seqs_are_gapless_from_one() {
        let mut log = EventLog::in_memory();
        assert_eq!(log.append(draft(0)).unwrap(), 1);
        for i in 2..=41 {
            assert_eq!(log.append(draft(i)).unwrap(), i as u64);
        }
        assert_eq!(log.append(draft(50)).unwrap(), 42);
    }

    #[test]
    fn timestamp_regression_is_rejected() {
        let mut log = EventLog::in_memory();
        log.append(draft(10)).unwrap();
        assert!(matches!(log.append(draft(9)), Err(LogError::TimestampRegression { .. })));
        assert_eq!(log.head(), 1);
    }

    #[test]
    fn batch_with_regression_appends_nothing() {
        let mut log = EventLog::in_memory();
        log.append(draft(10)).unwrap();
        assert!(log.append_batch(vec![draft(11), draft(12), draft(5)]).is_err());
        assert_eq!(log.head(), 1);
    }

    #[test]
    fn read_from_slices() {
        let mut log = EventLog::in_memory();
        for i in 0..10 {
            log.append(draft(i)).unwrap();
        }
        let all: Vec<u64> = log.read_from(1).unwrap().iter().map(|e| e.seq).collect();
        assert_eq!(all, (1..=10).collect::<Vec<_>>());
        assert!(log.read_from(11).unwrap().is_empty());
        let tail: Vec<u64> = log.read_from(5).unwrap().iter().map(|e| e.seq).collect();
        assert_eq!(tail, (5..=10).collect::<Vec<_>>());
        assert!(matches!(log.read_from(0), Err(LogError::InvalidStart)));
    }

    #[test]
    fn empty_file_has_head_zero() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("events.ndjson");
        std::fs::write(&p, b"").unwrap();
        let (_, r) = EventLog::load(&p).unwrap();
        assert_eq!(r, LoadReport { head: 0, discarded_bytes: 0 });
    }

    #[test]
    fn torn_tail_is_discarded_and_sequence_continues() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("events.ndjson");
        {
            let (mut log, _) = EventLog::load(&p).unwrap();
            for i in 0..3 {
                log.append(draft(i)).unwrap();
            }
        }
        let mut f = OpenOptions::new().append(true).open(&p).unwrap();
        f.write_all(br#"{"seq":4,"ts":3,"kind":"Mainten"#).unwrap();
        drop(f);

        let (mut log, r) = EventLog::load(&p).unwrap();
        assert_eq!(r.head, 3);
        assert!(r.discarded_bytes > 0);
        assert_eq!(log.append(draft(4)).unwrap(), 4);
        drop(log);
        let (_, r) = EventLog::load(&p).unwrap();
        assert_eq!(r, LoadReport { head: 4, discarded_bytes: 0 });
    }

    #[test]
    fn corrupt_middle_record_refuses_to_open() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("events.ndjson");
        {
            let (mut log, _) = EventLog::load(&p).unwrap();
            for i in 0..3 {
                log.append(draft(i)).unwrap();
            }
        }
        let text = std::fs::read_to_string(&p).unwrap();
        let broken = text.replacen("\"seq\":2", "\"seq\":2,,", 1);
        std::fs::write(&p, broken).unwrap();
        let err = EventLog::load(&p).unwrap_err();
        assert!(err.to_string().starts_with("log corrupt at seq 2"), "{err}");
    }
}
