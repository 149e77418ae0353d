//! NDJSON files for control-plane records: the proposal journal and the
//! audit log.

use crate::proposal::Proposal;
use resched_core::model::Minutes;
use resched_core::situation::{SituationKind, Subject};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

/// Append-only NDJSON file. A trailing line without its newline is a torn
/// write and is cut off when the file is opened.
#[derive(Debug)]
pub struct NdjsonFile {
    path: PathBuf,
    file: File,
    fsync: bool,
}

impl NdjsonFile {
    pub fn open<T: DeserializeOwned>(path: impl AsRef<Path>, fsync: bool) -> io::Result<(Self, Vec<T>)> {
        let path = path.as_ref().to_path_buf();
        let text = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e),
        };
        let complete = text.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
        let mut records = Vec::new();
        for (i, line) in text[..complete].split(|b| *b == b'\n').enumerate() {
            if line.is_empty() {
                continue;
            }
            let r = serde_json::from_slice(line)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), i + 1)))?;
            records.push(r);
        }
        let file = OpenOptions::new().create(true).append(true).read(true).open(&path)?;
        if complete < text.len() {
            file.set_len(complete as u64)?;
        }
        Ok((Self { path, file, fsync }, records))
    }

    pub fn append<T: Serialize>(&mut self, record: &T) -> io::Result<()> {
        let mut line = serde_json::to_vec(record).map_err(io::Error::other)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        if self.fsync {
            self.file.sync_data()?;
        }
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// One control-plane change, placed after event `after_seq` so recovery can
/// interleave it with the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub after_seq: u64,
    #[serde(flatten)]
    pub entry: JournalEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JournalEntry {
    /// Full proposal state after a change.
    Proposal { proposal: Box<Proposal> },
    Acknowledge { situation_id: String },
    Raise {
        kind: SituationKind,
        subject: Subject,
        evidence: Vec<u64>,
        requires_reconfiguration: bool,
    },
    /// The simulator clock after a command moved it.
    Clock { clock: Minutes },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditOutcome {
    Ok,
    Rejected,
    Unauthorized,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    /// Wall clock, milliseconds since the Unix epoch.
    pub ts: u64,
    pub sim_clock: Minutes,
    /// Token name, absent when the caller did not authenticate.
    pub principal: Option<String>,
    pub action: String,
    pub request: String,
    pub outcome: AuditOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

pub fn wall_millis() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}
