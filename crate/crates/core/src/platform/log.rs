//! Append-only JSON-lines log and full-state snapshot file.
//!
//! Every line is `{seq, ts, kind, payload}`. `kind == "command"` lines are
//! the replay source; `event.*` lines are derived and ignored on replay.
//! A snapshot `{seq, state}` covers every entry up to and including `seq`.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::state::PlatformState;
use crate::canonical::to_canonical_json;
use crate::error::{Error, Result};
use crate::types::Millis;

pub const COMMAND_KIND: &str = "command";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub ts: Millis,
    pub kind: String,
    pub payload: Value,
}

impl LogEntry {
    pub fn is_command(&self) -> bool {
        self.kind == COMMAND_KIND
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub seq: u64,
    pub state: PlatformState,
}

pub trait LogStore: Send {
    /// Appends all entries or fails; a failure may leave a torn tail.
    fn append(&mut self, entries: &[LogEntry]) -> Result<()>;
    fn read_all(&mut self) -> Result<Vec<LogEntry>>;
    fn write_snapshot(&mut self, snapshot: &StateSnapshot) -> Result<()>;
    fn read_snapshot(&mut self) -> Result<Option<StateSnapshot>>;
}

#[derive(Debug, Default, Clone)]
pub struct MemoryLog {
    pub entries: Vec<LogEntry>,
    /// Canonical JSON, as the file store would hold it.
    pub snapshot: Option<String>,
}

impl LogStore for MemoryLog {
    fn append(&mut self, entries: &[LogEntry]) -> Result<()> {
        self.entries.extend_from_slice(entries);
        Ok(())
    }

    fn read_all(&mut self) -> Result<Vec<LogEntry>> {
        Ok(self.entries.clone())
    }

    fn write_snapshot(&mut self, snapshot: &StateSnapshot) -> Result<()> {
        self.snapshot = Some(to_canonical_json(snapshot));
        Ok(())
    }

    fn read_snapshot(&mut self) -> Result<Option<StateSnapshot>> {
        self.snapshot
            .as_deref()
            .map(|s| serde_json::from_str(s).map_err(Error::from))
            .transpose()
    }
}

pub const LOG_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

/// `events.jsonl` and `snapshot.json` inside one state directory.
#[derive(Debug)]
pub struct FileLog {
    dir: PathBuf,
    file: File,
    fsync: bool,
}

impl FileLog {
    /// Opens or creates the log, truncating a torn final line.
    pub fn open(dir: impl AsRef<Path>, fsync: bool) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let path = dir.join(LOG_FILE);
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)?;
        let (_, good_len) = scan(&file)?;
        if good_len < file.metadata()?.len() {
            file.set_len(good_len)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok(Self { dir, file, fsync })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

/// Parses every complete line. Returns the entries and the byte length of
/// the valid prefix. Only the final line may be torn.
fn scan(file: &File) -> Result<(Vec<LogEntry>, u64)> {
    let mut reader = BufReader::new(file.try_clone()?);
    reader.seek(SeekFrom::Start(0))?;
    let mut entries = Vec::new();
    let mut good = 0u64;
    let mut line = Vec::new();
    let mut lineno = 0usize;
    loop {
        line.clear();
        let n = reader.read_until(b'\n', &mut line)?;
        if n == 0 {
            break;
        }
        lineno += 1;
        let complete = line.last() == Some(&b'\n');
        match serde_json::from_slice::<LogEntry>(&line) {
            Ok(e) if complete => {
                entries.push(e);
                good += n as u64;
            }
            _ => {
                let mut rest = Vec::new();
                std::io::Read::read_to_end(&mut reader, &mut rest)?;
                if rest.is_empty() {
                    break;
                }
                return Err(Error::Storage(format!("corrupt log line {lineno}")));
            }
        }
    }
    Ok((entries, good))
}

impl LogStore for FileLog {
    fn append(&mut self, entries: &[LogEntry]) -> Result<()> {
        let mut buf = Vec::new();
        for e in entries {
            serde_json::to_writer(&mut buf, e)?;
            buf.push(b'\n');
        }
        self.file.write_all(&buf)?;
        if self.fsync {
            self.file.sync_data()?;
        }
        Ok(())
    }

    fn read_all(&mut self) -> Result<Vec<LogEntry>> {
        Ok(scan(&self.file)?.0)
    }

    fn write_snapshot(&mut self, snapshot: &StateSnapshot) -> Result<()> {
        let tmp = self.dir.join(format!(".{SNAPSHOT_FILE}.tmp"));
        let mut f = File::create(&tmp)?;
        f.write_all(to_canonical_json(snapshot).as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, self.dir.join(SNAPSHOT_FILE))?;
        Ok(())
    }

    fn read_snapshot(&mut self) -> Result<Option<StateSnapshot>> {
        match fs::read(self.dir.join(SNAPSHOT_FILE)) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(seq: u64) -> LogEntry {
        LogEntry {
            seq,
            ts: seq * 10,
            kind: COMMAND_KIND.into(),
            payload: serde_json::json!({"type": "tick"}),
        }
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut log = FileLog::open(dir.path(), false).unwrap();
            log.append(&[entry(1), entry(2)]).unwrap();
        }
        let path = dir.path().join(LOG_FILE);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"seq":3,"ts":30,"ki"#).unwrap();
        drop(f);
        let mut log = FileLog::open(dir.path(), false).unwrap();
        assert_eq!(log.read_all().unwrap(), vec![entry(1), entry(2)]);
        log.append(&[entry(3)]).unwrap();
        assert_eq!(log.read_all().unwrap().len(), 3);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(LOG_FILE);
        let good = serde_json::to_string(&entry(1)).unwrap();
        fs::write(&path, format!("{good}\nnot json\n{good}\n")).unwrap();
        assert!(matches!(FileLog::open(dir.path(), false), Err(Error::Storage(_))));
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = FileLog::open(dir.path(), false).unwrap();
        assert!(log.read_snapshot().unwrap().is_none());
        let snap = StateSnapshot {
            seq: 7,
            state: PlatformState::from_genesis(Default::default()),
        };
        log.write_snapshot(&snap).unwrap();
        assert_eq!(log.read_snapshot().unwrap(), Some(snap));
    }
}
