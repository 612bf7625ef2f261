use std::collections::BTreeMap;
use std::fs::{File, OpenOptions, TryLockError};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::run::{MetricRecord, TrialOutput};
use crate::algorithms::AlgorithmKind;
use crate::error::{Error, Result};
use crate::selection::{SubRunRecord, TrialRecord, SCHEMA_VERSION};

/// One line of the results store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StoreLine {
    Trial(TrialRecord),
    SubRun(SubRunRecord),
    Metrics(MetricRecord),
}

impl StoreLine {
    fn schema_version(&self) -> u32 {
        match self {
            StoreLine::Trial(r) => r.provenance.schema_version,
            StoreLine::SubRun(r) => r.provenance.schema_version,
            StoreLine::Metrics(r) => r.provenance.schema_version,
        }
    }
}

/// Key identifying a trial within a store.
pub type TrialKey = (String, AlgorithmKind, usize, usize);

pub fn trial_key(r: &TrialRecord) -> TrialKey {
    let p = &r.provenance;
    (p.plan_hash.clone(), p.algorithm, p.trial, p.seed_index)
}

/// Parsed store contents. A job that was interrupted and re-run leaves duplicates;
/// the last copy of each record wins.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StoreContents {
    pub trials: Vec<TrialRecord>,
    pub subruns: Vec<SubRunRecord>,
    pub metrics: Vec<MetricRecord>,
    /// Bytes after the last newline, left by an interrupted append.
    pub torn_tail: usize,
}

impl StoreContents {
    pub fn parse(bytes: &[u8], origin: &str) -> Result<Self> {
        let end = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        let text = std::str::from_utf8(&bytes[..end])
            .map_err(|e| Error::format("results store", format!("{origin}: {e}")))?;
        let mut trials: BTreeMap<TrialKey, TrialRecord> = BTreeMap::new();
        let mut subruns: BTreeMap<(TrialKey, String), SubRunRecord> = BTreeMap::new();
        let mut metrics = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: StoreLine = serde_json::from_str(line)
                .map_err(|e| Error::format("results store", format!("{origin} line {}: {e}", n + 1)))?;
            if parsed.schema_version() != SCHEMA_VERSION {
                return Err(Error::format(
                    "results store",
                    format!("{origin} line {}: schema version {}", n + 1, parsed.schema_version()),
                ));
            }
            match parsed {
                StoreLine::Trial(r) => {
                    trials.insert(trial_key(&r), r);
                }
                StoreLine::SubRun(r) => {
                    let p = &r.provenance;
                    let key = (p.plan_hash.clone(), p.algorithm, p.trial, p.seed_index);
                    subruns.insert((key, r.held_out.clone()), r);
                }
                StoreLine::Metrics(m) => metrics.push(m),
            }
        }
        Ok(Self {
            trials: trials.into_values().collect(),
            subruns: subruns.into_values().collect(),
            metrics,
            torn_tail: bytes.len() - end,
        })
    }

    /// Reads a store without modifying it.
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&bytes, &path.display().to_string())
    }

    pub fn trials_for_plan<'a>(&'a self, plan_hash: &'a str) -> impl Iterator<Item = &'a TrialRecord> + 'a {
        self.trials.iter().filter(move |r| r.provenance.plan_hash == plan_hash)
    }
}

/// Append-only JSONL store held open by a single writer.
///
/// The file carries an exclusive advisory lock for the writer's lifetime, and each
/// append is one `write` of whole newline-terminated lines followed by a data sync.
#[derive(Debug)]
pub struct ResultsStore {
    path: PathBuf,
    file: Mutex<File>,
}

impl ResultsStore {
    /// Opens (creating if needed) and locks the store, dropping any torn trailing line.
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        match file.try_lock() {
            Ok(()) => {}
            Err(TryLockError::WouldBlock) => {
                return Err(Error::io(
                    path,
                    std::io::Error::new(std::io::ErrorKind::WouldBlock, "store is locked by another writer"),
                ))
            }
            Err(TryLockError::Error(e)) => return Err(Error::io(path, e)),
        }
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        let contents = StoreContents::parse(&bytes, &path.display().to_string())?;
        if contents.torn_tail > 0 {
            let keep = (bytes.len() - contents.torn_tail) as u64;
            file.set_len(keep).map_err(|e| Error::io(path, e))?;
        }
        file.seek(SeekFrom::End(0)).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, lines: &[StoreLine]) -> Result<()> {
        let mut buf = Vec::new();
        for line in lines {
            serde_json::to_writer(&mut buf, line)?;
            buf.push(b'\n');
        }
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(&buf).map_err(|e| Error::io(&self.path, e))?;
        file.sync_data().map_err(|e| Error::io(&self.path, e))
    }

    /// Appends a job's output with its trial record last, so a complete trial record
    /// implies its sub-runs and metrics are on disk.
    pub fn append_output(&self, out: &TrialOutput) -> Result<()> {
        let mut lines: Vec<StoreLine> = out.metrics.iter().cloned().map(StoreLine::Metrics).collect();
        lines.extend(out.subruns.iter().cloned().map(StoreLine::SubRun));
        lines.push(StoreLine::Trial(out.trial.clone()));
        self.append(&lines)
    }

    /// Current contents, including this writer's appends.
    pub fn contents(&self) -> Result<StoreContents> {
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        let mut bytes = Vec::new();
        file.seek(SeekFrom::Start(0)).map_err(|e| Error::io(&self.path, e))?;
        let read = file.read_to_end(&mut bytes).map_err(|e| Error::io(&self.path, e));
        file.seek(SeekFrom::End(0)).map_err(|e| Error::io(&self.path, e))?;
        read?;
        StoreContents::parse(&bytes, &self.path.display().to_string())
    }
}
