//! Append-only persistence for run results.
//!
//! Two line-delimited JSON files live under each run directory:
//! `records.jsonl` (one outcome per line) and `transcripts.jsonl` (one full
//! prompt/response transcript per job). Appends go through a single lock and
//! end with a flush; on open, a partial trailing line left by a crash is
//! truncated away so the files only ever contain whole records.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::bench::LanguageId;
use crate::prompting::{Strategy, Transcript};
use crate::stats::OutcomeRecord;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";

/// Schema marker written into every record line.
pub const SCHEMA_VERSION: u32 = 1;

/// Identity of one unit of work; repeat rounds live inside one job.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JobKey {
    pub model_id: String,
    pub target: LanguageId,
    pub strategy: Strategy,
    pub task_number: u32,
}

impl JobKey {
    pub fn of_record(record: &OutcomeRecord) -> JobKey {
        JobKey {
            model_id: record.model_id.clone(),
            target: record.target,
            strategy: record.strategy,
            task_number: record.task_number,
        }
    }

    /// How many per-round records a completed job of this kind must have.
    pub fn expected_rounds(&self) -> u32 {
        match self.strategy {
            Strategy::Repeat(k) => k,
            _ => 1,
        }
    }

    /// Stable reference linking records to their transcript.
    pub fn transcript_ref(&self) -> String {
        format!(
            "{}:{}:{}:{}",
            self.model_id, self.target, self.strategy, self.task_number
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    schema: u32,
    #[serde(flatten)]
    record: OutcomeRecord,
}

#[derive(Debug, Serialize, Deserialize)]
struct TranscriptLine {
    schema: u32,
    #[serde(rename = "ref")]
    reference: String,
    transcript: Transcript,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt record at {path}:{line}: {reason}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

pub struct ResultsStore {
    dir: PathBuf,
    records: Mutex<File>,
    transcripts: Mutex<File>,
}

impl ResultsStore {
    /// Open (creating if needed) the store under `dir`, repairing any
    /// partial trailing line first.
    pub fn open(dir: &Path) -> Result<ResultsStore, StoreError> {
        std::fs::create_dir_all(dir).map_err(|source| StoreError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let open_append = |name: &str| -> Result<File, StoreError> {
            let path = dir.join(name);
            truncate_partial_trailing_line(&path)?;
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|source| StoreError::Io { path, source })
        };
        Ok(ResultsStore {
            dir: dir.to_path_buf(),
            records: Mutex::new(open_append(RECORDS_FILE)?),
            transcripts: Mutex::new(open_append(TRANSCRIPTS_FILE)?),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Append all of one job's records as a single write, then flush. The
    /// one-write shape keeps a job's rounds together on disk.
    pub fn append_records(&self, records: &[OutcomeRecord]) -> Result<(), StoreError> {
        let mut buf = Vec::new();
        for record in records {
            let line = RecordLine {
                schema: SCHEMA_VERSION,
                record: record.clone(),
            };
            serde_json::to_writer(&mut buf, &line).expect("record serializes");
            buf.push(b'\n');
        }
        let mut file = self.records.lock().unwrap();
        self.write_all(&mut file, &buf, RECORDS_FILE)
    }

    pub fn append_transcript(
        &self,
        reference: &str,
        transcript: &Transcript,
    ) -> Result<(), StoreError> {
        let line = TranscriptLine {
            schema: SCHEMA_VERSION,
            reference: reference.to_string(),
            transcript: transcript.clone(),
        };
        let mut buf = serde_json::to_vec(&line).expect("transcript serializes");
        buf.push(b'\n');
        let mut file = self.transcripts.lock().unwrap();
        self.write_all(&mut file, &buf, TRANSCRIPTS_FILE)
    }

    fn write_all(&self, file: &mut File, buf: &[u8], name: &str) -> Result<(), StoreError> {
        let io_err = |source| StoreError::Io {
            path: self.dir.join(name),
            source,
        };
        file.write_all(buf).map_err(io_err)?;
        file.flush().map_err(io_err)?;
        Ok(())
    }
}

/// If the file exists and does not end in a newline, drop the partial last
/// line (a crash artifact) so subsequent appends start clean.
fn truncate_partial_trailing_line(path: &Path) -> Result<(), StoreError> {
    let io_err = |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    };
    let Ok(mut file) = OpenOptions::new().read(true).write(true).open(path) else {
        return Ok(()); // absent is fine
    };
    let len = file.metadata().map_err(io_err)?.len();
    if len == 0 {
        return Ok(());
    }
    file.seek(SeekFrom::End(-1)).map_err(io_err)?;
    let mut last = [0u8; 1];
    file.read_exact(&mut last).map_err(io_err)?;
    if last[0] == b'\n' {
        return Ok(());
    }
    // Walk back to the previous newline.
    let mut contents = Vec::new();
    file.seek(SeekFrom::Start(0)).map_err(io_err)?;
    file.read_to_end(&mut contents).map_err(io_err)?;
    let keep = contents
        .iter()
        .rposition(|&b| b == b'\n')
        .map(|i| i + 1)
        .unwrap_or(0);
    log::warn!(
        "{}: dropping {} bytes of partial trailing record",
        path.display(),
        len as usize - keep
    );
    file.set_len(keep as u64).map_err(io_err)?;
    Ok(())
}

/// All whole records currently in a run directory.
pub fn read_records(dir: &Path) -> Result<Vec<OutcomeRecord>, StoreError> {
    let path = dir.join(RECORDS_FILE);
    read_lines(&path, |line: RecordLine| line.record)
}

/// All transcripts with their references.
pub fn read_transcripts(dir: &Path) -> Result<Vec<(String, Transcript)>, StoreError> {
    let path = dir.join(TRANSCRIPTS_FILE);
    read_lines(&path, |line: TranscriptLine| (line.reference, line.transcript))
}

fn read_lines<T, L, F>(path: &Path, project: F) -> Result<Vec<T>, StoreError>
where
    L: for<'de> Deserialize<'de>,
    F: Fn(L) -> T,
{
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(StoreError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut lines = reader.lines().enumerate().peekable();
    while let Some((idx, line)) = lines.next() {
        let line = line.map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<L>(&line) {
            Ok(parsed) => out.push(project(parsed)),
            Err(e) if lines.peek().is_none() => {
                // Partial trailing line from a crash mid-append: ignore it.
                log::warn!("{}: ignoring partial trailing line: {e}", path.display());
            }
            Err(e) => {
                return Err(StoreError::Corrupt {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

/// Jobs whose full complement of per-round records is already present.
pub fn completed_jobs(records: &[OutcomeRecord]) -> BTreeSet<JobKey> {
    let mut rounds: std::collections::BTreeMap<JobKey, BTreeSet<u32>> =
        std::collections::BTreeMap::new();
    for record in records {
        rounds
            .entry(JobKey::of_record(record))
            .or_default()
            .insert(record.round);
    }
    rounds
        .into_iter()
        .filter(|(key, seen)| (1..=key.expected_rounds()).all(|r| seen.contains(&r)))
        .map(|(key, _)| key)
        .collect()
}
