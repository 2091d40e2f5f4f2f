//! Append-only JSONL store: one game per line, plus a sidecar transcript file.

use std::collections::{BTreeSet, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::game::GameRecord;
use crate::gateway::TranscriptEntry;

use super::matrix::TreatmentCell;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: line {line} is corrupt: {message}")]
    Corrupt { path: String, line: usize, message: String },
}

impl StoreError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        StoreError::Io { path: path.display().to_string(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderMeta {
    pub profile: String,
    pub model_id: String,
    pub endpoint_url: String,
    pub mock: bool,
}

/// One persisted game with everything needed to attribute and replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredGame {
    pub game_id: String,
    pub cell_key: String,
    pub cell: TreatmentCell,
    pub iteration: u32,
    pub seed: u64,
    pub template_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider: Option<ProviderMeta>,
    pub status: GameStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_round: Option<u32>,
    /// Partial for failed games.
    pub record: GameRecord,
}

impl StoredGame {
    pub fn is_complete(&self) -> bool {
        self.status == GameStatus::Complete
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("stored games always serialize")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStore {
    pub games: Vec<StoredGame>,
}

/// `runs/store.jsonl` -> `runs/store.transcripts.jsonl`.
pub fn transcript_path_for(store_path: &Path) -> PathBuf {
    let stem = store_path.file_stem().and_then(|s| s.to_str()).unwrap_or("store");
    store_path.with_file_name(format!("{stem}.transcripts.jsonl"))
}

/// Parses JSONL; with `lenient_tail`, a final line lacking its newline that
/// fails to parse (an interrupted write) is dropped and its byte offset returned.
fn read_jsonl<T: serde::de::DeserializeOwned>(
    path: &Path,
    lenient_tail: bool,
) -> Result<(Vec<T>, Option<u64>), StoreError> {
    let bytes = fs::read(path).map_err(|e| StoreError::io(path, e))?;
    let text = String::from_utf8_lossy(&bytes);
    let mut out = Vec::new();
    let mut offset = 0u64;
    let ends_with_newline = text.ends_with('\n');
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    for (i, raw) in lines.iter().enumerate() {
        let line = raw.trim_end_matches(['\n', '\r']);
        if !line.trim().is_empty() {
            match serde_json::from_str(line) {
                Ok(v) => out.push(v),
                Err(e) => {
                    if lenient_tail && i + 1 == lines.len() && !ends_with_newline {
                        return Ok((out, Some(offset)));
                    }
                    return Err(StoreError::Corrupt {
                        path: path.display().to_string(),
                        line: i + 1,
                        message: e.to_string(),
                    });
                }
            }
        }
        offset += raw.len() as u64;
    }
    Ok((out, None))
}

impl RunStore {
    /// Strict load: any unparseable line is an error naming its line number.
    pub fn load(path: &Path) -> Result<Self, StoreError> {
        Ok(Self { games: read_jsonl(path, false)?.0 })
    }

    /// Load for resumption: drops an interrupted trailing line from the file.
    pub fn load_for_resume(path: &Path) -> Result<Self, StoreError> {
        if !path.exists() {
            return Ok(Self::default());
        }
        let (games, cut) = read_jsonl(path, true)?;
        if let Some(len) = cut {
            log::warn!("{}: dropping interrupted trailing line", path.display());
            truncate(path, len)?;
        }
        Ok(Self { games })
    }

    pub fn len(&self) -> usize {
        self.games.len()
    }

    pub fn is_empty(&self) -> bool {
        self.games.is_empty()
    }

    pub fn find(&self, game_id: &str) -> Option<&StoredGame> {
        self.games.iter().find(|g| g.game_id == game_id)
    }

    pub fn completed_pairs(&self) -> HashSet<(String, u32)> {
        self.games.iter().map(|g| (g.cell_key.clone(), g.iteration)).collect()
    }

    pub fn failed_count(&self) -> usize {
        self.games.iter().filter(|g| !g.is_complete()).count()
    }

    /// Games ordered by (cell key, iteration), independent of write order.
    pub fn sorted(&self) -> Vec<&StoredGame> {
        let mut v: Vec<&StoredGame> = self.games.iter().collect();
        v.sort_by(|a, b| (a.cell_key.as_str(), a.iteration).cmp(&(b.cell_key.as_str(), b.iteration)));
        v
    }

    /// SHA-256 over the canonical lines in sorted order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for g in self.sorted() {
            h.update(g.to_line().as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

fn truncate(path: &Path, len: u64) -> Result<(), StoreError> {
    let f = OpenOptions::new().write(true).open(path).map_err(|e| StoreError::io(path, e))?;
    f.set_len(len).map_err(|e| StoreError::io(path, e))
}

/// Loads transcripts for resumption, keeping only entries whose game has a
/// stored record, and rewrites the file if anything was dropped.
pub fn compact_transcripts(path: &Path, store: &RunStore) -> Result<usize, StoreError> {
    if !path.exists() {
        return Ok(0);
    }
    let (entries, cut) = read_jsonl::<TranscriptEntry>(path, true)?;
    let known: BTreeSet<&str> = store.games.iter().map(|g| g.game_id.as_str()).collect();
    let keep: Vec<&TranscriptEntry> = entries.iter().filter(|e| known.contains(e.game_id.as_str())).collect();
    let dropped = entries.len() - keep.len();
    if dropped > 0 || cut.is_some() {
        let tmp = path.with_extension("jsonl.tmp");
        let mut buf = Vec::new();
        for e in keep {
            serde_json::to_writer(&mut buf, e).expect("transcript entries serialize");
            buf.push(b'\n');
        }
        fs::write(&tmp, buf).map_err(|e| StoreError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| StoreError::io(path, e))?;
    }
    Ok(dropped)
}

/// Serialized appender; each game is one `write_all` of a full line.
#[derive(Debug)]
pub struct StoreWriter {
    path: PathBuf,
    file: Mutex<File>,
}

impl StoreWriter {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| StoreError::io(path, e))?;
        Ok(Self { path: path.to_path_buf(), file: Mutex::new(file) })
    }

    pub fn append(&self, game: &StoredGame) -> Result<(), StoreError> {
        let mut line = game.to_line();
        line.push('\n');
        let mut f = self.file.lock().unwrap();
        f.write_all(line.as_bytes()).and_then(|_| f.flush()).map_err(|e| StoreError::io(&self.path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transcript_path() {
        assert_eq!(transcript_path_for(Path::new("runs/a.jsonl")), Path::new("runs/a.transcripts.jsonl"));
        assert_eq!(transcript_path_for(Path::new("store")), Path::new("store.transcripts.jsonl"));
    }

    #[test]
    fn strict_load_names_corrupt_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        fs::write(&p, "\n\n{oops}\n").unwrap();
        match RunStore::load(&p) {
            Err(StoreError::Corrupt { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn resume_load_truncates_partial_tail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        fs::write(&p, "{\"game_id\":").unwrap();
        let s = RunStore::load_for_resume(&p).unwrap();
        assert!(s.is_empty());
        assert_eq!(fs::read(&p).unwrap().len(), 0);
    }
}
