//! On-disk layout:
//!
//! ```text
//! <data>/sessions/<id>/meta.json         header, written once at creation
//! <data>/sessions/<id>/transcript.jsonl  one line per answer, append-only
//! <data>/plans/<id>.json                 rewritten whole on change
//! ```
//!
//! Session state is never stored; it is rebuilt by replaying the transcript.

use std::fs::{self, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use prefopt::optimizer::{read_transcript, write_transcript_line, SessionHeader, Strategy, TranscriptLine};
use serde::{Deserialize, Serialize};

use crate::api::Verdict;
use crate::error::ServiceError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub id: String,
    pub header: SessionHeader,
    pub blinded: bool,
    pub randomize_slots: bool,
    #[serde(default)]
    pub plan: Option<String>,
    pub created_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub id: String,
    pub budget: usize,
    pub blinded: bool,
    pub seed: u64,
    /// In presentation order.
    pub sessions: Vec<(String, Strategy)>,
    /// Sessions shown left and right in the final comparison.
    pub final_order: (String, String),
    #[serde(default)]
    pub verdict: Option<Verdict>,
    #[serde(default)]
    pub verdict_ms: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let root = root.into();
        fs::create_dir_all(root.join("sessions"))?;
        fs::create_dir_all(root.join("plans"))?;
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }

    pub fn transcript_path(&self, id: &str) -> PathBuf {
        self.session_dir(id).join("transcript.jsonl")
    }

    pub fn create_session(&self, meta: &SessionMeta) -> Result<(), ServiceError> {
        let dir = self.session_dir(&meta.id);
        fs::create_dir_all(&dir)?;
        write_atomic(&dir.join("meta.json"), &serde_json::to_vec_pretty(meta)?)?;
        fs::File::create(dir.join("transcript.jsonl"))?;
        Ok(())
    }

    /// Append lines and sync before returning.
    pub fn append(&self, id: &str, lines: &[TranscriptLine]) -> Result<(), ServiceError> {
        if lines.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        for l in lines {
            write_transcript_line(&mut buf, l)?;
        }
        let mut f = OpenOptions::new().append(true).open(self.transcript_path(id))?;
        f.write_all(&buf)?;
        f.sync_data()?;
        Ok(())
    }

    pub fn load_sessions(&self) -> Result<Vec<(SessionMeta, Vec<TranscriptLine>)>, ServiceError> {
        let mut out = Vec::new();
        let mut dirs: Vec<_> = fs::read_dir(self.root.join("sessions"))?.collect::<Result<_, _>>()?;
        dirs.sort_by_key(|d| d.file_name());
        for d in dirs {
            let meta_path = d.path().join("meta.json");
            if !meta_path.exists() {
                continue;
            }
            let meta: SessionMeta = serde_json::from_slice(&fs::read(meta_path)?)?;
            let lines = read_transcript(BufReader::new(fs::File::open(self.transcript_path(&meta.id))?))?;
            out.push((meta, lines));
        }
        Ok(out)
    }

    pub fn save_plan(&self, plan: &PlanRecord) -> Result<(), ServiceError> {
        write_atomic(
            &self.root.join("plans").join(format!("{}.json", plan.id)),
            &serde_json::to_vec_pretty(plan)?,
        )
    }

    pub fn load_plans(&self) -> Result<Vec<PlanRecord>, ServiceError> {
        let mut out = Vec::new();
        for e in fs::read_dir(self.root.join("plans"))? {
            let p = e?.path();
            if p.extension().is_some_and(|x| x == "json") {
                out.push(serde_json::from_slice(&fs::read(p)?)?);
            }
        }
        Ok(out)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ServiceError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}
