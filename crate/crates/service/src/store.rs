//! On-disk session layout:
//!
//! ```text
//! <data_dir>/sessions/<id>/
//!     session.json            metadata; rewritten atomically on every commit
//!     dataset.jsonl           training data (+ dataset.manifest.json)
//!     model_round_<N>.bin     model archive per committed round
//!     feedback.jsonl          append-only feedback log
//! ```
//!
//! A retraining round commits by writing the new model archive first and
//! then renaming a fresh `session.json` into place. A crash in between
//! leaves the previous round intact.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use exdebug_core::attribution::AttributionMethod;
use exdebug_core::er::{DebugReport, ErConfig};
use exdebug_core::feedback::RegularizationPolicy;
use serde::{Deserialize, Serialize};

pub const META_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub version: u32,
    pub id: String,
    pub round: u64,
    pub labels: Vec<String>,
    pub policy: RegularizationPolicy,
    pub er: ErConfig,
    pub display_method: AttributionMethod,
    #[serde(default)]
    pub last_report: Option<DebugReport>,
}

pub fn sessions_dir(data_dir: &Path) -> PathBuf {
    data_dir.join("sessions")
}

pub fn meta_path(dir: &Path) -> PathBuf {
    dir.join("session.json")
}

pub fn dataset_path(dir: &Path) -> PathBuf {
    dir.join("dataset.jsonl")
}

pub fn feedback_path(dir: &Path) -> PathBuf {
    dir.join("feedback.jsonl")
}

pub fn model_path(dir: &Path, round: u64) -> PathBuf {
    dir.join(format!("model_round_{round}.bin"))
}

/// Writes via a temporary sibling and a rename, syncing the file first.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Some(parent) = path.parent() {
        // Persist the rename itself; not every platform can open directories.
        if let Ok(d) = File::open(parent) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

pub fn write_meta(dir: &Path, meta: &SessionMeta) -> std::io::Result<()> {
    let bytes = serde_json::to_vec_pretty(meta).map_err(std::io::Error::from)?;
    write_atomic(&meta_path(dir), &bytes)
}

pub fn read_meta(dir: &Path) -> std::io::Result<SessionMeta> {
    let bytes = fs::read(meta_path(dir))?;
    serde_json::from_slice(&bytes).map_err(std::io::Error::from)
}

/// Model archives of rounds newer than `round`: leftovers of a commit that
/// never reached `session.json`.
pub fn stale_models(dir: &Path, round: u64) -> Vec<PathBuf> {
    let Ok(entries) = fs::read_dir(dir) else {
        return Vec::new();
    };
    entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            let n: u64 = name.strip_prefix("model_round_")?.strip_suffix(".bin")?.parse().ok()?;
            (n > round).then(|| e.path())
        })
        .collect()
}
