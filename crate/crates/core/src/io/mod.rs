//! On-disk formats.
//!
//! - `TFV1` binary feature files ([`read_feature_file`], [`write_feature_file`])
//! - JSON manifests ([`load_manifest`])
//! - JSON checkpoints ([`Checkpoint`])
//! - JSON-lines predictions and training logs, JSON/CSV metrics, keypoint JSON
//!
//! Every JSON document carries a `format_version` field.

mod checkpoint;
mod features;
mod manifest;
mod records;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, CheckpointHyper, StoredTensor};
pub use features::{read_feature_file, write_feature_file, FEATURE_MAGIC};
pub use manifest::{load_manifest, load_split, ManifestMode, Manifest, ManifestVideo, Split};
pub use records::{
    load_keypoints, metrics_csv, read_jsonl, read_predictions, write_jsonl, write_predictions,
    MetricsReport,
};

pub const FORMAT_VERSION: u32 = 1;

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses JSON text, reporting failures with the JSON path of the offending
/// value.
pub fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        json_path: e.path().to_string(),
        msg: e.into_inner().to_string(),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_json(path, &read_to_string(path)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
