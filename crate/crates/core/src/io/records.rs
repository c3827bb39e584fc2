use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{parse_json, read_json, read_to_string, write_atomic, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::eval::MapTable;
use crate::localize::{Head, VideoPrediction};
use crate::pose::VideoKeypoints;

/// One JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(row)?);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            parse_json(path, line).map_err(|e| match e {
                Error::Schema {
                    path,
                    json_path,
                    msg,
                } => Error::Schema {
                    path,
                    json_path: format!("line {}: {json_path}", i + 1),
                    msg,
                },
                e => e,
            })
        })
        .collect()
}

pub fn write_predictions(path: &Path, preds: &[VideoPrediction]) -> Result<()> {
    write_jsonl(path, preds)
}

pub fn read_predictions(path: &Path) -> Result<Vec<VideoPrediction>> {
    read_jsonl(path)
}

/// Evaluation output: the localization table plus classification mAP of
/// both heads. cMAP is absent when only segment predictions were evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format_version: u32,
    pub num_videos: usize,
    pub map: MapTable,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cmap_goal: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cmap_unint: Option<f64>,
}

impl MetricsReport {
    pub fn new(num_videos: usize, map: MapTable, cmap_goal: Option<f64>, cmap_unint: Option<f64>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            num_videos,
            map,
            cmap_goal,
            cmap_unint,
        }
    }
}

/// `head,iou,map` with nine threshold rows and an `avg` row per head.
pub fn metrics_csv(table: &MapTable) -> String {
    let mut out = String::from("head,iou,map\n");
    for head in Head::BOTH {
        let (row, avg) = table.head(head);
        for (t, v) in table.thresholds.iter().zip(row) {
            let _ = writeln!(out, "{},{t:.1},{v}", head.as_str());
        }
        let _ = writeln!(out, "{},avg,{avg}", head.as_str());
    }
    out
}

pub fn load_keypoints(path: &Path) -> Result<VideoKeypoints> {
    let video: VideoKeypoints = read_json(path)?;
    if video.format_version != FORMAT_VERSION {
        return Err(Error::invalid(
            path.display().to_string(),
            format!("unsupported format_version {}", video.format_version),
        ));
    }
    video.validate()?;
    Ok(video)
}
