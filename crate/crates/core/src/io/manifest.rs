use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{parse_json, read_to_string, read_feature_file, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::eval::GroundTruthSplit;
use crate::losses::LabelVector;
use crate::model::ClipFeatureSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestVideo {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub feature_path: PathBuf,
    pub goal_label: usize,
    pub unint_label: usize,
    pub num_clips: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition_clip: Option<usize>,
    pub split: Split,
}

impl ManifestVideo {
    pub fn label(&self) -> LabelVector {
        LabelVector {
            goal_class: self.goal_label,
            unint_class: self.unint_label,
        }
    }

    pub fn ground_truth(&self) -> Option<GroundTruthSplit> {
        self.transition_clip.map(|t| GroundTruthSplit {
            video_id: self.id.clone(),
            num_clips: self.num_clips,
            transition_clip: t,
            goal_class: self.goal_label,
            unint_class: self.unint_label,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub goal_classes: Vec<String>,
    pub unint_classes: Vec<String>,
    pub videos: Vec<ManifestVideo>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Whether test rows must carry a transition clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifestMode {
    Train,
    Eval,
}

/// 1-based line of the `"id": "<id>"` entry in the manifest text.
fn line_of_id(text: &str, id: &str) -> Option<usize> {
    let literal = serde_json::to_string(id).ok()?;
    let mut from = 0;
    while let Some(pos) = text[from..].find(&literal) {
        let at = from + pos;
        let before = text[..at].trim_end();
        if let Some(key) = before.strip_suffix(':') {
            if key.trim_end().ends_with("\"id\"") {
                return Some(text[..at].matches('\n').count() + 1);
            }
        }
        from = at + literal.len();
    }
    None
}

impl Manifest {
    pub fn feature_file(&self, video: &ManifestVideo) -> PathBuf {
        if video.feature_path.is_absolute() {
            video.feature_path.clone()
        } else {
            self.base_dir.join(&video.feature_path)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestVideo> {
        self.videos.iter().filter(move |v| v.split == split)
    }

    pub fn ground_truth(&self, split: Split) -> Vec<GroundTruthSplit> {
        self.split(split).filter_map(ManifestVideo::ground_truth).collect()
    }

    /// Checks label ranges, clip counts, transition clips and id uniqueness.
    /// `text` is the source the manifest was parsed from, used to cite line
    /// numbers.
    pub fn validate(&self, mode: ManifestMode, text: Option<&str>) -> Result<()> {
        let context = |v: &ManifestVideo| match text.and_then(|t| line_of_id(t, &v.id)) {
            Some(line) => format!("video \"{}\" (line {line})", v.id),
            None => format!("video \"{}\"", v.id),
        };
        if self.format_version != FORMAT_VERSION {
            return Err(Error::invalid(
                "manifest",
                format!("unsupported format_version {}", self.format_version),
            ));
        }
        if self.goal_classes.is_empty() || self.unint_classes.is_empty() {
            return Err(Error::invalid("manifest", "class lists must not be empty"));
        }
        let mut seen = HashSet::new();
        for v in &self.videos {
            if !seen.insert(v.id.as_str()) {
                return Err(Error::invalid(context(v), "duplicate video id"));
            }
            if v.goal_label >= self.goal_classes.len() {
                return Err(Error::invalid(
                    context(v),
                    format!(
                        "goal_label {} out of range for {} goal classes",
                        v.goal_label,
                        self.goal_classes.len()
                    ),
                ));
            }
            if v.unint_label >= self.unint_classes.len() {
                return Err(Error::invalid(
                    context(v),
                    format!(
                        "unint_label {} out of range for {} unintentional classes",
                        v.unint_label,
                        self.unint_classes.len()
                    ),
                ));
            }
            if v.num_clips == 0 {
                return Err(Error::invalid(context(v), "num_clips must be positive"));
            }
            match v.transition_clip {
                Some(t) if t == 0 || t >= v.num_clips => {
                    return Err(Error::invalid(
                        context(v),
                        format!("transition_clip {t} must lie in 1..{}", v.num_clips),
                    ));
                }
                None if mode == ManifestMode::Eval && v.split == Split::Test => {
                    return Err(Error::invalid(
                        context(v),
                        "test video has no transition_clip, which evaluation requires",
                    ));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

pub fn load_manifest(path: &Path, mode: ManifestMode) -> Result<Manifest> {
    let text = read_to_string(path)?;
    let mut manifest: Manifest = parse_json(path, &text)?;
    manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    manifest.validate(mode, Some(&text))?;
    Ok(manifest)
}

/// Loads the feature files of one split in manifest order.
pub fn load_split(manifest: &Manifest, split: Split) -> Result<Vec<(ManifestVideo, ClipFeatureSequence)>> {
    let rows: Vec<&ManifestVideo> = manifest.split(split).collect();
    rows.par_iter()
        .map(|v| {
            let x = read_feature_file(&manifest.feature_file(v), &v.id)?;
            if x.num_clips() != v.num_clips {
                return Err(Error::invalid(
                    format!("video \"{}\"", v.id),
                    format!(
                        "manifest says {} clips but the feature file has {}",
                        v.num_clips,
                        x.num_clips()
                    ),
                ));
            }
            Ok(((*v).clone(), x))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest_text(extra_row: &str) -> String {
        format!(
            r#"{{
  "format_version": 1,
  "goal_classes": ["run", "jump"],
  "unint_classes": ["fall", "slip"],
  "videos": [
    {{"id": "a", "feature_path": "a.bin", "goal_label": 0, "unint_label": 1, "num_clips": 10, "split": "train"}},
    {{"id": "b", "feature_path": "b.bin", "goal_label": 1, "unint_label": 0, "num_clips": 8, "transition_clip": 3, "split": "test"}}{extra_row}
  ]
}}"#
        )
    }

    fn load(text: &str, mode: ManifestMode) -> Result<Manifest> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(&path, text).unwrap();
        load_manifest(&path, mode)
    }

    #[test]
    fn valid_manifest_loads() {
        let m = load(&manifest_text(""), ManifestMode::Eval).unwrap();
        assert_eq!(m.videos.len(), 2);
        assert_eq!(m.ground_truth(Split::Test).len(), 1);
        assert_eq!(m.split(Split::Train).count(), 1);
    }

    #[test]
    fn label_out_of_range_cites_id_and_line() {
        let row = r#",
    {"id": "bad", "feature_path": "c.bin", "goal_label": 5, "unint_label": 0, "num_clips": 4, "split": "train"}"#;
        let err = load(&manifest_text(row), ManifestMode::Train).unwrap_err().to_string();
        assert!(err.contains("\"bad\""), "{err}");
        assert!(err.contains("line 8"), "{err}");
    }

    #[test]
    fn eval_mode_requires_transition_on_test_rows() {
        let row = r#",
    {"id": "c", "feature_path": "c.bin", "goal_label": 0, "unint_label": 0, "num_clips": 4, "split": "test"}"#;
        let text = manifest_text(row);
        assert!(load(&text, ManifestMode::Train).is_ok());
        let err = load(&text, ManifestMode::Eval).unwrap_err().to_string();
        assert!(err.contains("transition_clip"), "{err}");
    }

    #[test]
    fn schema_errors_carry_json_path() {
        let text = manifest_text("").replace("\"num_clips\": 8", "\"num_clips\": \"eight\"");
        match load(&text, ManifestMode::Train).unwrap_err() {
            Error::Schema { json_path, .. } => assert_eq!(json_path, "videos[1].num_clips"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn wide_class_lists_accepted() {
        let mut m = load(&manifest_text(""), ManifestMode::Eval).unwrap();
        m.goal_classes = (0..44).map(|i| format!("g{i}")).collect();
        m.unint_classes = (0..30).map(|i| format!("u{i}")).collect();
        m.videos[0].goal_label = 43;
        m.videos[0].unint_label = 29;
        m.validate(ManifestMode::Eval, None).unwrap();
    }

    #[test]
    fn json_round_trip() {
        let m = load(&manifest_text(""), ManifestMode::Eval).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: Manifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back.videos, m.videos);
        assert_eq!(back.goal_classes, m.goal_classes);
    }
}
