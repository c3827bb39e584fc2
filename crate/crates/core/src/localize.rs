//! Turning model outputs into scored temporal segments.
//!
//! For every class whose video-level score is positive, the class's TCAM
//! column is squashed by a sigmoid and gated by the head's attention track
//! (`psi[t] = lambda[t] * sigmoid(C[t, c])`). Maximal runs with
//! `psi >= threshold` become segments scored by their mean `psi`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::video_class_scores;
use crate::model::{AttentionTrack, ModelOutputs, Tcam};
use crate::tensor::{sigmoid, softmax};

pub const DEFAULT_SEG_THRESHOLD: f64 = 0.2;

/// `[start_clip, end_clip]` inclusive, with a class and a ranking score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentTriplet {
    pub start_clip: usize,
    pub end_clip: usize,
    #[serde(rename = "class")]
    pub class_id: usize,
    pub score: f64,
}

impl SegmentTriplet {
    pub fn len(&self) -> usize {
        self.end_clip + 1 - self.start_clip
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Goal,
    Unint,
}

impl Head {
    pub const BOTH: [Head; 2] = [Head::Goal, Head::Unint];

    pub fn as_str(self) -> &'static str {
        match self {
            Head::Goal => "goal",
            Head::Unint => "unint",
        }
    }
}

/// One line of the predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoPrediction {
    pub video_id: String,
    pub head: Head,
    pub segments: Vec<SegmentTriplet>,
}

/// Everything inference produces for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoInference {
    pub goal: VideoPrediction,
    pub unint: VideoPrediction,
    pub pmf_goal: Vec<f64>,
    pub pmf_unint: Vec<f64>,
}

pub fn weighted_tcam(lambda: &AttentionTrack, tcam: &Tcam, class_id: usize) -> Result<Vec<f64>> {
    if class_id >= tcam.num_classes() {
        return Err(Error::invalid(
            "weighted_tcam",
            format!("class {class_id} out of range for {} classes", tcam.num_classes()),
        ));
    }
    if lambda.len() != tcam.num_clips() {
        return Err(Error::ShapeMismatch {
            op: "weighted_tcam",
            lhs: vec![lambda.len()],
            rhs: vec![tcam.num_clips(), tcam.num_classes()],
        });
    }
    Ok(lambda
        .weights()
        .iter()
        .zip(tcam.column(class_id))
        .map(|(w, c)| w * sigmoid(c))
        .collect())
}

/// Classes with a strictly positive video-level score.
pub fn candidate_classes(scores: &[f64]) -> Vec<usize> {
    scores
        .iter()
        .enumerate()
        .filter(|(_, &a)| a > 0.0)
        .map(|(c, _)| c)
        .collect()
}

/// Maximal runs of `psi >= threshold`, in temporal order.
pub fn extract_segments(psi: &[f64], threshold: f64, class_id: usize) -> Vec<SegmentTriplet> {
    let mut segments = Vec::new();
    let mut start = None;
    for t in 0..=psi.len() {
        let on = t < psi.len() && psi[t] >= threshold;
        match (on, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                let run = &psi[s..t];
                segments.push(SegmentTriplet {
                    start_clip: s,
                    end_clip: t - 1,
                    class_id,
                    score: run.iter().sum::<f64>() / run.len() as f64,
                });
                start = None;
            }
            _ => {}
        }
    }
    segments
}

fn localize_head(
    video_id: &str,
    head: Head,
    lambda: &AttentionTrack,
    tcam: &Tcam,
    s: usize,
    seg_threshold: f64,
) -> Result<(VideoPrediction, Vec<f64>)> {
    let scores = video_class_scores(tcam, s)?;
    let mut segments = Vec::new();
    for c in candidate_classes(&scores) {
        let psi = weighted_tcam(lambda, tcam, c)?;
        segments.extend(extract_segments(&psi, seg_threshold, c));
    }
    let prediction = VideoPrediction {
        video_id: video_id.to_string(),
        head,
        segments,
    };
    Ok((prediction, softmax(&scores)))
}

/// Segments and class pmfs for both heads of one video.
pub fn localize_video(
    video_id: &str,
    outputs: &ModelOutputs,
    s: usize,
    seg_threshold: f64,
) -> Result<VideoInference> {
    if !(seg_threshold > 0.0 && seg_threshold < 1.0) {
        return Err(Error::invalid(
            "localize",
            format!("segment threshold must lie in (0, 1), got {seg_threshold}"),
        ));
    }
    let (goal, pmf_goal) =
        localize_head(video_id, Head::Goal, &outputs.lambda_ia, &outputs.tcam_ia, s, seg_threshold)?;
    let (unint, pmf_unint) =
        localize_head(video_id, Head::Unint, &outputs.lambda_ua, &outputs.tcam_ua, s, seg_threshold)?;
    Ok(VideoInference {
        goal,
        unint,
        pmf_goal,
        pmf_unint,
    })
}
