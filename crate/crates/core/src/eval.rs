//! Localization mAP over temporal IoU thresholds and classification mAP.
//!
//! Average precision uses all-point interpolation: predictions are ranked by
//! score (ties by video id, then start clip), greedily matched to unmatched
//! ground truth of the same video, and the area under the monotone precision
//! envelope is summed over recall increments.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localize::{Head, SegmentTriplet, VideoPrediction};
use crate::{FPS, FRAMES_PER_CLIP};

/// IoU thresholds 0.1, 0.2, ..., 0.9.
pub const IOU_THRESHOLDS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Clip index containing a transition given in seconds.
pub fn transition_clip_from_seconds(seconds: f64) -> usize {
    (seconds * FPS / FRAMES_PER_CLIP as f64).floor().max(0.0) as usize
}

/// Intersection over union of two inclusive clip ranges.
pub fn temporal_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    let inter = if hi >= lo { hi - lo + 1 } else { 0 };
    let union = (a.1 - a.0 + 1) + (b.1 - b.0 + 1) - inter;
    inter as f64 / union as f64
}

/// Ground truth of one test video: goal clips `[0, t-1]`, unintentional
/// clips `[t, l-1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSplit {
    pub video_id: String,
    pub num_clips: usize,
    pub transition_clip: usize,
    pub goal_class: usize,
    pub unint_class: usize,
}

impl GroundTruthSplit {
    pub fn validate(&self) -> Result<()> {
        if self.transition_clip == 0 || self.transition_clip >= self.num_clips {
            return Err(Error::invalid(
                &self.video_id,
                format!(
                    "transition clip {} must lie in 1..{}",
                    self.transition_clip, self.num_clips
                ),
            ));
        }
        Ok(())
    }

    pub fn segment(&self, head: Head) -> (usize, usize) {
        match head {
            Head::Goal => (0, self.transition_clip - 1),
            Head::Unint => (self.transition_clip, self.num_clips - 1),
        }
    }

    pub fn class(&self, head: Head) -> usize {
        match head {
            Head::Goal => self.goal_class,
            Head::Unint => self.unint_class,
        }
    }
}

/// A scored prediction of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub video_id: String,
    pub start_clip: usize,
    pub end_clip: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtSegment {
    pub video_id: String,
    pub start_clip: usize,
    pub end_clip: usize,
}

/// Ranking order used by [`average_precision`].
pub fn rank_detections(preds: &[Detection]) -> Vec<&Detection> {
    let mut ranked: Vec<&Detection> = preds.iter().collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.video_id.cmp(&b.video_id))
            .then_with(|| a.start_clip.cmp(&b.start_clip))
    });
    ranked
}

/// True-positive flags of ranked detections under greedy matching.
pub fn match_detections(ranked: &[&Detection], gts: &[GtSegment], iou_thr: f64) -> Vec<bool> {
    let mut by_video: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_video.entry(g.video_id.as_str()).or_default().push(i);
    }
    let mut used = vec![false; gts.len()];
    ranked
        .iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for &gi in by_video.get(d.video_id.as_str()).map_or(&[][..], Vec::as_slice) {
                if used[gi] {
                    continue;
                }
                let g = &gts[gi];
                let iou = temporal_iou((d.start_clip, d.end_clip), (g.start_clip, g.end_clip));
                if iou >= iou_thr && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((gi, iou));
                }
            }
            match best {
                Some((gi, _)) => {
                    used[gi] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// All-point interpolated AP of one class. `None` when the class has no
/// ground truth.
pub fn average_precision(preds: &[Detection], gts: &[GtSegment], iou_thr: f64) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    let ranked = rank_detections(preds);
    let tp = match_detections(&ranked, gts, iou_thr);
    let n_gt = gts.len() as f64;

    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    let (mut hits, mut seen) = (0usize, 0usize);
    for &hit in &tp {
        seen += 1;
        hits += hit as usize;
        precision.push(hits as f64 / seen as f64);
        recall.push(hits as f64 / n_gt);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        if *r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = *r;
        }
    }
    Some(ap)
}

/// Per-threshold localization mAP for both heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapTable {
    pub thresholds: Vec<f64>,
    pub goal: Vec<f64>,
    pub unint: Vec<f64>,
    pub goal_avg: f64,
    pub unint_avg: f64,
}

impl MapTable {
    pub fn head(&self, head: Head) -> (&[f64], f64) {
        match head {
            Head::Goal => (&self.goal, self.goal_avg),
            Head::Unint => (&self.unint, self.unint_avg),
        }
    }

    /// mAP of `head` at one of [`IOU_THRESHOLDS`].
    pub fn at(&self, head: Head, iou: f64) -> Option<f64> {
        let (row, _) = self.head(head);
        self.thresholds
            .iter()
            .position(|t| (t - iou).abs() < 1e-9)
            .map(|i| row[i])
    }
}

fn head_map(
    preds: &[VideoPrediction],
    gts: &[GroundTruthSplit],
    head: Head,
    iou_thr: f64,
) -> f64 {
    let mut det_by_class: BTreeMap<usize, Vec<Detection>> = BTreeMap::new();
    for p in preds.iter().filter(|p| p.head == head) {
        for s in &p.segments {
            det_by_class.entry(s.class_id).or_default().push(Detection {
                video_id: p.video_id.clone(),
                start_clip: s.start_clip,
                end_clip: s.end_clip,
                score: s.score,
            });
        }
    }
    let mut gt_by_class: BTreeMap<usize, Vec<GtSegment>> = BTreeMap::new();
    for g in gts {
        let (start_clip, end_clip) = g.segment(head);
        gt_by_class.entry(g.class(head)).or_default().push(GtSegment {
            video_id: g.video_id.clone(),
            start_clip,
            end_clip,
        });
    }
    let aps: Vec<f64> = gt_by_class
        .iter()
        .filter_map(|(c, g)| {
            let d = det_by_class.get(c).map_or(&[][..], Vec::as_slice);
            average_precision(d, g, iou_thr)
        })
        .collect();
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

/// mAP at every threshold in [`IOU_THRESHOLDS`] for both heads. Only
/// predictions of videos present in `gts` are scored.
pub fn map_at_iou(preds: &[VideoPrediction], gts: &[GroundTruthSplit]) -> Result<MapTable> {
    for g in gts {
        g.validate()?;
    }
    let known: std::collections::HashSet<&str> = gts.iter().map(|g| g.video_id.as_str()).collect();
    let preds: Vec<VideoPrediction> = preds
        .iter()
        .filter(|p| known.contains(p.video_id.as_str()))
        .cloned()
        .collect();
    let row = |head| -> Vec<f64> {
        IOU_THRESHOLDS
            .iter()
            .map(|&t| head_map(&preds, gts, head, t))
            .collect()
    };
    let goal = row(Head::Goal);
    let unint = row(Head::Unint);
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(MapTable {
        thresholds: IOU_THRESHOLDS.to_vec(),
        goal_avg: avg(&goal),
        unint_avg: avg(&unint),
        goal,
        unint,
    })
}

/// Non-interpolated AP of a binary relevance ranking.
fn ranking_ap(scores: &[f64], relevant: &[bool]) -> Option<f64> {
    let positives = relevant.iter().filter(|&&r| r).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if relevant[i] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(total / positives as f64)
}

/// Mean over classes (with at least one positive video) of the AP obtained
/// by ranking videos by their predicted probability of that class.
pub fn classification_map(pmfs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if pmfs.len() != labels.len() {
        return Err(Error::invalid(
            "classification_map",
            format!("{} score rows but {} labels", pmfs.len(), labels.len()),
        ));
    }
    let n_classes = pmfs.first().map_or(0, Vec::len);
    if pmfs.iter().any(|p| p.len() != n_classes) {
        return Err(Error::invalid("classification_map", "score rows differ in length"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::invalid("classification_map", format!("label {bad} out of range")));
    }
    let aps: Vec<f64> = (0..n_classes)
        .filter_map(|c| {
            let scores: Vec<f64> = pmfs.iter().map(|p| p[c]).collect();
            let rel: Vec<bool> = labels.iter().map(|&y| y == c).collect();
            ranking_ap(&scores, &rel)
        })
        .collect();
    if aps.is_empty() {
        return Err(Error::invalid("classification_map", "no labelled videos"));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Predictions that reproduce the ground truth exactly, scored 1.
pub fn oracle_predictions(gts: &[GroundTruthSplit]) -> Vec<VideoPrediction> {
    gts.iter()
        .flat_map(|g| {
            Head::BOTH.map(|head| {
                let (start_clip, end_clip) = g.segment(head);
                VideoPrediction {
                    video_id: g.video_id.clone(),
                    head,
                    segments: vec![SegmentTriplet {
                        start_clip,
                        end_clip,
                        class_id: g.class(head),
                        score: 1.0,
                    }],
                }
            })
        })
        .collect()
}
