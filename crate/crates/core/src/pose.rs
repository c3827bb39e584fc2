//! Skeleton keypoint features.
//!
//! Keypoints follow the COCO-18 order:
//!
//! | index | joint          | index | joint       |
//! |-------|----------------|-------|-------------|
//! | 0     | nose           | 9     | right knee  |
//! | 1     | neck           | 10    | right ankle |
//! | 2     | right shoulder | 11    | left hip    |
//! | 3     | right elbow    | 12    | left knee   |
//! | 4     | right wrist    | 13    | left ankle  |
//! | 5     | left shoulder  | 14    | right eye   |
//! | 6     | left elbow     | 15    | left eye    |
//! | 7     | left wrist     | 16    | right ear   |
//! | 8     | right hip      | 17    | left ear    |
//!
//! Face keypoints are dropped. The remaining 13 joints give 12 directed
//! limb connections (parent to child, outward from the neck), each turned
//! into a unit 2-vector, or `(0, 0)` when either endpoint is missing. A
//! frame of one person is therefore 24 values, two people 48, and a chunk
//! of 16 frames 768.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ClipFeatureSequence;
use crate::tensor::Tensor;
use crate::FRAMES_PER_CLIP;

pub const NUM_KEYPOINTS: usize = 18;
pub const NUM_CONNECTIONS: usize = 12;
/// Values per person per frame.
pub const PERSON_WIDTH: usize = 2 * NUM_CONNECTIONS;
/// Values per frame for the two principal people.
pub const FRAME_WIDTH: usize = 2 * PERSON_WIDTH;
/// Values per 16-frame chunk.
pub const CHUNK_WIDTH: usize = FRAME_WIDTH * FRAMES_PER_CLIP;
/// Keypoints below this confidence count as missing.
pub const MIN_CONFIDENCE: f64 = 0.1;

pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "nose", "neck", "r_shoulder", "r_elbow", "r_wrist", "l_shoulder", "l_elbow", "l_wrist",
    "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle", "r_eye", "l_eye", "r_ear",
    "l_ear",
];

/// `(parent, child)` keypoint indices.
pub const CONNECTIONS: [(usize, usize); NUM_CONNECTIONS] = [
    (1, 2),
    (2, 3),
    (3, 4),
    (1, 5),
    (5, 6),
    (6, 7),
    (1, 8),
    (8, 9),
    (9, 10),
    (1, 11),
    (11, 12),
    (12, 13),
];

/// `[x, y, confidence]`, or `None` for an absent entry.
pub type Keypoint = Option<[f64; 3]>;
pub type Skeleton = [Keypoint; NUM_KEYPOINTS];
pub type PersonFrame = [f64; PERSON_WIDTH];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseObservation {
    pub frame: usize,
    pub keypoints: Skeleton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseTrack {
    pub track_id: u64,
    pub observations: Vec<PoseObservation>,
}

/// All tracked people of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoKeypoints {
    #[serde(default = "default_format_version")]
    pub format_version: u32,
    pub video_id: String,
    pub num_frames: usize,
    pub tracks: Vec<PoseTrack>,
}

fn default_format_version() -> u32 {
    1
}

impl VideoKeypoints {
    pub fn validate(&self) -> Result<()> {
        for track in &self.tracks {
            for obs in &track.observations {
                if obs.frame >= self.num_frames {
                    return Err(Error::invalid(
                        &self.video_id,
                        format!(
                            "track {} observes frame {} but the video has {} frames",
                            track.track_id, obs.frame, self.num_frames
                        ),
                    ));
                }
                if obs.keypoints.iter().flatten().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "{}: track {} frame {}",
                        self.video_id, track.track_id, obs.frame
                    )));
                }
            }
        }
        Ok(())
    }
}

fn present(kp: &Keypoint) -> Option<(f64, f64)> {
    match kp {
        Some([x, y, c]) if *c >= MIN_CONFIDENCE => Some((*x, *y)),
        _ => None,
    }
}

/// The 12 unit limb vectors of one skeleton, flattened.
pub fn vectorize_frame(kps: &Skeleton) -> PersonFrame {
    let mut out = [0.0; PERSON_WIDTH];
    for (i, &(p, q)) in CONNECTIONS.iter().enumerate() {
        if let (Some(a), Some(b)) = (present(&kps[p]), present(&kps[q])) {
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let norm = dx.hypot(dy);
            if norm > 0.0 {
                out[2 * i] = dx / norm;
                out[2 * i + 1] = dy / norm;
            }
        }
    }
    out
}

/// Number of distinct frames in which the track was observed.
pub fn observed_frames(track: &PoseTrack, num_frames: usize) -> usize {
    let mut seen = vec![false; num_frames];
    for obs in &track.observations {
        if obs.frame < num_frames {
            seen[obs.frame] = true;
        }
    }
    seen.iter().filter(|&&s| s).count()
}

/// Dense per-frame vectors: zeros before the first observation, the last
/// observed frame repeated through gaps after it.
pub fn impute_track(track: &PoseTrack, num_frames: usize) -> Vec<PersonFrame> {
    let mut observed: Vec<Option<PersonFrame>> = vec![None; num_frames];
    for obs in &track.observations {
        if obs.frame < num_frames {
            observed[obs.frame] = Some(vectorize_frame(&obs.keypoints));
        }
    }
    let mut last = [0.0; PERSON_WIDTH];
    observed
        .into_iter()
        .map(|frame| {
            if let Some(f) = frame {
                last = f;
            }
            last
        })
        .collect()
}

/// The two most observed tracks, most observed first (ties to the lower
/// track id).
pub fn select_principal_tracks(
    tracks: &[PoseTrack],
    num_frames: usize,
) -> (Option<&PoseTrack>, Option<&PoseTrack>) {
    let mut ranked: Vec<(usize, &PoseTrack)> = tracks
        .iter()
        .map(|t| (observed_frames(t, num_frames), t))
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.track_id.cmp(&b.1.track_id)));
    let mut it = ranked.into_iter().map(|(_, t)| t);
    (it.next(), it.next())
}

/// Per-frame 48-wide vectors of the two principal people.
pub fn principal_frames(video: &VideoKeypoints) -> Vec<Vec<f64>> {
    let n = video.num_frames;
    let (left, right) = select_principal_tracks(&video.tracks, n);
    let dense = |t: Option<&PoseTrack>| match t {
        Some(t) => impute_track(t, n),
        None => vec![[0.0; PERSON_WIDTH]; n],
    };
    let (left, right) = (dense(left), dense(right));
    left.iter()
        .zip(&right)
        .map(|(l, r)| l.iter().chain(r).copied().collect())
        .collect()
}

/// Concatenates non-overlapping groups of `chunk` frames; a trailing
/// partial group is zero-padded.
pub fn chunk_pose(frames: &[Vec<f64>], chunk: usize) -> Result<Tensor> {
    if chunk == 0 {
        return Err(Error::invalid("chunk_pose", "chunk size must be at least 1"));
    }
    let width = frames.first().map_or(FRAME_WIDTH, Vec::len);
    if frames.iter().any(|f| f.len() != width) {
        return Err(Error::invalid("chunk_pose", "frames differ in width"));
    }
    let n_chunks = frames.len().div_ceil(chunk);
    let mut data = vec![0.0; n_chunks * chunk * width];
    for (i, f) in frames.iter().enumerate() {
        data[i * width..(i + 1) * width].copy_from_slice(f);
    }
    Tensor::matrix(n_chunks, chunk * width, data)
}

/// The 768-wide per-clip pose features of one video.
pub fn pose_features(video: &VideoKeypoints) -> Result<Tensor> {
    video.validate()?;
    chunk_pose(&principal_frames(video), FRAMES_PER_CLIP)
}

/// Appends pose chunk `h` to clip `h`. Extra trailing chunks are dropped.
pub fn fuse_with_rgb(x: &ClipFeatureSequence, pose_chunks: &Tensor) -> Result<ClipFeatureSequence> {
    let l = x.num_clips();
    if pose_chunks.ndim() != 2 || pose_chunks.rows() < l {
        return Err(Error::invalid(
            &x.video_id,
            format!(
                "{} pose chunks cannot cover {} RGB clips",
                pose_chunks.shape().first().copied().unwrap_or(0),
                l
            ),
        ));
    }
    let rows: Vec<Vec<f64>> = (0..l)
        .map(|h| {
            x.features()
                .row(h)
                .iter()
                .chain(pose_chunks.row(h))
                .copied()
                .collect()
        })
        .collect();
    ClipFeatureSequence::from_rows(x.video_id.clone(), &rows)
}

/// A fully visible upright skeleton with axis-aligned limbs, facing the
/// camera (image y grows downward). Only the two neck-to-hip limbs are
/// diagonal. The expected vectors are listed by [`toy_skeleton_vectors`].
pub fn toy_skeleton() -> Skeleton {
    let mut kps: Skeleton = [None; NUM_KEYPOINTS];
    let mut put = |i: usize, x: f64, y: f64| kps[i] = Some([x, y, 1.0]);
    put(0, 100.0, 90.0);
    put(1, 100.0, 100.0);
    put(2, 95.0, 100.0);
    put(3, 95.0, 110.0);
    put(4, 95.0, 120.0);
    put(5, 105.0, 100.0);
    put(6, 115.0, 100.0);
    put(7, 115.0, 90.0);
    put(8, 97.0, 130.0);
    put(9, 97.0, 140.0);
    put(10, 97.0, 150.0);
    put(11, 103.0, 130.0);
    put(12, 113.0, 130.0);
    put(13, 113.0, 140.0);
    put(14, 98.0, 88.0);
    put(15, 102.0, 88.0);
    put(16, 96.0, 89.0);
    put(17, 104.0, 89.0);
    kps
}

/// Hand-computed output of [`vectorize_frame`] on [`toy_skeleton`].
pub fn toy_skeleton_vectors() -> PersonFrame {
    let hip = |dx: f64| {
        let n = (dx * dx + 900.0).sqrt();
        (dx / n, 30.0 / n)
    };
    let (rhx, rhy) = hip(-3.0);
    let (lhx, lhy) = hip(3.0);
    [
        -1.0, 0.0, // neck -> r_shoulder
        0.0, 1.0, // r_shoulder -> r_elbow
        0.0, 1.0, // r_elbow -> r_wrist
        1.0, 0.0, // neck -> l_shoulder
        1.0, 0.0, // l_shoulder -> l_elbow
        0.0, -1.0, // l_elbow -> l_wrist
        rhx, rhy, // neck -> r_hip
        0.0, 1.0, // r_hip -> r_knee
        0.0, 1.0, // r_knee -> r_ankle
        lhx, lhy, // neck -> l_hip
        1.0, 0.0, // l_hip -> l_knee
        0.0, 1.0, // l_knee -> l_ankle
    ]
}
