//! Weakly-supervised temporal localization of a goal-directed action and the
//! unintentional action it turns into, trained from video-level labels only.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense `f64` tensors, reverse-mode autodiff, gradient checking
//! - [`model`]: bidirectional GRU encoder, bottom-up attention, TCAM heads
//! - [`losses`]: k-max MIL loss plus overlap and ordering regularizers
//! - [`localize`] and [`eval`]: segment extraction and mAP@IoU / cMAP
//! - [`pose`]: skeleton keypoint vectorization and fusion with RGB features
//! - [`analysis`]: conditional entropy and dataset statistics
//! - [`train`]: Adam, the training loop and a synthetic dataset generator
//! - [`io`]: feature files, manifests, checkpoints and prediction files

pub mod analysis;
pub mod error;
pub mod eval;
pub mod io;
pub mod localize;
pub mod losses;
pub mod model;
pub mod pose;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

/// Frames per clip of the upstream feature extractor.
pub const FRAMES_PER_CLIP: usize = 16;
/// Frame rate videos are resampled to before feature extraction.
pub const FPS: f64 = 25.0;
/// Duration of one clip in seconds.
pub const SECONDS_PER_CLIP: f64 = FRAMES_PER_CLIP as f64 / FPS;
