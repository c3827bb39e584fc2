use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ClipFeatureSequence;
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: [u8; 4] = *b"TFV1";
const HEADER_LEN: u64 = 12;

/// Reads a `TFV1` file: magic, `u32` clip count, `u32` feature dim (both
/// little-endian), then clip-major little-endian `f32` values.
pub fn read_feature_file(path: &Path, video_id: &str) -> Result<ClipFeatureSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let actual = bytes.len() as u64;
    if actual < HEADER_LEN {
        if actual >= 4 && bytes[..4] != FEATURE_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                found: bytes[..4].try_into().expect("four bytes"),
            });
        }
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN,
            actual,
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("four bytes");
    if magic != FEATURE_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: magic,
        });
    }
    let num_clips = u32::from_le_bytes(bytes[4..8].try_into().expect("four bytes"));
    let feature_dim = u32::from_le_bytes(bytes[8..12].try_into().expect("four bytes"));
    let overflow = || Error::SizeOverflow {
        path: path.to_path_buf(),
        num_clips,
        feature_dim,
    };
    let numel = (num_clips as u64)
        .checked_mul(feature_dim as u64)
        .filter(|&n| usize::try_from(n).is_ok())
        .ok_or_else(overflow)?;
    let expected = numel
        .checked_mul(4)
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(overflow)?;
    if actual < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }
    if actual > expected {
        return Err(Error::invalid(
            path.display().to_string(),
            format!("{} trailing bytes after a {expected}-byte feature file", actual - expected),
        ));
    }
    let data = bytes[HEADER_LEN as usize..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64)
        .collect();
    let features = Tensor::matrix(num_clips as usize, feature_dim as usize, data)?;
    ClipFeatureSequence::new(video_id, features).map_err(|e| {
        Error::invalid(path.display().to_string(), e.to_string())
    })
}

/// Writes clip features as `f32`.
pub fn write_feature_file(path: &Path, features: &Tensor) -> Result<()> {
    if features.ndim() != 2 {
        return Err(Error::invalid(
            path.display().to_string(),
            format!("features must be 2-D, got shape {:?}", features.shape()),
        ));
    }
    let (l, d) = (features.rows(), features.cols());
    let to_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| Error::invalid(path.display().to_string(), "dimension exceeds u32"))
    };
    let mut bytes = Vec::with_capacity(HEADER_LEN as usize + 4 * l * d);
    bytes.extend_from_slice(&FEATURE_MAGIC);
    bytes.extend_from_slice(&to_u32(l)?.to_le_bytes());
    bytes.extend_from_slice(&to_u32(d)?.to_le_bytes());
    for &v in features.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    super::write_atomic(path, &bytes)
}
