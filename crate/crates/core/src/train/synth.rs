use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};
use crate::eval::GroundTruthSplit;
use crate::io::{write_feature_file, write_json, Manifest, ManifestVideo, Split, FORMAT_VERSION};
use crate::model::ClipFeatureSequence;
use crate::tensor::Tensor;

/// Clips before the transition are a goal-class prototype plus Gaussian
/// noise, clips after it an unintentional-class prototype plus noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_videos: usize,
    /// Inclusive clip-count range.
    pub l_range: (usize, usize),
    pub d: usize,
    pub n_goal_classes: usize,
    pub n_unint_classes: usize,
    pub transition_fraction_range: (f64, f64),
    pub cluster_noise_sigma: f64,
    /// Fraction of videos placed in the test split (the last ones).
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_videos: 200,
            l_range: (16, 32),
            d: 32,
            n_goal_classes: 4,
            n_unint_classes: 3,
            transition_fraction_range: (0.3, 0.7),
            cluster_noise_sigma: 0.3,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("synthetic spec", msg));
        if self.num_videos == 0 {
            return bad("num_videos must be positive".into());
        }
        if self.l_range.0 < 2 || self.l_range.0 > self.l_range.1 {
            return bad(format!("l_range {:?} must be nonempty with l >= 2", self.l_range));
        }
        if self.d == 0 {
            return bad("d must be positive".into());
        }
        if self.n_goal_classes < 2 || self.n_unint_classes < 2 {
            return bad("at least two classes per head are required".into());
        }
        let (lo, hi) = self.transition_fraction_range;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return bad(format!("transition_fraction_range ({lo}, {hi}) must lie inside (0, 1)"));
        }
        if !(self.cluster_noise_sigma >= 0.0 && self.cluster_noise_sigma.is_finite()) {
            return bad(format!("cluster_noise_sigma {} must be >= 0", self.cluster_noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return bad(format!("test_fraction {} must lie in [0, 1]", self.test_fraction));
        }
        Ok(())
    }
}

/// Generated features, their manifest, and the transition clip of every
/// video (the manifest only exposes it on test rows).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub manifest: Manifest,
    pub features: Vec<ClipFeatureSequence>,
    pub transitions: Vec<usize>,
    pub goal_prototypes: Tensor,
    pub unint_prototypes: Tensor,
}

fn prototypes(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    let data = (0..n * d).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(n, d, data).expect("n * d values")
}

pub fn synth_generate(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let goal_prototypes = prototypes(&mut rng, spec.n_goal_classes, spec.d);
    let unint_prototypes = prototypes(&mut rng, spec.n_unint_classes, spec.d);
    let noise = Normal::new(0.0, spec.cluster_noise_sigma)
        .map_err(|e| Error::invalid("synthetic spec", e.to_string()))?;
    let n_train = spec.num_videos - (spec.num_videos as f64 * spec.test_fraction).round() as usize;
    let width = spec.num_videos.to_string().len();

    let mut videos = Vec::with_capacity(spec.num_videos);
    let mut features = Vec::with_capacity(spec.num_videos);
    let mut transitions = Vec::with_capacity(spec.num_videos);
    for i in 0..spec.num_videos {
        let goal = rng.random_range(0..spec.n_goal_classes);
        let unint = rng.random_range(0..spec.n_unint_classes);
        let l = rng.random_range(spec.l_range.0..=spec.l_range.1);
        let (lo, hi) = spec.transition_fraction_range;
        let frac = if lo < hi { rng.random_range(lo..hi) } else { lo };
        let tc = ((frac * l as f64).round() as usize).clamp(1, l - 1);

        let mut data = Vec::with_capacity(l * spec.d);
        for t in 0..l {
            let proto = if t < tc {
                goal_prototypes.row(goal)
            } else {
                unint_prototypes.row(unint)
            };
            data.extend(proto.iter().map(|&p| p + noise.sample(&mut rng)));
        }
        let id = format!("synth_{i:0width$}");
        let split = if i < n_train { Split::Train } else { Split::Test };
        features.push(ClipFeatureSequence::new(id.clone(), Tensor::matrix(l, spec.d, data)?)?);
        videos.push(ManifestVideo {
            feature_path: PathBuf::from("features").join(format!("{id}.bin")),
            id,
            goal_label: goal,
            unint_label: unint,
            num_clips: l,
            transition_clip: (split == Split::Test).then_some(tc),
            split,
        });
        transitions.push(tc);
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        goal_classes: (0..spec.n_goal_classes).map(|c| format!("goal_{c}")).collect(),
        unint_classes: (0..spec.n_unint_classes).map(|c| format!("unint_{c}")).collect(),
        videos,
        base_dir: PathBuf::new(),
    };
    Ok(SyntheticDataset {
        manifest,
        features,
        transitions,
        goal_prototypes,
        unint_prototypes,
    })
}

impl SyntheticDataset {
    pub fn samples(&self, split: Split) -> Vec<Sample> {
        self.manifest
            .videos
            .iter()
            .zip(&self.features)
            .filter(|(v, _)| v.split == split)
            .map(|(v, x)| Sample {
                features: x.clone(),
                label: v.label(),
            })
            .collect()
    }

    pub fn ground_truth(&self, split: Split) -> Vec<GroundTruthSplit> {
        self.manifest
            .videos
            .iter()
            .zip(&self.transitions)
            .filter(|(v, _)| v.split == split)
            .map(|(v, &tc)| GroundTruthSplit {
                video_id: v.id.clone(),
                num_clips: v.num_clips,
                transition_clip: tc,
                goal_class: v.goal_label,
                unint_class: v.unint_label,
            })
            .collect()
    }

    /// Writes `manifest.json` and `features/<id>.bin` under `dir`; returns
    /// the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        for (v, x) in self.manifest.videos.iter().zip(&self.features) {
            write_feature_file(&dir.join(&v.feature_path), x.features())?;
        }
        let path = dir.join("manifest.json");
        write_json(&path, &self.manifest)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::map_at_iou;
    use crate::localize::{extract_segments, Head, VideoPrediction};

    #[test]
    fn same_seed_same_dataset() {
        let spec = SyntheticSpec {
            num_videos: 12,
            ..Default::default()
        };
        assert_eq!(synth_generate(&spec).unwrap(), synth_generate(&spec).unwrap());
        let other = synth_generate(&SyntheticSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(other.features, synth_generate(&SyntheticSpec { num_videos: 12, ..Default::default() }).unwrap().features);
    }

    #[test]
    fn fixture_shape() {
        let ds = synth_generate(&SyntheticSpec::default()).unwrap();
        assert_eq!(ds.manifest.split(Split::Train).count(), 160);
        assert_eq!(ds.manifest.split(Split::Test).count(), 40);
        for (v, x) in ds.manifest.videos.iter().zip(&ds.features) {
            assert!((16..=32).contains(&x.num_clips()));
            assert_eq!(x.feature_dim(), 32);
            assert_eq!(v.transition_clip.is_some(), v.split == Split::Test);
        }
        ds.manifest.validate(crate::io::ManifestMode::Eval, None).unwrap();
    }

    #[test]
    fn zero_noise_nearest_prototype_oracle_is_perfect() {
        let spec = SyntheticSpec {
            num_videos: 30,
            cluster_noise_sigma: 0.0,
            ..Default::default()
        };
        let ds = synth_generate(&spec).unwrap();
        let gts = ds.ground_truth(Split::Test);
        let mut preds = Vec::new();
        for (v, x) in ds.manifest.videos.iter().zip(&ds.features) {
            if v.split != Split::Test {
                continue;
            }
            for (head, protos) in [(Head::Goal, &ds.goal_prototypes), (Head::Unint, &ds.unint_prototypes)] {
                let mut segments = Vec::new();
                for c in 0..protos.rows() {
                    let psi: Vec<f64> = (0..x.num_clips())
                        .map(|t| (x.features().row(t) == protos.row(c)) as u8 as f64)
                        .collect();
                    segments.extend(extract_segments(&psi, 0.5, c));
                }
                preds.push(VideoPrediction {
                    video_id: v.id.clone(),
                    head,
                    segments,
                });
            }
        }
        let table = map_at_iou(&preds, &gts).unwrap();
        assert_eq!(table.goal_avg, 1.0);
        assert_eq!(table.unint_avg, 1.0);
    }

    #[test]
    fn write_then_load() {
        let ds = synth_generate(&SyntheticSpec {
            num_videos: 5,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = ds.write(dir.path()).unwrap();
        let m = crate::io::load_manifest(&path, crate::io::ManifestMode::Eval).unwrap();
        let test = crate::io::load_split(&m, Split::Test).unwrap();
        assert_eq!(test.len(), 1);
        let x = &test[0].1;
        let orig = &ds.features[4];
        for (a, b) in x.features().data().iter().zip(orig.features().data()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        for spec in [
            SyntheticSpec { n_goal_classes: 1, ..Default::default() },
            SyntheticSpec { l_range: (10, 5), ..Default::default() },
            SyntheticSpec { transition_fraction_range: (0.0, 0.5), ..Default::default() },
        ] {
            assert!(synth_generate(&spec).is_err());
        }
    }
}
