//! Dataset statistics and the conditional entropy of unintentional labels
//! given goal-directed labels.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{Manifest, Split};
use crate::SECONDS_PER_CLIP;

/// Number of bins of the normalized segment-length histograms.
pub const FRACTION_BINS: usize = 20;

/// `counts[g][u]`: videos labelled goal class `g` and unintentional class `u`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelPairCounts {
    pub counts: Vec<Vec<u64>>,
}

impl LabelPairCounts {
    pub fn from_manifest(manifest: &Manifest) -> Self {
        let mut counts = vec![vec![0u64; manifest.unint_classes.len()]; manifest.goal_classes.len()];
        for v in &manifest.videos {
            counts[v.goal_label][v.unint_label] += 1;
        }
        Self { counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    /// `H(UA | IA = g)` in bits; `None` for goal classes with no videos.
    pub per_goal: Vec<Option<f64>>,
    /// Per-class entropies weighted by the goal-class marginal.
    pub average: f64,
}

/// Entropy in bits of a count vector, with `0 log 0 = 0`.
pub fn entropy_bits(row: &[u64]) -> f64 {
    let total: u64 = row.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    -row.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            p * p.log2()
        })
        .sum::<f64>()
}

pub fn conditional_entropy(counts: &LabelPairCounts) -> Result<EntropyReport> {
    let width = counts.counts.first().map_or(0, Vec::len);
    if counts.counts.iter().any(|r| r.len() != width) {
        return Err(Error::invalid("conditional_entropy", "rows differ in length"));
    }
    let grand: u64 = counts.counts.iter().flatten().sum();
    if grand == 0 {
        return Err(Error::invalid("conditional_entropy", "all label-pair counts are zero"));
    }
    let mut average = 0.0;
    let per_goal = counts
        .counts
        .iter()
        .map(|row| {
            let n: u64 = row.iter().sum();
            (n > 0).then(|| {
                let h = entropy_bits(row);
                average += n as f64 / grand as f64 * h;
                h
            })
        })
        .collect();
    Ok(EntropyReport { per_goal, average })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` bin edges; the last bin includes its right edge.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `bin_start,bin_end,count`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_start,bin_end,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},{c}", self.edges[i], self.edges[i + 1]);
        }
        out
    }
}

/// Histogram of `num / den` over 20 uniform bins on `[0, 1]`, binned with
/// integer arithmetic so exact bin edges are never misassigned.
fn fraction_histogram(pairs: &[(usize, usize)]) -> Histogram {
    let mut counts = vec![0u64; FRACTION_BINS];
    for &(num, den) in pairs {
        let bin = (num * FRACTION_BINS / den).min(FRACTION_BINS - 1);
        counts[bin] += 1;
    }
    Histogram {
        edges: (0..=FRACTION_BINS).map(|i| i as f64 / FRACTION_BINS as f64).collect(),
        counts,
    }
}

/// One bin per clip: bin `i` covers `[i, i + 1)` clips of 0.64 s.
fn seconds_histogram(clip_counts: &[usize]) -> Histogram {
    let max = clip_counts.iter().copied().max().unwrap_or(0);
    let mut counts = vec![0u64; max + 1];
    for &c in clip_counts {
        counts[c] += 1;
    }
    Histogram {
        edges: (0..=max + 1).map(|i| i as f64 * SECONDS_PER_CLIP).collect(),
        counts,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCount {
    pub class_id: usize,
    pub name: String,
    pub train: u64,
    pub test: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub train_count: usize,
    pub test_count: usize,
    /// Videos with a transition clip, which the segment histograms cover.
    pub annotated_count: usize,
    pub goal_fraction: Histogram,
    pub unint_fraction: Histogram,
    pub video_seconds: Histogram,
    pub goal_classes: Vec<ClassCount>,
    pub unint_classes: Vec<ClassCount>,
}

fn class_counts(names: &[String], manifest: &Manifest, label: impl Fn(&crate::io::ManifestVideo) -> usize) -> Vec<ClassCount> {
    let mut out: Vec<ClassCount> = names
        .iter()
        .enumerate()
        .map(|(class_id, name)| ClassCount {
            class_id,
            name: name.clone(),
            train: 0,
            test: 0,
        })
        .collect();
    for v in &manifest.videos {
        let c = &mut out[label(v)];
        match v.split {
            Split::Train => c.train += 1,
            Split::Test => c.test += 1,
        }
    }
    out
}

pub fn dataset_stats(manifest: &Manifest) -> DatasetStats {
    let annotated: Vec<(usize, usize)> = manifest
        .videos
        .iter()
        .filter_map(|v| v.transition_clip.map(|t| (t, v.num_clips)))
        .collect();
    let unint: Vec<(usize, usize)> = annotated.iter().map(|&(t, l)| (l - t, l)).collect();
    let lengths: Vec<usize> = manifest.videos.iter().map(|v| v.num_clips).collect();
    DatasetStats {
        train_count: manifest.split(Split::Train).count(),
        test_count: manifest.split(Split::Test).count(),
        annotated_count: annotated.len(),
        goal_fraction: fraction_histogram(&annotated),
        unint_fraction: fraction_histogram(&unint),
        video_seconds: seconds_histogram(&lengths),
        goal_classes: class_counts(&manifest.goal_classes, manifest, |v| v.goal_label),
        unint_classes: class_counts(&manifest.unint_classes, manifest, |v| v.unint_label),
    }
}

impl DatasetStats {
    /// `head,class_id,name,train,test`
    pub fn class_counts_csv(&self) -> String {
        let mut out = String::from("head,class_id,name,train,test\n");
        for (head, rows) in [("goal", &self.goal_classes), ("unint", &self.unint_classes)] {
            for c in rows {
                let _ = writeln!(out, "{head},{},{},{},{}", c.class_id, c.name, c.train, c.test);
            }
        }
        out
    }

    /// `head,bin_start,bin_end,count` for the normalized segment lengths.
    pub fn segment_fraction_csv(&self) -> String {
        let mut out = String::from("head,bin_start,bin_end,count\n");
        for (head, h) in [("goal", &self.goal_fraction), ("unint", &self.unint_fraction)] {
            for (i, c) in h.counts.iter().enumerate() {
                let _ = writeln!(out, "{head},{},{},{c}", h.edges[i], h.edges[i + 1]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::ManifestVideo;
    use proptest::prelude::*;

    #[test]
    fn entropy_cases() {
        let det = LabelPairCounts {
            counts: vec![vec![0, 7, 0]],
        };
        assert_eq!(conditional_entropy(&det).unwrap().average, 0.0);

        let uniform = LabelPairCounts {
            counts: vec![vec![5; 30]],
        };
        let h = conditional_entropy(&uniform).unwrap().average;
        assert!((h - 30f64.log2()).abs() < 1e-12);
        assert!((h - 4.91).abs() < 0.01);

        let skew = LabelPairCounts {
            counts: vec![vec![3, 1]],
        };
        assert!((conditional_entropy(&skew).unwrap().average - 0.811_278_124_459_132_8).abs() < 1e-12);

        let zero = LabelPairCounts {
            counts: vec![vec![0, 0]],
        };
        assert!(conditional_entropy(&zero).is_err());
    }

    #[test]
    fn empty_rows_omitted_and_weighted() {
        let counts = LabelPairCounts {
            counts: vec![vec![2, 2], vec![0, 0], vec![6, 0]],
        };
        let r = conditional_entropy(&counts).unwrap();
        assert_eq!(r.per_goal, vec![Some(1.0), None, Some(0.0)]);
        assert!((r.average - 0.4).abs() < 1e-15);
    }

    fn manifest(rows: &[(usize, Option<usize>, Split)]) -> Manifest {
        Manifest {
            format_version: 1,
            goal_classes: vec!["a".into(), "b".into()],
            unint_classes: vec!["x".into(), "y".into()],
            videos: rows
                .iter()
                .enumerate()
                .map(|(i, &(l, t, split))| ManifestVideo {
                    id: format!("v{i}"),
                    feature_path: format!("v{i}.bin").into(),
                    goal_label: i % 2,
                    unint_label: 0,
                    num_clips: l,
                    transition_clip: t,
                    split,
                })
                .collect(),
            base_dir: Default::default(),
        }
    }

    #[test]
    fn midpoint_transition() {
        let s = dataset_stats(&manifest(&[(10, Some(5), Split::Test)]));
        assert_eq!(s.goal_fraction.counts[10], 1);
        assert_eq!(s.unint_fraction.counts[10], 1);
        assert_eq!(s.goal_fraction.edges[10], 0.5);
        assert_eq!(s.video_seconds.counts[10], 1);
        assert!((s.video_seconds.edges[10] - 6.4).abs() < 1e-12);
    }

    #[test]
    fn split_counts_and_class_counts() {
        let mut rows = vec![(4, None, Split::Train); 1582];
        rows.extend(vec![(4, Some(2), Split::Test); 526]);
        let s = dataset_stats(&manifest(&rows));
        assert_eq!((s.train_count, s.test_count), (1582, 526));
        assert_eq!(s.goal_fraction.total(), 526);
        assert_eq!(s.goal_classes[0].train + s.goal_classes[1].train, 1582);
        assert_eq!(s.unint_classes[0].test, 526);
        assert!(s.class_counts_csv().starts_with("head,class_id,name,train,test\ngoal,0,a,"));
    }

    proptest! {
        #[test]
        fn entropy_bounded_and_permutation_invariant(row in proptest::collection::vec(0u64..20, 2..12), rot in 0usize..12) {
            prop_assume!(row.iter().sum::<u64>() > 0);
            let h = entropy_bits(&row);
            prop_assert!(h >= 0.0 && h <= (row.len() as f64).log2() + 1e-12);
            let mut permuted = row.clone();
            permuted.rotate_left(rot % row.len());
            permuted.reverse();
            prop_assert!((entropy_bits(&permuted) - h).abs() < 1e-12);
        }

        #[test]
        fn histogram_mass_equals_video_count(rows in proptest::collection::vec((2usize..40, 0.0f64..1.0), 1..60)) {
            let rows: Vec<(usize, Option<usize>, Split)> = rows
                .into_iter()
                .map(|(l, f)| (l, Some(1 + ((l - 2) as f64 * f) as usize), Split::Test))
                .collect();
            let s = dataset_stats(&manifest(&rows));
            prop_assert_eq!(s.goal_fraction.total() as usize, rows.len());
            prop_assert_eq!(s.unint_fraction.total() as usize, rows.len());
            prop_assert_eq!(s.video_seconds.total() as usize, rows.len());
        }
    }
}
