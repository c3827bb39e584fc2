use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use intentloc::analysis::{conditional_entropy, dataset_stats, LabelPairCounts};
use intentloc::eval::{classification_map, map_at_iou, MapTable};
use intentloc::io::{
    load_keypoints, load_manifest, load_split, metrics_csv, read_feature_file, read_json,
    read_predictions, write_atomic, write_feature_file, write_json, write_jsonl, write_predictions,
    Checkpoint, ManifestMode, ManifestVideo, MetricsReport, Split, FORMAT_VERSION,
};
use intentloc::localize::{localize_video, Head, VideoInference, VideoPrediction};
use intentloc::model::{ClipFeatureSequence, ModelParams};
use intentloc::pose::{fuse_with_rgb, pose_features, principal_frames};
use intentloc::train::{check_loss_gradients, synth_generate, LogRecord, Sample, SyntheticSpec};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::{EvalArgs, GradcheckArgs, LocalizeArgs, PoseArgs, SplitArg, StatsArgs, SynthArgs, TrainArgs};

fn banner(config: &serde_json::Value) {
    println!("resolved config:");
    println!("{}", serde_json::to_string_pretty(config).expect("json value"));
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut spec: SyntheticSpec = match &a.config {
        Some(path) => read_json(path)?,
        None => SyntheticSpec::default(),
    };
    spec.seed = a.seed.unwrap_or(spec.seed);
    spec.num_videos = a.num_videos.unwrap_or(spec.num_videos);
    spec.d = a.dim.unwrap_or(spec.d);
    spec.cluster_noise_sigma = a.sigma.unwrap_or(spec.cluster_noise_sigma);
    banner(&json!({ "command": "synth", "out": a.out, "spec": spec }));

    let ds = synth_generate(&spec)?;
    let path = ds.write(&a.out)?;
    println!(
        "wrote {} videos ({} train, {} test) to {}",
        ds.manifest.videos.len(),
        ds.manifest.split(Split::Train).count(),
        ds.manifest.split(Split::Test).count(),
        path.display()
    );
    Ok(())
}

fn checkpoint_path(out: &Path, iteration: usize) -> std::path::PathBuf {
    out.join(format!("ckpt_{iteration}.json"))
}

pub fn train(a: TrainArgs, threads: usize) -> Result<()> {
    let cfg = a.overrides.resolve()?;
    banner(&json!({
        "command": "train",
        "manifest": a.manifest,
        "out": a.out,
        "threads": threads,
        "train": cfg,
    }));

    let manifest = load_manifest(&a.manifest, ManifestMode::Train)?;
    let samples: Vec<Sample> = load_split(&manifest, Split::Train)?
        .into_iter()
        .map(|(v, features)| Sample {
            features,
            label: v.label(),
        })
        .collect();
    let Some(first) = samples.first() else {
        bail!("manifest {} has no train videos", a.manifest.display());
    };
    let dims = cfg.dims(
        first.features.feature_dim(),
        manifest.goal_classes.len(),
        manifest.unint_classes.len(),
    );
    let params = ModelParams::init(dims, cfg.seed)?;
    println!(
        "training on {} videos, {} parameters",
        samples.len(),
        params.num_scalars()
    );
    write_json(&a.out.join("config.json"), &cfg)?;

    let log_path = a.out.join("train_log.jsonl");
    let report_every = (cfg.iterations / 20).max(1);
    let mut log: Vec<LogRecord> = Vec::with_capacity(cfg.iterations);
    let outcome = intentloc::train::train(&samples, params, &cfg, |record, params| {
        log.push(*record);
        let iter = record.iter;
        if iter % report_every == 0 || iter == cfg.iterations {
            println!(
                "iter {iter:>6}  total {:.5}  cls_ia {:.4}  cls_ua {:.4}  overlap {:.4}  order {:.4}",
                record.total, record.l_cls_ia, record.l_cls_ua, record.l_overlap, record.l_order
            );
        }
        if cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0 && iter != cfg.iterations {
            Checkpoint::new(params, cfg.loss_hyper(), iter)?.save(&checkpoint_path(&a.out, iter))?;
            write_jsonl(&log_path, &log)?;
        }
        Ok(())
    })?;

    let final_path = checkpoint_path(&a.out, cfg.iterations);
    Checkpoint::new(&outcome.params, cfg.loss_hyper(), cfg.iterations)?.save(&final_path)?;
    write_jsonl(&log_path, &outcome.history)?;
    println!("wrote {} and {}", final_path.display(), log_path.display());
    Ok(())
}

fn infer(
    ckpt_path: &Path,
    videos: &[(ManifestVideo, ClipFeatureSequence)],
    seg_threshold: f64,
) -> Result<Vec<VideoInference>> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let params = ckpt.params()?;
    let s = ckpt.hyperparams.loss.s;
    videos
        .par_iter()
        .map(|(v, x)| {
            let out = params.forward(x).with_context(|| format!("video \"{}\"", v.id))?;
            Ok(localize_video(&v.id, &out, s, seg_threshold)?)
        })
        .collect()
}

fn flatten_predictions(inferences: &[VideoInference]) -> Vec<VideoPrediction> {
    inferences
        .iter()
        .flat_map(|i| [i.goal.clone(), i.unint.clone()])
        .collect()
}

fn print_table(table: &MapTable) {
    let header: Vec<String> = table.thresholds.iter().map(|t| format!("{t:>6.1}")).collect();
    println!("mAP@IoU {}    avg", header.join(""));
    for head in Head::BOTH {
        let (row, avg) = table.head(head);
        let cells: Vec<String> = row.iter().map(|v| format!("{:>6.1}", 100.0 * v)).collect();
        println!("{:<7} {} {:>6.1}", head.as_str(), cells.join(""), 100.0 * avg);
    }
}

pub fn eval(a: EvalArgs, threads: usize) -> Result<()> {
    banner(&json!({
        "command": "eval",
        "manifest": a.manifest,
        "ckpt": a.ckpt,
        "predictions": a.predictions,
        "out": a.out,
        "seg_threshold": a.seg_threshold,
        "threads": threads,
    }));
    let manifest = load_manifest(&a.manifest, ManifestMode::Eval)?;
    let gts = manifest.ground_truth(Split::Test);
    ensure!(!gts.is_empty(), "manifest {} has no test videos", a.manifest.display());

    let (preds, cmap_goal, cmap_unint) = match (&a.ckpt, &a.predictions) {
        (Some(ckpt), None) => {
            let videos = load_split(&manifest, Split::Test)?;
            let inf = infer(ckpt, &videos, a.seg_threshold)?;
            let goal_labels: Vec<usize> = videos.iter().map(|(v, _)| v.goal_label).collect();
            let unint_labels: Vec<usize> = videos.iter().map(|(v, _)| v.unint_label).collect();
            let pmf_goal: Vec<Vec<f64>> = inf.iter().map(|i| i.pmf_goal.clone()).collect();
            let pmf_unint: Vec<Vec<f64>> = inf.iter().map(|i| i.pmf_unint.clone()).collect();
            let preds = flatten_predictions(&inf);
            write_predictions(&a.out.join("predictions.jsonl"), &preds)?;
            (
                preds,
                Some(classification_map(&pmf_goal, &goal_labels)?),
                Some(classification_map(&pmf_unint, &unint_labels)?),
            )
        }
        (None, Some(path)) => (read_predictions(path)?, None, None),
        _ => bail!("pass exactly one of --ckpt and --predictions"),
    };

    let table = map_at_iou(&preds, &gts)?;
    print_table(&table);
    if let (Some(g), Some(u)) = (cmap_goal, cmap_unint) {
        println!("cMAP goal {:.1}  unint {:.1}", 100.0 * g, 100.0 * u);
    }
    write_atomic(&a.out.join("metrics.csv"), metrics_csv(&table).as_bytes())?;
    write_json(
        &a.out.join("metrics.json"),
        &MetricsReport::new(gts.len(), table, cmap_goal, cmap_unint),
    )?;
    println!("wrote {}", a.out.join("metrics.json").display());
    Ok(())
}

pub fn localize(a: LocalizeArgs, threads: usize) -> Result<()> {
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    banner(&json!({
        "command": "localize",
        "manifest": a.manifest,
        "ckpt": a.ckpt,
        "out": a.out,
        "split": split,
        "seg_threshold": a.seg_threshold,
        "threads": threads,
    }));
    let manifest = load_manifest(&a.manifest, ManifestMode::Train)?;
    let videos = load_split(&manifest, split)?;
    let preds = flatten_predictions(&infer(&a.ckpt, &videos, a.seg_threshold)?);
    let path = a.out.join("predictions.jsonl");
    write_predictions(&path, &preds)?;
    println!("wrote predictions for {} videos to {}", videos.len(), path.display());
    Ok(())
}

#[derive(Serialize)]
struct PoseReport {
    format_version: u32,
    video_id: String,
    num_frames: usize,
    /// Two principal people per frame, 24 values each.
    frames: Vec<Vec<f64>>,
}

pub fn pose(a: PoseArgs) -> Result<()> {
    banner(&json!({ "command": "pose", "keypoints": a.keypoints, "out": a.out, "rgb": a.rgb }));
    let video = load_keypoints(&a.keypoints)?;
    let chunks = pose_features(&video)?;
    let id = video.video_id.clone();

    let report = PoseReport {
        format_version: FORMAT_VERSION,
        video_id: id.clone(),
        num_frames: video.num_frames,
        frames: principal_frames(&video),
    };
    write_json(&a.out.join(format!("{id}_pose.json")), &report)?;
    write_feature_file(&a.out.join(format!("{id}_pose.bin")), &chunks)?;
    println!("{id}: {} frames, {} pose chunks of width {}", video.num_frames, chunks.rows(), chunks.cols());

    if let Some(rgb) = &a.rgb {
        let x = read_feature_file(rgb, &id)?;
        let fused = fuse_with_rgb(&x, &chunks)?;
        let path = a.out.join(format!("{id}_fused.bin"));
        write_feature_file(&path, fused.features())?;
        println!("fused {} clips to width {} in {}", fused.num_clips(), fused.feature_dim(), path.display());
    }
    Ok(())
}

pub fn stats(a: StatsArgs) -> Result<()> {
    banner(&json!({ "command": "stats", "manifest": a.manifest, "out": a.out }));
    let manifest = load_manifest(&a.manifest, ManifestMode::Train)?;
    let stats = dataset_stats(&manifest);
    let entropy = conditional_entropy(&LabelPairCounts::from_manifest(&manifest))?;

    println!("train videos: {}", stats.train_count);
    println!("test videos: {}", stats.test_count);
    println!("videos with a transition: {}", stats.annotated_count);
    println!("H(unint | goal) = {:.4} bits", entropy.average);

    write_json(
        &a.out.join("stats.json"),
        &json!({ "format_version": FORMAT_VERSION, "stats": stats, "entropy": entropy }),
    )?;
    write_atomic(&a.out.join("class_counts.csv"), stats.class_counts_csv().as_bytes())?;
    write_atomic(&a.out.join("segment_fractions.csv"), stats.segment_fraction_csv().as_bytes())?;
    write_atomic(&a.out.join("video_seconds.csv"), stats.video_seconds.to_csv().as_bytes())?;
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs, threads: usize) -> Result<()> {
    let cfg = a.overrides.resolve()?;
    let hyper = cfg.loss_hyper();
    banner(&json!({
        "command": "gradcheck",
        "seeds": a.seeds,
        "lengths": a.lengths,
        "dim": a.dim,
        "hidden": a.hidden,
        "layers": a.layers,
        "goal_classes": a.goal_classes,
        "unint_classes": a.unint_classes,
        "eps": a.eps,
        "tolerance": a.tolerance,
        "loss": hyper,
        "threads": threads,
    }));
    ensure!(a.lengths.iter().all(|&l| l >= 2), "every length must be at least 2");

    let cases: Vec<(u64, usize)> = (0..a.seeds)
        .flat_map(|seed| a.lengths.iter().map(move |&l| (seed, l)))
        .collect();
    let dims = intentloc::model::ModelDims {
        input_dim: a.dim,
        hidden_size: a.hidden,
        num_layers: a.layers,
        n_ia: a.goal_classes,
        n_ua: a.unint_classes,
    };
    let reports: Vec<f64> = cases
        .par_iter()
        .map(|&(seed, l)| {
            let ds = synth_generate(&SyntheticSpec {
                num_videos: 5,
                l_range: (l, l),
                d: a.dim,
                n_goal_classes: a.goal_classes,
                n_unint_classes: a.unint_classes,
                seed,
                ..Default::default()
            })?;
            let sample = ds.samples(Split::Train).swap_remove(0);
            let params = ModelParams::init(dims, seed)?;
            Ok(check_loss_gradients(&params, &sample, &hyper, a.eps)?.max_relative_error)
        })
        .collect::<Result<_>>()?;

    let mut worst: f64 = 0.0;
    for (&(seed, l), &err) in cases.iter().zip(&reports) {
        let status = if err <= a.tolerance { "ok" } else { "FAIL" };
        println!("seed {seed:>3}  l {l:>3}  max rel err {err:.3e}  {status}");
        worst = worst.max(err);
    }
    println!("worst {worst:.3e} over {} cases (tolerance {:.0e})", cases.len(), a.tolerance);
    ensure!(
        worst <= a.tolerance,
        "gradient check failed: relative error {worst:.3e} exceeds {:.0e}",
        a.tolerance
    );
    Ok(())
}
