use intentloc::eval::{classification_map, map_at_iou};
use intentloc::io::{load_manifest, load_split, read_predictions, write_predictions, Checkpoint, ManifestMode, Split};
use intentloc::localize::localize_video;
use intentloc::model::ModelParams;
use intentloc::train::{synth_generate, train, Sample, SyntheticSpec, TrainConfig};

#[test]
fn synth_train_checkpoint_localize_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        num_videos: 30,
        d: 8,
        ..Default::default()
    };
    let manifest_path = synth_generate(&spec).unwrap().write(dir.path()).unwrap();
    let manifest = load_manifest(&manifest_path, ManifestMode::Eval).unwrap();

    let samples: Vec<Sample> = load_split(&manifest, Split::Train)
        .unwrap()
        .into_iter()
        .map(|(v, features)| Sample {
            label: v.label(),
            features,
        })
        .collect();
    assert_eq!(samples.len(), 24);

    let cfg = TrainConfig {
        hidden_size: 6,
        num_layers: 2,
        iterations: 10,
        batch_size: 4,
        ..Default::default()
    };
    let params = ModelParams::init(cfg.dims(8, 4, 3), cfg.seed).unwrap();
    let out = train(&samples, params, &cfg, |_, _| Ok(())).unwrap();
    assert_eq!(out.history.len(), 10);

    let ckpt_path = dir.path().join("ckpt_10.json");
    Checkpoint::new(&out.params, cfg.loss_hyper(), 10).unwrap().save(&ckpt_path).unwrap();
    let ckpt = Checkpoint::load(&ckpt_path).unwrap();
    assert_eq!(ckpt.hyperparams.iteration, 10);
    assert_eq!(ckpt.hyperparams.loss, cfg.loss_hyper());
    let params = ckpt.params().unwrap();
    assert_eq!(params, out.params);

    let test = load_split(&manifest, Split::Test).unwrap();
    let mut preds = Vec::new();
    let (mut pmfs, mut labels) = (Vec::new(), Vec::new());
    for (v, x) in &test {
        let inf = localize_video(&v.id, &params.forward(x).unwrap(), cfg.s, 0.2).unwrap();
        for seg in inf.goal.segments.iter().chain(&inf.unint.segments) {
            assert!(seg.start_clip <= seg.end_clip && seg.end_clip < v.num_clips);
            assert!((0.0..=1.0).contains(&seg.score));
        }
        assert!((inf.pmf_goal.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        pmfs.push(inf.pmf_goal);
        labels.push(v.goal_label);
        preds.push(inf.goal);
        preds.push(inf.unint);
    }

    let pred_path = dir.path().join("predictions.jsonl");
    write_predictions(&pred_path, &preds).unwrap();
    assert_eq!(read_predictions(&pred_path).unwrap(), preds);

    let table = map_at_iou(&preds, &manifest.ground_truth(Split::Test)).unwrap();
    for v in table.goal.iter().chain(&table.unint) {
        assert!((0.0..=1.0).contains(v));
    }
    let cmap = classification_map(&pmfs, &labels).unwrap();
    assert!((0.0..=1.0).contains(&cmap));
}

#[test]
fn eval_mode_requires_transitions_on_test_rows() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_generate(&SyntheticSpec {
        num_videos: 10,
        ..Default::default()
    })
    .unwrap();
    let mut manifest = ds.manifest.clone();
    let last = manifest.videos.len() - 1;
    manifest.videos[last].transition_clip = None;
    let path = dir.path().join("manifest.json");
    intentloc::io::write_json(&path, &manifest).unwrap();
    assert!(load_manifest(&path, ManifestMode::Train).is_ok());
    let err = load_manifest(&path, ManifestMode::Eval).unwrap_err().to_string();
    assert!(err.contains(&manifest.videos[last].id), "{err}");
    assert!(err.contains("line"), "{err}");
}
