mod common;

use common::*;
use prise::checkpoint::{load_checkpoint, save_checkpoint};
use prise::data::synth::{generate_synthetic, SynthConfig, SyntheticData};
use prise::data::Dataset;
use prise::model::{MaskMode, PriseModel};
use prise::scene::{train_contrast, ContrastConfig, SceneEncoderParams};
use prise::trainer::{ablation_run, evaluate, evaluate_checkpoint, train_prise, AblationConfig, TrainConfig};
use rand::seq::SliceRandom;

fn small_data() -> SyntheticData {
    generate_synthetic(&SynthConfig { n_images: 80, contrast_images: 200, ..Default::default() }).unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, hidden: 32, ..desk_train_config() }
}

fn identity(data: &SyntheticData) -> SceneEncoderParams {
    SceneEncoderParams::identity(data.train.f)
}

fn bits(model: &PriseModel, names: &[String]) -> Vec<Vec<u64>> {
    names
        .iter()
        .map(|n| model.params.by_name(n).unwrap().data().iter().map(|v| v.to_bits()).collect())
        .collect()
}

fn all_names(model: &PriseModel) -> Vec<String> {
    model.params.iter().map(|(n, _)| n.to_string()).collect()
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let data = small_data();
    let cfg = TrainConfig { lr: 0.0, ..quick(2) };
    let enc = identity(&data);
    let out = train_prise(&data.train, &data.val, &cfg, Some(&enc), |_| Ok(())).unwrap();
    let init = PriseModel::init(cfg.model_spec(data.train.f, data.train.c), Some(&enc), cfg.seed).unwrap();
    let names = all_names(&init);
    assert_eq!(bits(&out.best, &names), bits(&init, &names));
}

#[test]
fn removed_interactive_stream_never_moves_the_rgcn() {
    let data = small_data();
    let enc = identity(&data);
    let cfg = TrainConfig {
        streams: vec!["foreground".into(), "background".into(), "scene".into()],
        ..quick(2)
    };
    let init = PriseModel::init(cfg.model_spec(data.train.f, data.train.c), Some(&enc), cfg.seed).unwrap();
    let rgcn: Vec<String> = init.rgcn_ids().unwrap().all().iter().map(|&id| init.params.name(id).to_string()).collect();
    let head: Vec<String> = init.head_ids().unwrap().all().iter().map(|&id| init.params.name(id).to_string()).collect();

    let mut tape = init.new_tape();
    let records: Vec<_> = data.train.records.iter().take(4).collect();
    let out = init.forward(&mut tape, &records).unwrap().unwrap();
    let targets: Vec<Option<usize>> = records.iter().flat_map(|r| r.labels_in_order()).collect();
    let loss = tape.cross_entropy(out.logits, &targets, None).unwrap();
    let grads = tape.backward(loss).unwrap();
    for id in init.rgcn_ids().unwrap().all() {
        let g = grads.param(id);
        assert!(g.is_none_or(|g| g.data().iter().all(|v| *v == 0.0)));
    }

    let trained = train_prise(&data.train, &data.val, &cfg, Some(&enc), |_| Ok(())).unwrap();
    assert_eq!(bits(&trained.best, &rgcn), bits(&init, &rgcn));
    assert_ne!(bits(&trained.best, &head), bits(&init, &head));
}

#[test]
fn masked_streams_remove_or_zero_their_block() {
    let f = 32;
    let full = quick(1).model_spec(f, 3);
    assert_eq!(full.input_dim().unwrap(), 4 * f);
    let no_scene = TrainConfig { streams: vec!["interactive".into(), "foreground".into(), "background".into()], ..quick(1) };
    assert_eq!(no_scene.model_spec(f, 3).input_dim().unwrap(), 3 * f);
    assert!(!no_scene.model_spec(f, 3).concat_order().unwrap().iter().any(|s| s == "scene"));
    let zero = TrainConfig { mask_mode: MaskMode::ZeroFill, ..no_scene };
    assert_eq!(zero.model_spec(f, 3).input_dim().unwrap(), 4 * f);
}

#[test]
fn zero_filled_block_gets_no_head_gradient() {
    let data = small_data();
    let f = data.train.f;
    let cfg = TrainConfig {
        streams: vec!["interactive".into(), "foreground".into(), "background".into()],
        mask_mode: MaskMode::ZeroFill,
        ..quick(1)
    };
    let model = PriseModel::init(cfg.model_spec(f, data.train.c), None, cfg.seed).unwrap();
    let mut tape = model.new_tape();
    let records: Vec<_> = data.train.records.iter().take(4).collect();
    let out = model.forward(&mut tape, &records).unwrap().unwrap();
    let targets: Vec<Option<usize>> = records.iter().flat_map(|r| r.labels_in_order()).collect();
    let loss = tape.cross_entropy(out.logits, &targets, None).unwrap();
    let grads = tape.backward(loss).unwrap();
    let w1 = grads.param(model.head_ids().unwrap().hidden_weight).unwrap();
    let (rows, cols) = (w1.shape()[0], w1.shape()[1]);
    assert_eq!(cols, 4 * f);
    let block = |lo: usize, hi: usize| (0..rows).flat_map(|h| (lo..hi).map(move |k| h * cols + k)).map(|i| w1.data()[i].abs()).fold(0.0, f64::max);
    assert_eq!(block(3 * f, 4 * f), 0.0);
    assert!(block(0, 3 * f) > 0.0);
}

#[test]
fn history_tracks_every_epoch_and_best_is_the_maximum() {
    let data = small_data();
    let enc = identity(&data);
    let cfg = quick(5);
    let mut seen = Vec::new();
    let out = train_prise(&data.train, &data.val, &cfg, Some(&enc), |e| {
        seen.push(e.epoch);
        Ok(())
    })
    .unwrap();
    assert_eq!(out.history.len(), cfg.epochs);
    assert_eq!(seen, (1..=cfg.epochs).collect::<Vec<_>>());
    let max = out.history.iter().map(|e| e.val_accuracy).fold(f64::MIN, f64::max);
    assert_eq!(out.best_val_accuracy(), max);
    let first_max = out.history.iter().position(|e| e.val_accuracy == max).unwrap() + 1;
    assert_eq!(out.best_epoch, first_max);
    let (report, _) = evaluate(&out.best, &data.val).unwrap();
    assert_eq!(report.accuracy, max);
}

#[test]
fn training_is_reproducible_and_checkpoints_evaluate_identically() {
    let data = small_data();
    let enc = identity(&data);
    let cfg = quick(3);
    let a = train_prise(&data.train, &data.val, &cfg, Some(&enc), |_| Ok(())).unwrap();
    let b = train_prise(&data.train, &data.val, &cfg, Some(&enc), |_| Ok(())).unwrap();
    assert_eq!(a.history, b.history);
    let names = all_names(&a.best);
    assert_eq!(bits(&a.best, &names), bits(&b.best, &names));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &a.to_checkpoint().unwrap()).unwrap();
    let (direct, _) = evaluate(&a.best, &data.test).unwrap();
    let (loaded, _) = evaluate_checkpoint(&load_checkpoint(&path).unwrap(), &data.test).unwrap();
    assert_eq!(direct.to_text(), loaded.to_text());
}

#[test]
fn test_order_does_not_change_metrics() {
    let data = small_data();
    let enc = identity(&data);
    let out = train_prise(&data.train, &data.val, &quick(2), Some(&enc), |_| Ok(())).unwrap();
    let (base, _) = evaluate(&out.best, &data.test).unwrap();
    let mut records = data.test.records.clone();
    records.shuffle(&mut rng(2, "order"));
    let shuffled = Dataset { records, ..data.test.clone() };
    let (again, _) = evaluate(&out.best, &shuffled).unwrap();
    assert_eq!(base.accuracy, again.accuracy);
    assert!((base.map - again.map).abs() < 1e-12);
    assert_eq!(base.confusion, again.confusion);
}

#[test]
fn ablation_table_has_one_row_per_variant() {
    let data = small_data();
    let enc = identity(&data);
    let table = ablation_run(
        &data.train,
        &data.val,
        &data.test,
        &quick(1),
        Some(&enc),
        &AblationConfig { repeats: 2, workers: 2, ..Default::default() },
    )
    .unwrap();
    let labels: Vec<&str> = table.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["PRISE", "w/o Int.", "w/o Scene", "w/o Fore.", "w/o Back.", "PRISE|Pretrained"]);
    assert!(table.rows.iter().all(|r| r.accuracy.len() == 2));
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn trained_scene_features_group_by_scene() {
    let data = small_data();
    let cfg = ContrastConfig { epochs: 10, ..desk_contrast_config() };
    let a = train_contrast(&data.contrast.records, &cfg, |_| Ok(())).unwrap();
    let b = train_contrast(&data.contrast.records, &cfg, |_| Ok(())).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.history.len(), cfg.epochs);

    let enc = a.encoder().unwrap();
    let held: Vec<_> = data.val.records.iter().chain(&data.test.records).collect();
    let feats: Vec<Vec<f64>> = held
        .iter()
        .map(|r| prise::scene::extract_scene_feature(r, &enc).unwrap().data().to_vec())
        .collect();
    let scenes: Vec<usize> = held.iter().map(|r| data.scene_of(&r.image_id).unwrap()).collect();
    let (mut same, mut ns, mut diff, mut nd) = (0.0, 0, 0.0, 0);
    for i in 0..held.len() {
        for j in i + 1..held.len() {
            let c = cosine(&feats[i], &feats[j]);
            if scenes[i] == scenes[j] {
                same += c;
                ns += 1;
            } else {
                diff += c;
                nd += 1;
            }
        }
    }
    assert!(same / ns as f64 > diff / nd as f64, "same {} vs diff {}", same / ns as f64, diff / nd as f64);
}
