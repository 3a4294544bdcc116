mod common;

use std::collections::BTreeMap;

use common::rng;
use prise::data::synth::{generate_synthetic, SynthConfig};
use prise::data::{read_dataset, validate_record, ImageRecord};
use prise::scene::{ContrastPools, PoolConfig};
use rand::seq::SliceRandom;
use rand::Rng;

fn labelled(cfg: &SynthConfig) -> (prise::data::synth::SyntheticData, Vec<ImageRecord>) {
    let data = generate_synthetic(cfg).unwrap();
    let all = [&data.train, &data.val, &data.test]
        .iter()
        .flat_map(|d| d.records.iter().cloned())
        .collect();
    (data, all)
}

#[test]
fn generation_is_a_pure_function_of_the_config() {
    let cfg = SynthConfig { n_images: 10, contrast_images: 5, ..Default::default() };
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    generate_synthetic(&cfg).unwrap().write(dir_a.path()).unwrap();
    generate_synthetic(&cfg).unwrap().write(dir_b.path()).unwrap();
    for name in ["train.jsonl", "val.jsonl", "test.jsonl", "contrast.jsonl", "scenes.tsv"] {
        let a = std::fs::read(dir_a.path().join(name)).unwrap();
        let b = std::fs::read(dir_b.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs");
    }
    let other = generate_synthetic(&SynthConfig { seed: 8, ..cfg }).unwrap();
    let dir_c = tempfile::tempdir().unwrap();
    other.write(dir_c.path()).unwrap();
    assert_ne!(
        std::fs::read(dir_a.path().join("train.jsonl")).unwrap(),
        std::fs::read(dir_c.path().join("train.jsonl")).unwrap()
    );
}

#[test]
fn default_dataset_is_valid_and_round_trips() {
    let cfg = SynthConfig::default();
    let data = generate_synthetic(&cfg).unwrap();
    assert_eq!((data.train.records.len(), data.val.records.len(), data.test.records.len()), (350, 75, 75));
    let dir = tempfile::tempdir().unwrap();
    data.write(dir.path()).unwrap();
    for (name, ds) in [("train", &data.train), ("val", &data.val), ("test", &data.test), ("contrast", &data.contrast)] {
        for r in &ds.records {
            validate_record(r, cfg.f, cfg.c).unwrap();
        }
        let back = read_dataset(&dir.path().join(format!("{name}.jsonl"))).unwrap();
        assert_eq!(back.records, ds.records, "{name}");
        assert_eq!((back.f, back.c, back.s), (cfg.f, cfg.c, cfg.s));
    }
}

#[test]
fn noiseless_union_features_sit_on_planted_centroids() {
    let cfg = SynthConfig { noise: 0.0, n_images: 200, ..Default::default() };
    let (data, records) = labelled(&cfg);
    let p = &data.planted;
    let fs = cfg.feature_scale;
    // one centroid per (relation, pair bit) in residual space
    let mut centroids = Vec::new();
    for r in 0..cfg.c {
        for e in [0.0, 1.0] {
            let v: Vec<f64> = (0..cfg.f)
                .map(|k| fs * (cfg.union_offset * p.relation_offsets[r][k] + e * cfg.pair_flip_offset * p.pair_flip_direction[k]))
                .collect();
            centroids.push((r, v));
        }
    }
    let (mut correct, mut total) = (0, 0);
    for rec in &records {
        for label in &rec.pair_labels {
            let [i, j] = label.pair;
            let u = rec.union_feature(i, j).unwrap();
            let residual: Vec<f64> = (0..cfg.f)
                .map(|k| u[k] - 0.5 * (rec.person_features[i][k] + rec.person_features[j][k]))
                .collect();
            let nearest = centroids
                .iter()
                .map(|(r, c)| (*r, c.iter().zip(&residual).map(|(a, b)| (a - b).powi(2)).sum::<f64>()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0;
            correct += (nearest == label.class) as usize;
            total += 1;
        }
    }
    assert!(total > 0);
    assert_eq!(correct, total);
}

/// P(relation = r) from the planted parameters, averaged over scenes.
fn planted_class_probs(cfg: &SynthConfig, data: &prise::data::synth::SyntheticData) -> Vec<f64> {
    let p = &data.planted;
    let mut out = vec![0.0; cfg.c];
    for s in 0..cfg.s {
        let prior = &p.person_class_probs[s];
        for (ki, pi) in prior.iter().enumerate() {
            for (kj, pj) in prior.iter().enumerate() {
                for (b, pb) in [(0, 1.0 - cfg.context_flip), (1, cfg.context_flip)] {
                    for (e, pe) in [(0, 1.0 - cfg.pair_flip), (1, cfg.pair_flip)] {
                        let r = (ki + kj + p.scene_shift[s] + b + e) % cfg.c;
                        out[r] += pi * pj * pb * pe / cfg.s as f64;
                    }
                }
            }
        }
    }
    out
}

#[test]
fn class_histogram_matches_the_planted_distribution() {
    let cfg = SynthConfig { n_images: 2000, contrast_images: 0, ..Default::default() };
    let (data, records) = labelled(&cfg);
    let probs = planted_class_probs(&cfg, &data);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let total: usize = records.iter().map(|r| r.pair_labels.len()).sum();
    for (class, &pr) in probs.iter().enumerate() {
        // pairs of one image share its scene and context bit, so the
        // variance is summed per image rather than taken as multinomial
        let mut count = 0.0;
        let mut var = 0.0;
        for r in &records {
            let m = r.pair_labels.len() as f64;
            let c = r.pair_labels.iter().filter(|l| l.class == class).count() as f64;
            count += c;
            var += (c - pr * m).powi(2);
        }
        let expected = pr * total as f64;
        let sigma = var.sqrt();
        assert!(
            (count - expected).abs() <= 3.0 * sigma,
            "class {class}: {count} vs {expected:.1} (sigma {sigma:.1})"
        );
    }
}

fn mutual_information(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut pa: BTreeMap<usize, f64> = BTreeMap::new();
    let mut pb: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0 / n;
        *pa.entry(x).or_default() += 1.0 / n;
        *pb.entry(y).or_default() += 1.0 / n;
    }
    joint.iter().map(|(&(x, y), &p)| p * (p / (pa[&x] * pb[&y])).ln()).sum()
}

#[test]
fn pseudo_labels_carry_scene_information() {
    let cfg = SynthConfig::default();
    let data = generate_synthetic(&cfg).unwrap();
    let records: Vec<&ImageRecord> = [&data.train, &data.val, &data.test, &data.contrast]
        .iter()
        .flat_map(|d| d.records.iter())
        .collect();
    let top1: Vec<usize> = records.iter().map(|r| r.pseudo_top5.as_ref().unwrap()[0] as usize).collect();
    let mut scenes: Vec<usize> = records.iter().map(|r| data.scene_of(&r.image_id).unwrap()).collect();
    let observed = mutual_information(&top1, &scenes);
    let mut r = rng(1, "mi-permutation");
    let shuffles = 999;
    let mut at_least = 0;
    for _ in 0..shuffles {
        scenes.shuffle(&mut r);
        at_least += (mutual_information(&top1, &scenes) >= observed) as usize;
    }
    let p_value = (1 + at_least) as f64 / (1 + shuffles) as f64;
    assert!(p_value < 0.01, "p = {p_value}, MI = {observed}");
}

#[test]
fn triplet_draws_are_uniform() {
    let pools = ContrastPools {
        ids: (0..9).map(|k| format!("i{k}")).collect(),
        similar: vec![vec![1, 2, 3, 4]; 9],
        dissimilar: vec![vec![5, 6, 7]; 9],
    };
    let draws = 10_000;
    let mut r = rng(3, "triplets");
    let mut pos = BTreeMap::new();
    let mut neg = BTreeMap::new();
    for _ in 0..draws {
        let t = pools.sample_triplet(0, &mut r).unwrap();
        *pos.entry(t.positive).or_insert(0usize) += 1;
        *neg.entry(t.negative).or_insert(0usize) += 1;
    }
    for (counts, k) in [(&pos, 4.0), (&neg, 3.0)] {
        assert_eq!(counts.len(), k as usize);
        let p = 1.0 / k;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (&id, &c) in counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sigma, "item {id}: {c} draws, expected {mean}");
        }
    }
}

#[test]
fn singleton_pools_force_the_triplet_and_seeds_repeat() {
    let pools = ContrastPools {
        ids: vec!["a".into(), "b".into(), "c".into()],
        similar: vec![vec![1], vec![0], vec![]],
        dissimilar: vec![vec![2], vec![2], vec![0, 1]],
    };
    let t = pools.sample_triplet_seeded(0, 11).unwrap();
    assert_eq!((t.positive, t.negative), (1, 2));
    assert!(pools.sample_triplet_seeded(2, 11).is_err());
    let mut r = rng(5, "x");
    let seed: u64 = r.random();
    let big = prise::scene::build_pools(
        &(0..200).map(|k| prise::scene::PseudoSceneLabels::new(format!("m{k}"), &[0, 1, 2, 3, 4]).unwrap()).collect::<Vec<_>>(),
        &PoolConfig { seed, ..Default::default() },
    )
    .unwrap();
    assert!(big.similar.iter().all(|p| p.len() == 50));
    assert_eq!(big.sample_triplet_seeded(7, seed).ok(), big.sample_triplet_seeded(7, seed).ok());
}
