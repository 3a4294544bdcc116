//! Seeded synthetic datasets with planted structure.
//!
//! Each image has a latent scene type `s`. Persons carry a latent class `k`
//! drawn from a scene-dependent prior, and the relation of a pair is
//! `(k_i + k_j + shift[s] + b + e_ij) mod C`: the interaction decides the
//! relation up to a scene-dependent shift, so the scene disambiguates otherwise
//! identical interactions. Two rarer bits give the remaining streams something
//! of their own: a per-image context bit `b` seen only by the background
//! feature and a per-pair bit `e_ij` seen only by the union feature.
//!
//! Person features are tight class-conditioned Gaussians; union features add a
//! weak, noisy relation offset to the mean of the two persons; the background
//! feature, the raw scene input and the pseudo top-5 labels are three
//! independent noisy views of `s`.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::record::{pairs, ImageRecord, PairLabel, UnionFeature};
use super::{write_dataset, Dataset};
use crate::error::{PriseError, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Labelled images, split 70/15/15 into train/val/test.
    pub n_images: usize,
    /// Unlabelled images for the contrastive scene task.
    pub contrast_images: usize,
    pub f: usize,
    pub c: usize,
    /// Latent scene types.
    pub s: usize,
    pub min_persons: usize,
    pub max_persons: usize,
    /// Global multiplier on every noise scale below.
    pub noise: f64,
    /// Multiplier on every emitted feature vector. Small values keep the
    /// unnormalised message sums of the RGCN in a moderate range.
    pub feature_scale: f64,
    pub person_noise: f64,
    pub union_noise: f64,
    pub union_offset: f64,
    pub background_noise: f64,
    pub scene_noise: f64,
    pub pseudo_noise: f64,
    /// Probability of the per-pair bit `e_ij`.
    pub pair_flip: f64,
    /// Length scale of the union-feature direction marking `e_ij`.
    pub pair_flip_offset: f64,
    /// Probability of the per-image context bit `b`.
    pub context_flip: f64,
    pub context_flip_offset: f64,
    /// Size of the pseudo scene-class vocabulary.
    pub pseudo_classes: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_images: 500,
            contrast_images: 1000,
            f: 32,
            c: 3,
            s: 4,
            min_persons: 2,
            max_persons: 5,
            noise: 1.0,
            feature_scale: 0.1,
            person_noise: 0.3,
            union_noise: 1.2,
            union_offset: 0.5,
            background_noise: 1.5,
            scene_noise: 1.0,
            pseudo_noise: 0.5,
            pair_flip: 0.05,
            pair_flip_offset: 1.0,
            context_flip: 0.1,
            context_flip_offset: 1.0,
            pseudo_classes: 20,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PriseError::Config(m));
        if self.c < 2 {
            return bad(format!("classes must be >= 2, got {}", self.c));
        }
        if self.s < 2 {
            return bad(format!("scene types must be >= 2, got {}", self.s));
        }
        if self.f < 4 {
            return bad(format!("feature dimension must be >= 4, got {}", self.f));
        }
        if self.min_persons < 1 || self.max_persons < self.min_persons {
            return bad(format!(
                "persons per image range [{}, {}] is invalid",
                self.min_persons, self.max_persons
            ));
        }
        if self.pseudo_classes < 5 {
            return bad("pseudo scene vocabulary must hold at least 5 classes".into());
        }
        if self.n_images == 0 {
            return bad("n_images must be >= 1".into());
        }
        let scales = [
            self.noise,
            self.feature_scale,
            self.person_noise,
            self.union_noise,
            self.union_offset,
            self.background_noise,
            self.scene_noise,
            self.pseudo_noise,
            self.pair_flip_offset,
            self.context_flip_offset,
        ];
        if scales.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("noise scales must be finite and non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.pair_flip) || !(0.0..=1.0).contains(&self.context_flip) {
            return bad("flip probabilities must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Generator parameters drawn once per seed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Planted {
    pub c: usize,
    pub person_means: Vec<Vec<f64>>,
    pub relation_offsets: Vec<Vec<f64>>,
    pub background_prototypes: Vec<Vec<f64>>,
    pub scene_prototypes: Vec<Vec<f64>>,
    /// Unit-variance directions marking `e_ij` in `x_ij` and `b` in `x_I`.
    pub pair_flip_direction: Vec<f64>,
    pub context_flip_direction: Vec<f64>,
    /// `person_class_probs[s][k]` = P(person class k | scene s).
    pub person_class_probs: Vec<Vec<f64>>,
    pub scene_shift: Vec<usize>,
    /// Pseudo scene classes favoured by each scene type.
    pub scene_blocks: Vec<Vec<u32>>,
}

impl Planted {
    pub fn relation(&self, k_i: usize, k_j: usize, scene: usize, context: bool, pair: bool) -> usize {
        (k_i + k_j + self.scene_shift[scene] + context as usize + pair as usize) % self.c
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub contrast: Dataset,
    pub planted: Planted,
    /// `(image_id, latent scene)` for every generated image.
    pub scenes: Vec<(String, usize)>,
}

impl SyntheticData {
    pub fn scene_of(&self, image_id: &str) -> Option<usize> {
        self.scenes
            .iter()
            .find(|(id, _)| id == image_id)
            .map(|(_, s)| *s)
    }

    /// Writes `train.jsonl`, `val.jsonl`, `test.jsonl`, `contrast.jsonl` and
    /// `scenes.tsv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| PriseError::io(dir, e))?;
        write_dataset(&dir.join("train.jsonl"), &self.train)?;
        write_dataset(&dir.join("val.jsonl"), &self.val)?;
        write_dataset(&dir.join("test.jsonl"), &self.test)?;
        write_dataset(&dir.join("contrast.jsonl"), &self.contrast)?;
        let mut tsv = String::from("image_id\tscene\n");
        for (id, s) in &self.scenes {
            tsv.push_str(&format!("{id}\t{s}\n"));
        }
        let path = dir.join("scenes.tsv");
        std::fs::write(&path, tsv).map_err(|e| PriseError::io(&path, e))
    }
}

fn gaussian_vec(rng: &mut impl Rng, f: usize, sd: f64) -> Vec<f64> {
    if sd == 0.0 {
        return vec![0.0; f];
    }
    let n = Normal::new(0.0, sd).expect("valid sd");
    (0..f).map(|_| n.sample(rng)).collect()
}

fn plant(cfg: &SynthConfig) -> Planted {
    let mut rng = seed::rng(cfg.seed, "synth/planted");
    let (f, c, s) = (cfg.f, cfg.c, cfg.s);
    let person_means = (0..c).map(|_| gaussian_vec(&mut rng, f, 1.0)).collect();
    let relation_offsets = (0..c).map(|_| gaussian_vec(&mut rng, f, 1.0)).collect();
    let background_prototypes = (0..s).map(|_| gaussian_vec(&mut rng, f, 1.0)).collect();
    let scene_prototypes = (0..s).map(|_| gaussian_vec(&mut rng, f, 1.0)).collect();
    let pair_flip_direction = gaussian_vec(&mut rng, f, 1.0);
    let context_flip_direction = gaussian_vec(&mut rng, f, 1.0);
    let person_class_probs = (0..s)
        .map(|si| {
            let w: Vec<f64> = (0..c).map(|k| if k == si % c { 2.0 } else { 1.0 }).collect();
            let total: f64 = w.iter().sum();
            w.into_iter().map(|v| v / total).collect()
        })
        .collect();
    let scene_shift = (0..s).map(|si| si % 2).collect();
    let v = cfg.pseudo_classes as u32;
    let scene_blocks = (0..s as u32)
        .map(|si| (0..5).map(|k| (si * 5 + k) % v).collect())
        .collect();
    Planted {
        c,
        person_means,
        relation_offsets,
        background_prototypes,
        scene_prototypes,
        pair_flip_direction,
        context_flip_direction,
        person_class_probs,
        scene_shift,
        scene_blocks,
    }
}

fn draw_categorical(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

fn top5(scores: &[f64]) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..scores.len() as u32).collect();
    idx.sort_by(|&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .unwrap()
            .then(a.cmp(&b))
    });
    idx.truncate(5);
    idx
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn image(
    cfg: &SynthConfig,
    planted: &Planted,
    rng: &mut impl Rng,
    image_id: String,
    labelled: bool,
) -> (ImageRecord, usize) {
    let f = cfg.f;
    let scene = rng.random_range(0..cfg.s);
    let n = rng.random_range(cfg.min_persons..=cfg.max_persons);
    let classes: Vec<usize> = (0..n)
        .map(|_| draw_categorical(rng, &planted.person_class_probs[scene]))
        .collect();
    let context = rng.random_bool(cfg.context_flip);

    let person_features: Vec<Vec<f64>> = classes
        .iter()
        .map(|&k| {
            let noise = gaussian_vec(rng, f, cfg.noise * cfg.person_noise);
            add(&planted.person_means[k], &noise)
        })
        .collect();
    let boxes = (0..n)
        .map(|_| {
            let x0: f64 = rng.random_range(0.0..0.8);
            let y0: f64 = rng.random_range(0.0..0.8);
            [x0, y0, x0 + 0.2, y0 + 0.2]
        })
        .collect();

    let mut union_features = Vec::new();
    let mut pair_labels = Vec::new();
    for (i, j) in pairs(n) {
        let flip = rng.random_bool(cfg.pair_flip);
        let rel = planted.relation(classes[i], classes[j], scene, context, flip);
        let marker = if flip { cfg.pair_flip_offset } else { 0.0 };
        let noise = gaussian_vec(rng, f, cfg.noise * cfg.union_noise);
        let feature = (0..f)
            .map(|k| {
                0.5 * (person_features[i][k] + person_features[j][k])
                    + cfg.union_offset * planted.relation_offsets[rel][k]
                    + marker * planted.pair_flip_direction[k]
                    + noise[k]
            })
            .collect();
        union_features.push(UnionFeature {
            pair: [i, j],
            feature,
        });
        if labelled {
            pair_labels.push(PairLabel {
                pair: [i, j],
                class: rel,
            });
        }
    }

    let bg_noise = gaussian_vec(rng, f, cfg.noise * cfg.background_noise);
    let marker = if context { cfg.context_flip_offset } else { 0.0 };
    let background_feature: Vec<f64> = add(&planted.background_prototypes[scene], &bg_noise)
        .into_iter()
        .zip(&planted.context_flip_direction)
        .map(|(v, d)| v + marker * d)
        .collect();
    let scene_noise = gaussian_vec(rng, f, cfg.noise * cfg.scene_noise);
    let raw_scene_input = planted.scene_prototypes[scene]
        .iter()
        .zip(&scene_noise)
        .map(|(p, e)| (p + e).max(0.0))
        .collect();

    let pseudo_noise = gaussian_vec(rng, cfg.pseudo_classes, cfg.noise * cfg.pseudo_noise);
    let scores: Vec<f64> = (0..cfg.pseudo_classes)
        .map(|v| {
            let favoured = planted.scene_blocks[scene].contains(&(v as u32));
            if favoured { 2.0 } else { 0.0 }
        })
        .zip(&pseudo_noise)
        .map(|(a, b)| a + b)
        .collect();

    let k = cfg.feature_scale;
    let scale = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|x| x * k).collect() };
    let record = ImageRecord {
        image_id,
        n_persons: n,
        boxes,
        person_features: person_features.into_iter().map(scale).collect(),
        union_features: union_features
            .into_iter()
            .map(|u| UnionFeature {
                pair: u.pair,
                feature: scale(u.feature),
            })
            .collect(),
        background_feature: scale(background_feature),
        raw_scene_input: Some(scale(raw_scene_input)),
        pseudo_top5: Some(top5(&scores)),
        pair_labels,
    };
    (record, scene)
}

/// Generates the full synthetic bundle; a pure function of `cfg`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let planted = plant(cfg);
    let mut scenes = Vec::new();

    let mut rng = seed::rng(cfg.seed, "synth/images/labelled");
    let mut labelled = Vec::with_capacity(cfg.n_images);
    for k in 0..cfg.n_images {
        let (r, s) = image(cfg, &planted, &mut rng, format!("img-{k:06}"), true);
        scenes.push((r.image_id.clone(), s));
        labelled.push(r);
    }
    let mut rng = seed::rng(cfg.seed, "synth/images/contrast");
    let mut contrast = Vec::with_capacity(cfg.contrast_images);
    for k in 0..cfg.contrast_images {
        let (r, s) = image(cfg, &planted, &mut rng, format!("ctr-{k:06}"), false);
        scenes.push((r.image_id.clone(), s));
        contrast.push(r);
    }

    let n_train = (cfg.n_images * 70) / 100;
    let n_val = (cfg.n_images * 15) / 100;
    let test = labelled.split_off((n_train + n_val).min(labelled.len()));
    let val = labelled.split_off(n_train.min(labelled.len()));
    let ds = |records| Dataset {
        f: cfg.f,
        c: cfg.c,
        s: cfg.s,
        records,
    };
    Ok(SyntheticData {
        train: ds(labelled),
        val: ds(val),
        test: ds(test),
        contrast: ds(contrast),
        planted,
        scenes,
    })
}
