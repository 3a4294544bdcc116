//! Relation-model training, evaluation and the ablation harness.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{Dataset, ImageRecord};
use crate::error::{PriseError, Result};
use crate::head::{pair_targets, LabelMode, RelationPrediction};
use crate::metrics::{MetricReport, ScoredPrediction};
use crate::model::{MaskMode, ModelSpec, PriseModel};
use crate::numeric::{AdamConfig, AdamState, Precision};
use crate::registry::{Named, Registry};
use crate::scene::SceneEncoderParams;
use crate::seed;
use crate::streams::STREAMS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Images per batch; all pairs of an image share its batch.
    pub batch_size: usize,
    pub rgcn_depth: usize,
    pub hidden: usize,
    pub seed: u64,
    pub streams: Vec<String>,
    pub mask_mode: MaskMode,
    pub scene_encoder: String,
    pub unfreeze_scene: bool,
    pub class_weights: Option<Vec<f64>>,
    pub label_mode: LabelMode,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            epochs: 20,
            batch_size: 32,
            rgcn_depth: 2,
            hidden: 256,
            seed: 7,
            streams: STREAMS.names().into_iter().map(str::to_string).collect(),
            mask_mode: MaskMode::Remove,
            scene_encoder: "contrast_finetuned".into(),
            unfreeze_scene: false,
            class_weights: None,
            label_mode: LabelMode::Lenient,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is accepted: it leaves every parameter untouched
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(PriseError::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(PriseError::Config("epochs and batch size must be >= 1".into()));
        }
        if let Some(w) = &self.class_weights {
            if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(PriseError::Config("class weights must be finite and >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn model_spec(&self, f: usize, c: usize) -> ModelSpec {
        ModelSpec {
            f,
            c,
            rgcn_depth: self.rgcn_depth,
            hidden: self.hidden,
            streams: self.streams.clone(),
            mask_mode: self.mask_mode,
            scene_encoder: self.scene_encoder.clone(),
            precision: self.precision,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_map: f64,
    pub excluded_pairs: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation accuracy.
    pub best: PriseModel,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub config: TrainConfig,
}

impl TrainOutcome {
    pub fn best_val_accuracy(&self) -> f64 {
        self.history[self.best_epoch - 1].val_accuracy
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        self.best.to_checkpoint(
            self.best_epoch,
            serde_json::to_value(&self.config).expect("config serializes"),
            serde_json::to_value(&self.history).expect("history serializes"),
        )
    }
}

fn check_compatible(a: &Dataset, b: &Dataset) -> Result<()> {
    if a.f != b.f || a.c != b.c {
        return Err(PriseError::Data(format!(
            "datasets disagree on shape: F {} vs {}, C {} vs {}",
            a.f, b.f, a.c, b.c
        )));
    }
    Ok(())
}

/// Mini-batch Adam over whole images, keeping the best-validation epoch.
pub fn train_prise(
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    encoder: Option<&SceneEncoderParams>,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_compatible(train, val)?;
    if train.records.is_empty() || val.records.is_empty() {
        return Err(PriseError::Data("training and validation sets must be non-empty".into()));
    }
    if let Some(w) = &cfg.class_weights {
        if w.len() != train.c {
            return Err(PriseError::Config(format!("{} class weights for C = {}", w.len(), train.c)));
        }
    }
    let mut model = PriseModel::init(cfg.model_spec(train.f, train.c), encoder, cfg.seed)?;
    let trainable = model.trainable(cfg.unfreeze_scene)?;
    let mut adam = AdamState::new(&model.params, AdamConfig::with_lr(cfg.lr));
    let targets = train
        .records
        .iter()
        .map(|r| pair_targets(r, cfg.label_mode))
        .collect::<Result<Vec<_>>>()?;
    let excluded: usize = targets.iter().map(|t| t.1).sum();
    if excluded > 0 {
        log::info!("{excluded} unlabelled training pairs excluded from the loss");
    }

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, PriseModel)> = None;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.records.len()).collect();
        order.shuffle(&mut seed::rng(cfg.seed, &format!("train/epoch{epoch}")));
        let mut loss_sum = 0.0;
        let mut loss_weight = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let records: Vec<&ImageRecord> = batch.iter().map(|&k| &train.records[k]).collect();
            let batch_targets: Vec<Option<usize>> = batch.iter().flat_map(|&k| targets[k].0.iter().copied()).collect();
            let labelled = batch_targets.iter().filter(|t| t.is_some()).count();
            if labelled == 0 {
                continue;
            }
            let mut tape = model.new_tape();
            let Some(out) = model.forward(&mut tape, &records)? else { continue };
            let loss = tape.cross_entropy(out.logits, &batch_targets, cfg.class_weights.as_deref())?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(PriseError::Training(format!(
                    "non-finite training loss in epoch {epoch} (batch starting at image {})",
                    train.records[batch[0]].image_id
                )));
            }
            let grads = tape.backward(loss)?;
            adam.step(&mut model.params, &grads, &trainable)?;
            loss_sum += value * labelled as f64;
            loss_weight += labelled;
        }
        let (report, _) = evaluate(&model, val)?;
        let record = EpochRecord {
            epoch,
            train_loss: if loss_weight > 0 { loss_sum / loss_weight as f64 } else { f64::NAN },
            val_accuracy: report.accuracy,
            val_map: report.map,
            excluded_pairs: excluded,
        };
        log::info!(
            "epoch {epoch}: train loss {:.6} val acc {:.4} val mAP {:.4}",
            record.train_loss,
            record.val_accuracy,
            record.val_map
        );
        if best.as_ref().is_none_or(|b| record.val_accuracy > b.1) {
            best = Some((epoch, record.val_accuracy, model.clone()));
        }
        on_epoch(&record)?;
        history.push(record);
    }
    let (best_epoch, _, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        history,
        config: cfg.clone(),
    })
}

/// Scored pairs for every labelled pair of `records`.
pub fn scored_pairs(predictions: &[RelationPrediction], records: &[ImageRecord]) -> Result<Vec<ScoredPrediction>> {
    let mut out = Vec::new();
    for (p, r) in predictions.iter().zip(records) {
        for (pp, label) in p.pairs.iter().zip(r.labels_in_order()) {
            if let Some(t) = label {
                out.push(ScoredPrediction::new(t, pp.probs.clone())?);
            }
        }
    }
    Ok(out)
}

/// Metrics of `model` on `data` plus the raw predictions.
pub fn evaluate(model: &PriseModel, data: &Dataset) -> Result<(MetricReport, Vec<RelationPrediction>)> {
    if data.c != model.spec.c || data.f != model.spec.f {
        return Err(PriseError::Data(format!(
            "checkpoint expects F = {}, C = {}; dataset has F = {}, C = {}",
            model.spec.f, model.spec.c, data.f, data.c
        )));
    }
    let preds = model.predict(&data.records)?;
    let scored = scored_pairs(&preds, &data.records)?;
    Ok((MetricReport::compute(&scored, data.c)?, preds))
}

pub fn evaluate_checkpoint(ckpt: &Checkpoint, data: &Dataset) -> Result<(MetricReport, Vec<RelationPrediction>)> {
    evaluate(&PriseModel::from_checkpoint(ckpt)?, data)
}

/// One row of the ablation table: a transformation of the base config.
pub trait AblationVariant: Named + Send + Sync {
    /// Row label.
    fn label(&self) -> &'static str;

    fn configure(&self, base: &TrainConfig) -> TrainConfig;
}

struct Full;
struct Without(&'static str, &'static str, &'static str);
struct Pretrained;

impl Named for Full {
    fn name(&self) -> &'static str {
        "full"
    }
    fn aliases(&self) -> &'static [&'static str] {
        &["prise"]
    }
}

impl AblationVariant for Full {
    fn label(&self) -> &'static str {
        "PRISE"
    }
    fn configure(&self, base: &TrainConfig) -> TrainConfig {
        base.clone()
    }
}

impl Named for Without {
    fn name(&self) -> &'static str {
        self.0
    }
}

impl AblationVariant for Without {
    fn label(&self) -> &'static str {
        self.1
    }
    fn configure(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        let drop = STREAMS.get(self.2).expect("registered stream").name();
        cfg.streams.retain(|s| STREAMS.get(s).map(|x| x.name()).ok() != Some(drop));
        cfg
    }
}

impl Named for Pretrained {
    fn name(&self) -> &'static str {
        "pretrained"
    }
    fn aliases(&self) -> &'static [&'static str] {
        &["raw_scene"]
    }
}

impl AblationVariant for Pretrained {
    fn label(&self) -> &'static str {
        "PRISE|Pretrained"
    }
    fn configure(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            scene_encoder: "raw_pretrained_analogue".into(),
            ..base.clone()
        }
    }
}

pub static VARIANTS: Registry<dyn AblationVariant> = Registry::new(
    "ablation variant",
    &[
        &Full,
        &Without("no_interactive", "w/o Int.", "interactive"),
        &Without("no_scene", "w/o Scene", "scene"),
        &Without("no_foreground", "w/o Fore.", "foreground"),
        &Without("no_background", "w/o Back.", "background"),
        &Pretrained,
    ],
);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub label: String,
    /// Evaluation accuracy per repeat.
    pub accuracy: Vec<f64>,
    pub map: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub map_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub repeats: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// Tab-separated table: label, mean ± std accuracy, mean mAP.
    pub fn to_text(&self) -> String {
        let mut out = format!("variant\taccuracy_mean\taccuracy_std\tmap_mean\trepeats={}\n", self.repeats);
        for r in &self.rows {
            out.push_str(&format!("{}\t{:.4}\t{:.4}\t{:.4}\n", r.label, r.mean, r.std, r.map_mean));
        }
        out
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub repeats: usize,
    /// Worker threads; 1 runs every job in order.
    pub workers: usize,
    pub variants: Vec<String>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            repeats: 5,
            workers: 1,
            variants: VARIANTS.names().into_iter().map(str::to_string).collect(),
        }
    }
}

/// Trains every variant `repeats` times (seed `base.seed + r`) and scores
/// the best-validation model of each run on `eval`.
pub fn ablation_run(
    train: &Dataset,
    val: &Dataset,
    eval: &Dataset,
    base: &TrainConfig,
    encoder: Option<&SceneEncoderParams>,
    cfg: &AblationConfig,
) -> Result<AblationTable> {
    if cfg.repeats == 0 {
        return Err(PriseError::Config("ablation needs at least one repeat".into()));
    }
    let variants = cfg
        .variants
        .iter()
        .map(|v| VARIANTS.get(v))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|v| (0..cfg.repeats as u64).map(move |r| (v, r)))
        .collect();
    let run = |&(v, r): &(usize, u64)| -> Result<(f64, f64)> {
        let mut c = variants[v].configure(base);
        c.seed = base.seed.wrapping_add(r);
        let outcome = train_prise(train, val, &c, encoder, |_| Ok(()))?;
        let (report, _) = evaluate(&outcome.best, eval)?;
        log::info!("ablation {} seed {}: accuracy {:.4}", variants[v].label(), c.seed, report.accuracy);
        Ok((report.accuracy, report.map))
    };
    let results: Vec<(f64, f64)> = if cfg.workers <= 1 {
        jobs.iter().map(run).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| PriseError::Config(format!("thread pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(run).collect::<Result<_>>())?
    };
    let rows = variants
        .iter()
        .enumerate()
        .map(|(v, variant)| {
            let mine: Vec<(f64, f64)> = jobs
                .iter()
                .zip(&results)
                .filter(|((jv, _), _)| *jv == v)
                .map(|(_, r)| *r)
                .collect();
            let accuracy: Vec<f64> = mine.iter().map(|r| r.0).collect();
            let map: Vec<f64> = mine.iter().map(|r| r.1).collect();
            let (mean, std) = mean_std(&accuracy);
            AblationRow {
                variant: variant.name().to_string(),
                label: variant.label().to_string(),
                map_mean: mean_std(&map).0,
                accuracy,
                map,
                mean,
                std,
            }
        })
        .collect();
    Ok(AblationTable {
        repeats: cfg.repeats,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_variants_with_paper_labels() {
        let labels: Vec<_> = VARIANTS.all().iter().map(|v| v.label()).collect();
        assert_eq!(
            labels,
            ["PRISE", "w/o Int.", "w/o Scene", "w/o Fore.", "w/o Back.", "PRISE|Pretrained"]
        );
        let base = TrainConfig::default();
        let c = VARIANTS.get("no_scene").unwrap().configure(&base);
        assert_eq!(c.streams, ["interactive", "foreground", "background"]);
        let c = VARIANTS.get("pretrained").unwrap().configure(&base);
        assert_eq!(c.scene_encoder, "raw_pretrained_analogue");
        assert_eq!(c.streams.len(), 4);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { lr: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        TrainConfig { lr: 0.0, ..Default::default() }.validate().unwrap();
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
