use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{
    bilinear_score_rows, contrastive_loss_tape, encode_rows, raw_scene_input, BilinearScorer,
    EncoderIds, SceneEncoderParams, SCORER_WEIGHT,
};
use super::pools::{build_pools, labels_from_records, ContrastPools, PoolConfig, Triplet};
use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::data::ImageRecord;
use crate::error::{PriseError, Result};
use crate::metrics::auc;
use crate::numeric::{AdamConfig, AdamState, ParamId, ParamStore, Tape, Tensor};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub pools: PoolConfig,
    /// Share of images held out for accuracy/AUC.
    pub holdout_fraction: f64,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            epochs: 20,
            batch_size: 32,
            seed: 7,
            pools: PoolConfig::default(),
            holdout_fraction: 0.2,
        }
    }
}

impl ContrastConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(PriseError::Config(format!("contrast lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(PriseError::Config("contrast epochs and batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(PriseError::Config("holdout fraction must be in [0, 1)".into()));
        }
        self.pools.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub heldout_accuracy: f64,
    pub heldout_auc: f64,
    pub triplets: usize,
    pub skipped: usize,
    pub clamped: usize,
}

/// Pools plus the trained encoder and scorer parameters.
#[derive(Clone, Debug)]
pub struct ContrastState {
    pub pools: ContrastPools,
    pub params: ParamStore,
    pub history: Vec<ContrastEpoch>,
    pub config: ContrastConfig,
}

impl ContrastState {
    pub fn encoder(&self) -> Result<SceneEncoderParams> {
        Ok(SceneEncoderParams::from_store(&self.params)?)
    }

    pub fn scorer(&self) -> Result<BilinearScorer> {
        let id = self.params.require(SCORER_WEIGHT)?;
        Ok(BilinearScorer {
            weight: self.params.get(id).clone(),
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                kind: "contrast".into(),
                epoch: self.history.len(),
                config: serde_json::to_value(&self.config).expect("config serializes"),
                history: serde_json::to_value(&self.history).expect("history serializes"),
                concat_order: Vec::new(),
            },
            params: self.params.clone(),
        }
    }
}

pub fn initial_params(f: usize) -> ParamStore {
    let mut store = ParamStore::new();
    SceneEncoderParams::identity(f).register(&mut store);
    store.insert(SCORER_WEIGHT, BilinearScorer::zeros(f).weight);
    store
}

fn raw_matrix(records: &[&ImageRecord], f: usize) -> Result<Tensor> {
    let rows = records
        .iter()
        .map(|r| raw_scene_input(r).map(<[f64]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::from_rows(&rows, f)?)
}

/// Mean loss, positive and negative scores for a triplet batch.
struct BatchOut {
    loss: f64,
    pos: Vec<f64>,
    neg: Vec<f64>,
}

fn triplet_forward(
    tape: &mut Tape,
    store: &ParamStore,
    ids: EncoderIds,
    scorer: ParamId,
    raw: &Tensor,
    batch: &[Triplet],
) -> Result<(crate::numeric::Var, BatchOut)> {
    let b = batch.len();
    let idx: Vec<usize> = batch
        .iter()
        .map(|t| t.anchor)
        .chain(batch.iter().map(|t| t.positive))
        .chain(batch.iter().map(|t| t.negative))
        .collect();
    let stacked = tape.leaf(raw.gather_rows(&idx)?);
    let enc = encode_rows(tape, store, ids, stacked)?;
    let block = |k: usize| -> Arc<[usize]> { (k * b..(k + 1) * b).collect() };
    let xa = tape.gather_rows(enc, block(0))?;
    let xp = tape.gather_rows(enc, block(1))?;
    let xn = tape.gather_rows(enc, block(2))?;
    let w = tape.param(scorer, store.get(scorer).clone());
    let sp = bilinear_score_rows(tape, xa, w, xp)?;
    let sn = bilinear_score_rows(tape, xa, w, xn)?;
    let loss = contrastive_loss_tape(tape, sp, sn)?;
    let out = BatchOut {
        loss: tape.value(loss).item(),
        pos: tape.value(sp).to_vec(),
        neg: tape.value(sn).to_vec(),
    };
    Ok((loss, out))
}

/// Splits images into train/held-out index sets with a seeded shuffle.
pub fn holdout_split(n: usize, fraction: f64, seed_value: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed_value, "contrast/split"));
    let n_hold = (n as f64 * fraction).round() as usize;
    let mut hold = order[..n_hold].to_vec();
    let mut train = order[n_hold..].to_vec();
    hold.sort_unstable();
    train.sort_unstable();
    (train, hold)
}

/// Held-out triplet evaluation: accuracy at threshold 0.5 and AUC.
pub fn evaluate_triplets(
    params: &ParamStore,
    raw: &Tensor,
    triplets: &[Triplet],
) -> Result<(f64, f64)> {
    if triplets.is_empty() {
        return Err(PriseError::Data("no held-out triplets to evaluate".into()));
    }
    let ids = EncoderIds::from_store(params)?;
    let scorer = params.require(SCORER_WEIGHT)?;
    let mut tape = Tape::new();
    let (_, out) = triplet_forward(&mut tape, params, ids, scorer, raw, triplets)?;
    let correct = out.pos.iter().filter(|&&s| s > 0.5).count() + out.neg.iter().filter(|&&s| s < 0.5).count();
    let scores: Vec<f64> = out.pos.iter().chain(&out.neg).copied().collect();
    let labels: Vec<bool> = (0..scores.len()).map(|k| k < out.pos.len()).collect();
    Ok((correct as f64 / scores.len() as f64, auc(&scores, &labels)?))
}

/// Trains encoder and scorer on `records`. `on_epoch` runs after every
/// completed epoch (the CLI uses it to save checkpoints), so a later
/// non-finite loss leaves the last good checkpoint in place.
pub fn train_contrast(
    records: &[ImageRecord],
    cfg: &ContrastConfig,
    mut on_epoch: impl FnMut(&ContrastState) -> Result<()>,
) -> Result<ContrastState> {
    cfg.validate()?;
    let first = records
        .first()
        .ok_or_else(|| PriseError::Data("contrastive training set is empty".into()))?;
    let f = raw_scene_input(first)?.len();
    let labels = labels_from_records(records)?;
    let (train_idx, hold_idx) = holdout_split(records.len(), cfg.holdout_fraction, cfg.seed);

    let pick = |idx: &[usize]| idx.iter().map(|&k| &records[k]).collect::<Vec<_>>();
    let train_records = pick(&train_idx);
    let hold_records = pick(&hold_idx);
    let pool_cfg = PoolConfig {
        seed: seed::sub_seed(cfg.seed, "contrast/pools"),
        ..cfg.pools
    };
    let train_pools = build_pools(
        &train_idx.iter().map(|&k| labels[k].clone()).collect::<Vec<_>>(),
        &pool_cfg,
    )?;
    let hold_pools = build_pools(
        &hold_idx.iter().map(|&k| labels[k].clone()).collect::<Vec<_>>(),
        &pool_cfg,
    )?;
    let train_raw = raw_matrix(&train_records, f)?;
    let hold_raw = raw_matrix(&hold_records, f)?;
    let anchors: Vec<usize> = (0..train_pools.len()).collect();
    let (hold_triplets, hold_skipped) = hold_pools.sample_all(
        &(0..hold_pools.len()).collect::<Vec<_>>(),
        &mut seed::rng(cfg.seed, "contrast/heldout"),
    );
    if !hold_skipped.is_empty() {
        log::info!("held-out evaluation skips {} anchors with an empty pool", hold_skipped.len());
    }

    let mut state = ContrastState {
        pools: train_pools,
        params: initial_params(f),
        history: Vec::new(),
        config: cfg.clone(),
    };
    let ids = EncoderIds::from_store(&state.params)?;
    let scorer = state.params.require(SCORER_WEIGHT)?;
    let trainable = [ids.weight, ids.bias, scorer];
    let mut adam = AdamState::new(&state.params, AdamConfig::with_lr(cfg.lr));

    for epoch in 1..=cfg.epochs {
        let mut rng = seed::rng(cfg.seed, &format!("contrast/epoch{epoch}"));
        let mut order = anchors.clone();
        order.shuffle(&mut rng);
        let (triplets, skipped) = state.pools.sample_all(&order, &mut rng);
        if triplets.is_empty() {
            return Err(PriseError::Data("every anchor has an empty pool; check K".into()));
        }
        let mut loss_sum = 0.0;
        let mut clamped = 0;
        for batch in triplets.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let (loss, out) = triplet_forward(&mut tape, &state.params, ids, scorer, &train_raw, batch)?;
            if !out.loss.is_finite() {
                return Err(PriseError::Training(format!(
                    "non-finite contrastive loss in epoch {epoch}; last good epoch {}",
                    epoch - 1
                )));
            }
            let grads = tape.backward(loss)?;
            adam.step(&mut state.params, &grads, &trainable)?;
            loss_sum += out.loss * batch.len() as f64;
            clamped += tape.clamp_warnings();
        }
        if clamped > 0 {
            log::warn!("epoch {epoch}: {clamped} contrastive score(s) clamped");
        }
        let (acc, auc_v) = if hold_triplets.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            evaluate_triplets(&state.params, &hold_raw, &hold_triplets)?
        };
        let record = ContrastEpoch {
            epoch,
            loss: loss_sum / triplets.len() as f64,
            heldout_accuracy: acc,
            heldout_auc: auc_v,
            triplets: triplets.len(),
            skipped: skipped.len(),
            clamped,
        };
        log::info!(
            "contrast epoch {epoch}: loss {:.6} held-out acc {:.4} auc {:.4} ({} skipped)",
            record.loss,
            acc,
            auc_v,
            record.skipped
        );
        state.history.push(record);
        on_epoch(&state)?;
    }
    Ok(state)
}
