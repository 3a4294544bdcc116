//! The full relation model: enabled streams, their parameters and the head.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::data::{pairs, ImageRecord};
use crate::error::{PriseError, Result};
use crate::head::{mlp_forward_tape, MlpIds, MlpParams, RelationPrediction};
use crate::numeric::{ParamId, ParamStore, Precision, Tape, Tensor, Var};
use crate::rgcn::{RgcnIds, RgcnParams};
use crate::scene::{raw_scene_input, EncoderIds, SceneEncoderParams};
use crate::seed;
use crate::streams::{BatchContext, SceneEncoder, SCENE_ENCODERS, STREAMS};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Disabled streams are left out and the MLP input shrinks.
    #[default]
    Remove,
    /// Disabled streams keep their slot, filled with zeros.
    ZeroFill,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub f: usize,
    pub c: usize,
    pub rgcn_depth: usize,
    pub hidden: usize,
    /// Enabled stream names.
    pub streams: Vec<String>,
    #[serde(default)]
    pub mask_mode: MaskMode,
    pub scene_encoder: String,
    #[serde(default)]
    pub precision: Precision,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.f == 0 || self.c < 2 || self.hidden == 0 {
            return Err(PriseError::Config(format!(
                "model needs F >= 1, C >= 2 and a hidden width >= 1 (F = {}, C = {}, hidden = {})",
                self.f, self.c, self.hidden
            )));
        }
        if self.streams.is_empty() {
            return Err(PriseError::Config("at least one feature stream must be enabled".into()));
        }
        for s in &self.streams {
            STREAMS.get(s)?;
        }
        SCENE_ENCODERS.get(&self.scene_encoder)?;
        Ok(())
    }

    /// Enabled flag per registered stream, in canonical order.
    pub fn enabled_mask(&self) -> Result<Vec<bool>> {
        let mut mask = vec![false; STREAMS.all().len()];
        for s in &self.streams {
            mask[STREAMS.position(s)?] = true;
        }
        Ok(mask)
    }

    pub fn input_dim(&self) -> Result<usize> {
        let blocks = match self.mask_mode {
            MaskMode::Remove => self.enabled_mask()?.iter().filter(|&&e| e).count(),
            MaskMode::ZeroFill => STREAMS.all().len(),
        };
        Ok(blocks * self.f)
    }

    /// Block names in the order they appear in the MLP input.
    pub fn concat_order(&self) -> Result<Vec<String>> {
        let mask = self.enabled_mask()?;
        Ok(STREAMS
            .all()
            .iter()
            .zip(mask)
            .filter_map(|(s, on)| match (on, self.mask_mode) {
                (true, _) => Some(s.name().to_string()),
                (false, MaskMode::ZeroFill) => Some(format!("{}:zero", s.name())),
                (false, MaskMode::Remove) => None,
            })
            .collect())
    }

    pub fn encoder(&self) -> Result<&'static dyn SceneEncoder> {
        SCENE_ENCODERS.get(&self.scene_encoder)
    }
}

#[derive(Clone, Debug)]
pub struct PriseModel {
    pub spec: ModelSpec,
    pub params: ParamStore,
}

/// Logits for all pairs of a batch plus the pair row offset of each image.
pub struct BatchLogits {
    pub logits: Var,
    pub offsets: Vec<usize>,
}

impl PriseModel {
    /// Fresh parameters. A contrast-trained encoder is required when the
    /// scene stream is enabled with an encoder that has parameters.
    pub fn init(spec: ModelSpec, encoder: Option<&SceneEncoderParams>, seed_value: u64) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        RgcnParams::random(spec.f, spec.rgcn_depth, &mut seed::rng(seed_value, "model/rgcn")).register(&mut params);
        let scene_on = spec.enabled_mask()?[STREAMS.position("scene")?];
        if spec.encoder()?.has_params() {
            let enc = match encoder {
                Some(e) => e.clone(),
                None if scene_on => {
                    return Err(PriseError::Config(
                        "scene stream with a contrast-trained encoder needs a scene encoder checkpoint".into(),
                    ))
                }
                None => SceneEncoderParams::identity(spec.f),
            };
            if enc.feature_dim() != spec.f {
                return Err(PriseError::Config(format!(
                    "scene encoder has F = {}, model has F = {}",
                    enc.feature_dim(),
                    spec.f
                )));
            }
            enc.register(&mut params);
        }
        MlpParams::random(spec.input_dim()?, spec.hidden, spec.c, &mut seed::rng(seed_value, "model/head"))
            .register(&mut params);
        Ok(Self { spec, params })
    }

    pub fn new_tape(&self) -> Tape {
        Tape::with_precision(self.spec.precision)
    }

    pub fn rgcn_ids(&self) -> Result<RgcnIds> {
        Ok(RgcnIds::from_store(&self.params, self.spec.rgcn_depth)?)
    }

    pub fn head_ids(&self) -> Result<MlpIds> {
        Ok(MlpIds::from_store(&self.params)?)
    }

    pub fn encoder_ids(&self) -> Option<EncoderIds> {
        EncoderIds::from_store(&self.params).ok()
    }

    /// Parameters updated by training; the scene encoder only if unfrozen.
    pub fn trainable(&self, unfreeze_scene: bool) -> Result<Vec<ParamId>> {
        let mut ids = self.rgcn_ids()?.all();
        if unfreeze_scene {
            if let Some(e) = self.encoder_ids() {
                ids.extend(e.all());
            }
        }
        ids.extend(self.head_ids()?.all());
        Ok(ids)
    }

    /// Records the forward pass of a batch; `None` if it has no pairs.
    pub fn forward(&self, tape: &mut Tape, records: &[&ImageRecord]) -> Result<Option<BatchLogits>> {
        let mut owner = Vec::new();
        let mut offsets = Vec::with_capacity(records.len());
        for (b, r) in records.iter().enumerate() {
            offsets.push(owner.len());
            owner.extend(std::iter::repeat_n(b, pairs(r.n_persons).len()));
        }
        if owner.is_empty() {
            return Ok(None);
        }
        let total = owner.len();
        let mask = self.spec.enabled_mask()?;
        let mut cx = BatchContext {
            tape,
            store: &self.params,
            records,
            f: self.spec.f,
            rgcn_depth: self.spec.rgcn_depth,
            scene_encoder: self.spec.encoder()?,
            owner: Arc::from(owner),
        };
        let mut blocks = Vec::with_capacity(mask.len());
        for (stream, on) in STREAMS.all().iter().zip(mask) {
            let block: Option<Var> = match (on, self.spec.mask_mode) {
                (true, _) => Some(stream.block(&mut cx)?),
                (false, MaskMode::ZeroFill) => Some(cx.tape.leaf(Tensor::zeros(&[total, self.spec.f]))),
                (false, MaskMode::Remove) => None,
            };
            blocks.extend(block);
        }
        let x = cx.tape.concat_cols(&blocks)?;
        let logits = mlp_forward_tape(cx.tape, &self.params, self.head_ids()?, x)?;
        Ok(Some(BatchLogits { logits, offsets }))
    }

    pub fn predict_image(&self, record: &ImageRecord) -> Result<RelationPrediction> {
        let mut tape = self.new_tape();
        let Some(out) = self.forward(&mut tape, &[record])? else {
            log::warn!("image {} has a single person; no pairs to predict", record.image_id);
            return Ok(RelationPrediction::from_probabilities(
                &record.image_id,
                record.n_persons,
                &Tensor::zeros(&[0, self.spec.c]),
            ));
        };
        let probs = tape.value(out.logits).softmax_rows()?;
        Ok(RelationPrediction::from_probabilities(&record.image_id, record.n_persons, &probs))
    }

    /// Per-image predictions, computed in parallel; order follows `records`.
    pub fn predict(&self, records: &[ImageRecord]) -> Result<Vec<RelationPrediction>> {
        records.par_iter().map(|r| self.predict_image(r)).collect()
    }

    /// The scene feature this model feeds its head for `record`.
    pub fn scene_feature(&self, record: &ImageRecord) -> Result<Tensor> {
        Ok(self.spec.encoder()?.encode_one(&self.params, raw_scene_input(record)?)?)
    }

    pub fn to_checkpoint(&self, epoch: usize, config: serde_json::Value, history: serde_json::Value) -> Result<Checkpoint> {
        let config = serde_json::json!({ "model": self.spec, "train": config });
        Ok(Checkpoint {
            meta: CheckpointMeta {
                kind: "prise".into(),
                epoch,
                config,
                history,
                concat_order: self.spec.concat_order()?,
            },
            params: self.params.clone(),
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.meta.kind != "prise" {
            return Err(PriseError::Data(format!(
                "expected a relation-model checkpoint, found kind `{}`",
                ckpt.meta.kind
            )));
        }
        let spec: ModelSpec = serde_json::from_value(ckpt.meta.config["model"].clone())
            .map_err(|e| PriseError::Data(format!("checkpoint model spec: {e}")))?;
        spec.validate()?;
        if spec.concat_order()? != ckpt.meta.concat_order {
            return Err(PriseError::Data(format!(
                "checkpoint concatenation order {:?} does not match its spec {:?}",
                ckpt.meta.concat_order,
                spec.concat_order()?
            )));
        }
        let model = Self {
            spec,
            params: ckpt.params.clone(),
        };
        model.rgcn_ids()?.params(&model.params).validate()?;
        let head = MlpParams::from_store(&model.params)?;
        head.validate()?;
        if head.input_dim() != model.spec.input_dim()? || head.classes() != model.spec.c {
            return Err(PriseError::Data("checkpoint head shape does not match its spec".into()));
        }
        Ok(model)
    }
}
