//! The four per-pair feature streams and the scene encoder strategies.

use std::sync::Arc;

use crate::data::{pairs, ImageRecord};
use crate::error::{PriseError, Result};
use crate::numeric::{NumericError, ParamStore, Tape, Tensor, Var};
use crate::registry::{Named, Registry};
use crate::rgcn::{build_graph, rgcn_forward_tape, RgcnIds, RgcnVars};
use crate::scene::{encode_rows, raw_scene_input, EncoderIds, SceneEncoderParams};

/// Everything a stream may read while building its block for one batch.
pub struct BatchContext<'a> {
    pub tape: &'a mut Tape,
    pub store: &'a ParamStore,
    pub records: &'a [&'a ImageRecord],
    pub f: usize,
    pub rgcn_depth: usize,
    pub scene_encoder: &'static dyn SceneEncoder,
    /// Batch image index of every pair row.
    pub owner: Arc<[usize]>,
}

impl BatchContext<'_> {
    pub fn total_pairs(&self) -> usize {
        self.owner.len()
    }

    /// Stacks one `F`-vector per image and repeats it for each of its pairs.
    fn repeated(&mut self, per_image: Var) -> Result<Var> {
        Ok(self.tape.gather_rows(per_image, self.owner.clone())?)
    }

    fn image_rows(&self, field: &str, get: impl Fn(&ImageRecord) -> Result<&[f64]>) -> Result<Tensor> {
        let rows = self
            .records
            .iter()
            .map(|r| get(r).map(<[f64]>::to_vec))
            .collect::<Result<Vec<_>>>()?;
        Tensor::from_rows(&rows, self.f).map_err(|e| PriseError::Data(format!("{field}: {e}")))
    }
}

/// One block of the fused pair vector: `total_pairs × F`.
pub trait FeatureStream: Named + Send + Sync {
    fn block(&self, cx: &mut BatchContext<'_>) -> Result<Var>;
}

/// `r_ij` from the RGCN.
pub struct Interactive;
/// `x_ij`, the union-box feature.
pub struct Foreground;
/// `x_I`, repeated per pair.
pub struct Background;
/// `x'_I` from the scene encoder, repeated per pair.
pub struct Scene;

impl Named for Interactive {
    fn name(&self) -> &'static str {
        "interactive"
    }
    fn aliases(&self) -> &'static [&'static str] {
        &["int", "r"]
    }
}

impl FeatureStream for Interactive {
    fn block(&self, cx: &mut BatchContext<'_>) -> Result<Var> {
        let ids = RgcnIds::from_store(cx.store, cx.rgcn_depth)?;
        let vars = RgcnVars::from_store(cx.tape, cx.store, &ids)?;
        let mut parts = Vec::with_capacity(cx.records.len());
        for r in cx.records {
            if r.n_persons < 2 {
                continue;
            }
            let graph = build_graph(r)?;
            parts.push(rgcn_forward_tape(cx.tape, &graph, &vars)?.fused);
        }
        Ok(cx.tape.concat_rows(&parts)?)
    }
}

impl Named for Foreground {
    fn name(&self) -> &'static str {
        "foreground"
    }
    fn aliases(&self) -> &'static [&'static str] {
        &["fore", "union"]
    }
}

impl FeatureStream for Foreground {
    fn block(&self, cx: &mut BatchContext<'_>) -> Result<Var> {
        let mut rows = Vec::with_capacity(cx.total_pairs());
        for r in cx.records {
            for (i, j) in pairs(r.n_persons) {
                let x = r.union_feature(i, j).ok_or_else(|| {
                    PriseError::validation(
                        &r.image_id,
                        "union_features",
                        format!("missing union feature for pair ({i},{j})"),
                    )
                })?;
                rows.push(x.to_vec());
            }
        }
        let t = Tensor::from_rows(&rows, cx.f)?;
        Ok(cx.tape.leaf(t))
    }
}

impl Named for Background {
    fn name(&self) -> &'static str {
        "background"
    }
    fn aliases(&self) -> &'static [&'static str] {
        &["back", "bg"]
    }
}

impl FeatureStream for Background {
    fn block(&self, cx: &mut BatchContext<'_>) -> Result<Var> {
        let t = cx.image_rows("background_feature", |r| Ok(&r.background_feature))?;
        let v = cx.tape.leaf(t);
        cx.repeated(v)
    }
}

impl Named for Scene {
    fn name(&self) -> &'static str {
        "scene"
    }
}

impl FeatureStream for Scene {
    fn block(&self, cx: &mut BatchContext<'_>) -> Result<Var> {
        let raw = cx.image_rows("raw_scene_input", raw_scene_input)?;
        let raw = cx.tape.leaf(raw);
        let enc = cx.scene_encoder.encode(cx.tape, cx.store, raw)?;
        cx.repeated(enc)
    }
}

/// Canonical concatenation order `r_ij ‖ x_ij ‖ x_I ‖ x'_I`.
pub static STREAMS: Registry<dyn FeatureStream> =
    Registry::new("feature stream", &[&Interactive, &Foreground, &Background, &Scene]);

/// Maps raw whole-image scene inputs to scene features.
pub trait SceneEncoder: Named + Send + Sync {
    /// `B × F` raw rows to `B × F` features.
    fn encode(&self, tape: &mut Tape, store: &ParamStore, raw: Var) -> Result<Var, NumericError>;

    fn encode_one(&self, store: &ParamStore, raw: &[f64]) -> Result<Tensor, NumericError>;

    /// Whether the model must carry encoder parameters.
    fn has_params(&self) -> bool;
}

/// The contrastively trained affine + ReLU encoder.
pub struct ContrastFinetuned;
/// Raw scene input used as is (no contrastive training).
pub struct RawPretrainedAnalogue;

impl Named for ContrastFinetuned {
    fn name(&self) -> &'static str {
        "contrast_finetuned"
    }
    fn aliases(&self) -> &'static [&'static str] {
        &["contrast", "finetuned"]
    }
}

impl SceneEncoder for ContrastFinetuned {
    fn encode(&self, tape: &mut Tape, store: &ParamStore, raw: Var) -> Result<Var, NumericError> {
        encode_rows(tape, store, EncoderIds::from_store(store)?, raw)
    }

    fn encode_one(&self, store: &ParamStore, raw: &[f64]) -> Result<Tensor, NumericError> {
        SceneEncoderParams::from_store(store)?.encode(raw)
    }

    fn has_params(&self) -> bool {
        true
    }
}

impl Named for RawPretrainedAnalogue {
    fn name(&self) -> &'static str {
        "raw_pretrained_analogue"
    }
    fn aliases(&self) -> &'static [&'static str] {
        &["raw", "pretrained"]
    }
}

impl SceneEncoder for RawPretrainedAnalogue {
    fn encode(&self, _tape: &mut Tape, _store: &ParamStore, raw: Var) -> Result<Var, NumericError> {
        Ok(raw)
    }

    fn encode_one(&self, _store: &ParamStore, raw: &[f64]) -> Result<Tensor, NumericError> {
        Ok(Tensor::vector(raw.to_vec()))
    }

    fn has_params(&self) -> bool {
        false
    }
}

pub static SCENE_ENCODERS: Registry<dyn SceneEncoder> =
    Registry::new("scene encoder", &[&ContrastFinetuned, &RawPretrainedAnalogue]);
