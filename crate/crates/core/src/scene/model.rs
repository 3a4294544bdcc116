use crate::data::ImageRecord;
use crate::error::{PriseError, Result};
use crate::numeric::{sigmoid, NumericError, ParamId, ParamStore, Tape, Tensor, Var, LOG_CLAMP};

pub const ENCODER_WEIGHT: &str = "scene.encoder.weight";
pub const ENCODER_BIAS: &str = "scene.encoder.bias";
pub const SCORER_WEIGHT: &str = "scene.scorer.weight";

/// `s = sigmoid(xᵀ W y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BilinearScorer {
    pub weight: Tensor,
}

impl BilinearScorer {
    pub fn zeros(f: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[f, f]),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn logit(&self, x: &[f64], y: &[f64]) -> Result<f64, NumericError> {
        let f = self.feature_dim();
        if self.weight.shape() != [f, f] || x.len() != f || y.len() != f {
            return Err(NumericError::ShapeMismatch {
                op: "bilinear_score",
                left: vec![x.len(), y.len()],
                right: self.weight.shape().to_vec(),
            });
        }
        let mut acc = 0.0;
        for (a, xa) in x.iter().enumerate() {
            let row = self.weight.row_slice(a);
            acc += xa * row.iter().zip(y).map(|(w, yb)| w * yb).sum::<f64>();
        }
        Ok(acc)
    }

    pub fn score(&self, x: &[f64], y: &[f64]) -> Result<f64, NumericError> {
        self.logit(x, y).map(sigmoid)
    }
}

pub fn bilinear_score(x: &[f64], y: &[f64], scorer: &BilinearScorer) -> Result<f64, NumericError> {
    scorer.score(x, y)
}

/// Row-wise scores `sigmoid(x_bᵀ W y_b)` for `B × F` inputs; result is `B × 1`.
pub fn bilinear_score_rows(tape: &mut Tape, x: Var, w: Var, y: Var) -> Result<Var, NumericError> {
    let xw = tape.matmul(x, w)?;
    let prod = tape.mul(xw, y)?;
    let z = tape.row_sums(prod)?;
    Ok(tape.sigmoid(z))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContrastLoss {
    pub value: f64,
    /// Scores that had to be clamped before the log.
    pub clamped: usize,
}

/// Mean over triplets of `−log s_pos − log(1 − s_neg)`.
pub fn contrastive_loss(scores: &[(f64, f64)]) -> Result<ContrastLoss> {
    if scores.is_empty() {
        return Err(PriseError::Data("contrastive loss over an empty batch".into()));
    }
    let mut clamped = 0;
    let mut clamp = |s: f64| {
        if !s.is_finite() {
            return Err(PriseError::Training(format!("non-finite score {s}")));
        }
        if !(LOG_CLAMP..=1.0 - LOG_CLAMP).contains(&s) {
            clamped += 1;
        }
        Ok(s.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP))
    };
    let mut total = 0.0;
    for &(p, n) in scores {
        let (p, n) = (clamp(p)?, clamp(n)?);
        total += -p.ln() - (1.0 - n).ln();
    }
    if clamped > 0 {
        log::warn!("contrastive loss: {clamped} score(s) clamped");
    }
    Ok(ContrastLoss {
        value: total / scores.len() as f64,
        clamped,
    })
}

/// Tape version over `B × 1` positive and negative score columns.
pub fn contrastive_loss_tape(tape: &mut Tape, s_pos: Var, s_neg: Var) -> Result<Var, NumericError> {
    let b = tape.value(s_pos).len();
    if b == 0 {
        return Err(NumericError::EmptyInput { op: "contrastive_loss" });
    }
    if tape.value(s_neg).len() != b {
        return Err(NumericError::ShapeMismatch {
            op: "contrastive_loss",
            left: tape.value(s_pos).shape().to_vec(),
            right: tape.value(s_neg).shape().to_vec(),
        });
    }
    let both = tape.concat_rows(&[s_pos, s_neg])?;
    let mut targets = vec![1.0; b];
    targets.resize(2 * b, 0.0);
    let total = tape.bce_sum(both, &targets)?;
    Ok(tape.scale(total, 1.0 / b as f64))
}

/// Affine map plus ReLU on the raw scene vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneEncoderParams {
    pub weight: Tensor,
    /// `1 × F`
    pub bias: Tensor,
}

impl SceneEncoderParams {
    pub fn identity(f: usize) -> Self {
        Self {
            weight: Tensor::identity(f),
            bias: Tensor::zeros(&[1, f]),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn from_store(store: &ParamStore) -> Result<Self, NumericError> {
        Ok(Self {
            weight: store.get(store.require(ENCODER_WEIGHT)?).clone(),
            bias: store.get(store.require(ENCODER_BIAS)?).clone(),
        })
    }

    pub fn register(&self, store: &mut ParamStore) -> EncoderIds {
        EncoderIds {
            weight: store.insert(ENCODER_WEIGHT, self.weight.clone()),
            bias: store.insert(ENCODER_BIAS, self.bias.clone()),
        }
    }

    pub fn encode(&self, raw: &[f64]) -> Result<Tensor, NumericError> {
        let f = self.feature_dim();
        if raw.len() != f {
            return Err(NumericError::ShapeMismatch {
                op: "scene_encoder",
                left: self.weight.shape().to_vec(),
                right: vec![raw.len()],
            });
        }
        let out = self.weight.matvec(&Tensor::vector(raw.to_vec()))?;
        let out: Vec<f64> = out
            .data()
            .iter()
            .zip(self.bias.data())
            .map(|(a, b)| (a + b).max(0.0))
            .collect();
        Ok(Tensor::vector(out))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderIds {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl EncoderIds {
    pub fn from_store(store: &ParamStore) -> Result<Self, NumericError> {
        Ok(Self {
            weight: store.require(ENCODER_WEIGHT)?,
            bias: store.require(ENCODER_BIAS)?,
        })
    }

    pub fn all(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// Encodes `B × F` raw rows on the tape: `relu(R Wᵀ + b)`.
pub fn encode_rows(tape: &mut Tape, store: &ParamStore, ids: EncoderIds, raw: Var) -> Result<Var, NumericError> {
    let w = tape.param(ids.weight, store.get(ids.weight).clone());
    let w_t = tape.transpose(w)?;
    let b = tape.param(ids.bias, store.get(ids.bias).clone());
    let z = tape.affine(raw, w_t, b)?;
    Ok(tape.relu(z))
}

pub fn raw_scene_input(record: &ImageRecord) -> Result<&[f64]> {
    record.raw_scene_input.as_deref().ok_or_else(|| {
        PriseError::validation(&record.image_id, "raw_scene_input", "missing scene input")
    })
}

/// The discriminative scene feature of one record.
pub fn extract_scene_feature(record: &ImageRecord, encoder: &SceneEncoderParams) -> Result<Tensor> {
    Ok(encoder.encode(raw_scene_input(record)?)?)
}
