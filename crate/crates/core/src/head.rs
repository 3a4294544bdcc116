//! Pair-feature assembly, the MLP classifier and the relation loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{pairs, ImageRecord};
use crate::error::{PriseError, Result};
use crate::numeric::{softmax, NumericError, ParamId, ParamStore, Tape, Tensor, Var, LOG_CLAMP};
use crate::rgcn::GraphState;

/// One pair's fused input `r_ij ‖ x_ij ‖ x_I ‖ x'_I`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairFeature {
    pub pair: (usize, usize),
    pub fused: Vec<f64>,
}

/// Full four-block features for every pair of `record`, in pair order.
pub fn assemble_pair_features(
    state: &GraphState,
    record: &ImageRecord,
    scene: &[f64],
) -> Result<Vec<PairFeature>> {
    let f = record.background_feature.len();
    if scene.len() != f {
        return Err(PriseError::validation(
            &record.image_id,
            "scene_feature",
            format!("dimension {} != F = {f}", scene.len()),
        ));
    }
    pairs(record.n_persons)
        .into_iter()
        .map(|(i, j)| {
            let x_ij = record.union_feature(i, j).ok_or_else(|| {
                PriseError::validation(
                    &record.image_id,
                    "union_features",
                    format!("missing union feature for pair ({i},{j})"),
                )
            })?;
            let mut fused = Vec::with_capacity(4 * f);
            fused.extend_from_slice(state.fused_edge(i, j));
            fused.extend_from_slice(x_ij);
            fused.extend_from_slice(&record.background_feature);
            fused.extend_from_slice(scene);
            Ok(PairFeature { pair: (i, j), fused })
        })
        .collect()
}

pub const HIDDEN_WEIGHT: &str = "head.hidden.weight";
pub const HIDDEN_BIAS: &str = "head.hidden.bias";
pub const OUTPUT_WEIGHT: &str = "head.output.weight";
pub const OUTPUT_BIAS: &str = "head.output.bias";

/// `hidden = relu(W1 x + b1)`, `logits = W2 hidden + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    /// `F_h × D`
    pub hidden_weight: Tensor,
    /// `1 × F_h`
    pub hidden_bias: Tensor,
    /// `C × F_h`
    pub output_weight: Tensor,
    /// `1 × C`
    pub output_bias: Tensor,
}

fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::matrix(rows, cols, data).expect("consistent shape")
}

impl MlpParams {
    pub fn random(input: usize, hidden: usize, classes: usize, rng: &mut impl Rng) -> Self {
        Self {
            hidden_weight: glorot(hidden, input, rng),
            hidden_bias: Tensor::zeros(&[1, hidden]),
            output_weight: glorot(classes, hidden, rng),
            output_bias: Tensor::zeros(&[1, classes]),
        }
    }

    pub fn zeros(input: usize, hidden: usize, classes: usize) -> Self {
        Self {
            hidden_weight: Tensor::zeros(&[hidden, input]),
            hidden_bias: Tensor::zeros(&[1, hidden]),
            output_weight: Tensor::zeros(&[classes, hidden]),
            output_bias: Tensor::zeros(&[1, classes]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden_weight.cols()
    }

    pub fn classes(&self) -> usize {
        self.output_weight.rows()
    }

    pub fn validate(&self) -> Result<(), NumericError> {
        let h = self.hidden_weight.rows();
        let c = self.output_weight.rows();
        let ok = self.hidden_bias.shape() == [1, h]
            && self.output_weight.shape() == [c, h]
            && self.output_bias.shape() == [1, c];
        if !ok {
            return Err(NumericError::ShapeMismatch {
                op: "mlp",
                left: self.hidden_weight.shape().to_vec(),
                right: self.output_weight.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn register(&self, store: &mut ParamStore) -> MlpIds {
        MlpIds {
            hidden_weight: store.insert(HIDDEN_WEIGHT, self.hidden_weight.clone()),
            hidden_bias: store.insert(HIDDEN_BIAS, self.hidden_bias.clone()),
            output_weight: store.insert(OUTPUT_WEIGHT, self.output_weight.clone()),
            output_bias: store.insert(OUTPUT_BIAS, self.output_bias.clone()),
        }
    }

    pub fn from_store(store: &ParamStore) -> Result<Self, NumericError> {
        let ids = MlpIds::from_store(store)?;
        Ok(Self {
            hidden_weight: store.get(ids.hidden_weight).clone(),
            hidden_bias: store.get(ids.hidden_bias).clone(),
            output_weight: store.get(ids.output_weight).clone(),
            output_bias: store.get(ids.output_bias).clone(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpIds {
    pub hidden_weight: ParamId,
    pub hidden_bias: ParamId,
    pub output_weight: ParamId,
    pub output_bias: ParamId,
}

impl MlpIds {
    pub fn from_store(store: &ParamStore) -> Result<Self, NumericError> {
        Ok(Self {
            hidden_weight: store.require(HIDDEN_WEIGHT)?,
            hidden_bias: store.require(HIDDEN_BIAS)?,
            output_weight: store.require(OUTPUT_WEIGHT)?,
            output_bias: store.require(OUTPUT_BIAS)?,
        })
    }

    pub fn all(&self) -> [ParamId; 4] {
        [self.hidden_weight, self.hidden_bias, self.output_weight, self.output_bias]
    }
}

/// Plain forward for one fused vector; returns `(logits, probabilities)`.
pub fn mlp_forward(fused: &[f64], params: &MlpParams) -> Result<(Vec<f64>, Vec<f64>), NumericError> {
    params.validate()?;
    if fused.len() != params.input_dim() {
        return Err(NumericError::ShapeMismatch {
            op: "mlp_forward",
            left: vec![fused.len()],
            right: params.hidden_weight.shape().to_vec(),
        });
    }
    let x = Tensor::vector(fused.to_vec());
    let h = params.hidden_weight.matvec(&x)?;
    let h: Vec<f64> = h
        .data()
        .iter()
        .zip(params.hidden_bias.data())
        .map(|(a, b)| (a + b).max(0.0))
        .collect();
    let z = params.output_weight.matvec(&Tensor::vector(h))?;
    let logits: Vec<f64> = z.data().iter().zip(params.output_bias.data()).map(|(a, b)| a + b).collect();
    let probs = softmax(&logits);
    Ok((logits, probs))
}

/// Tape forward over `M × D` rows; returns `M × C` logits.
pub fn mlp_forward_tape(tape: &mut Tape, store: &ParamStore, ids: MlpIds, x: Var) -> Result<Var, NumericError> {
    let mut p = |id: ParamId| tape.param(id, store.get(id).clone());
    let (w1, b1, w2, b2) = (p(ids.hidden_weight), p(ids.hidden_bias), p(ids.output_weight), p(ids.output_bias));
    let w1t = tape.transpose(w1)?;
    let h = tape.affine(x, w1t, b1)?;
    let h = tape.relu(h);
    let w2t = tape.transpose(w2)?;
    tape.affine(h, w2t, b2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairPrediction {
    pub pair: (usize, usize),
    pub probs: Vec<f64>,
    pub argmax: usize,
}

/// Class distributions for every pair of one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationPrediction {
    pub image_id: String,
    pub n_persons: usize,
    pub pairs: Vec<PairPrediction>,
}

impl RelationPrediction {
    pub fn from_probabilities(image_id: &str, n_persons: usize, probs: &Tensor) -> Self {
        let pairs = pairs(n_persons)
            .into_iter()
            .enumerate()
            .map(|(k, pair)| {
                let p = probs.row_slice(k).to_vec();
                PairPrediction {
                    pair,
                    argmax: crate::metrics::argmax(&p),
                    probs: p,
                }
            })
            .collect();
        Self {
            image_id: image_id.to_string(),
            n_persons,
            pairs,
        }
    }

    /// Lookup in either index order.
    pub fn get(&self, i: usize, j: usize) -> Option<&PairPrediction> {
        if i == j || i.max(j) >= self.n_persons {
            return None;
        }
        self.pairs.get(crate::data::pair_index(i, j, self.n_persons))
    }

    /// `image_id pair_i pair_j p_0 .. p_{C-1} argmax` per pair.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&format!("{} {} {}", self.image_id, p.pair.0, p.pair.1));
            for v in &p.probs {
                out.push_str(&format!(" {v}"));
            }
            out.push_str(&format!(" {}\n", p.argmax));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Every pair must carry a label.
    Strict,
    /// Unlabelled pairs are skipped and counted.
    #[default]
    Lenient,
}

/// Per-pair targets in pair order under `mode`; returns the targets and the
/// number of excluded pairs.
pub fn pair_targets(record: &ImageRecord, mode: LabelMode) -> Result<(Vec<Option<usize>>, usize)> {
    let labels = record.labels_in_order();
    let missing = labels.iter().filter(|l| l.is_none()).count();
    if missing > 0 && mode == LabelMode::Strict {
        let (i, j) = pairs(record.n_persons)[labels.iter().position(Option::is_none).expect("one missing")];
        return Err(PriseError::validation(
            &record.image_id,
            "pair_labels",
            format!("pair ({i},{j}) is unlabelled (strict label mode)"),
        ));
    }
    Ok((labels, missing))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub excluded: usize,
}

/// Weighted mean NLL of the labelled pairs, from probabilities.
pub fn classification_loss(
    predictions: &[RelationPrediction],
    records: &[ImageRecord],
    class_weights: Option<&[f64]>,
    mode: LabelMode,
) -> Result<LossValue> {
    if predictions.len() != records.len() {
        return Err(PriseError::Data(format!(
            "{} predictions for {} records",
            predictions.len(),
            records.len()
        )));
    }
    let mut total = 0.0;
    let mut weight_sum = 0.0;
    let mut excluded = 0;
    for (pred, rec) in predictions.iter().zip(records) {
        if pred.image_id != rec.image_id || pred.pairs.len() != pairs(rec.n_persons).len() {
            return Err(PriseError::Data(format!("prediction does not match record {}", rec.image_id)));
        }
        let (targets, missing) = pair_targets(rec, mode)?;
        excluded += missing;
        for (p, t) in pred.pairs.iter().zip(targets) {
            let Some(t) = t else { continue };
            if t >= p.probs.len() {
                return Err(PriseError::validation(&rec.image_id, "pair_labels", "class out of range"));
            }
            let w = class_weights.map_or(1.0, |w| w[t]);
            total += -w * p.probs[t].max(LOG_CLAMP).ln();
            weight_sum += w;
        }
    }
    if weight_sum <= 0.0 {
        return Err(PriseError::Data("classification loss: no labelled pairs".into()));
    }
    Ok(LossValue {
        value: total / weight_sum,
        excluded,
    })
}
