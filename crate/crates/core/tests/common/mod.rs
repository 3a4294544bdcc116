//! Shared fixtures and the measurable checks behind both the focused test
//! files and the acceptance report. Each check returns its measurement so the
//! caller decides how to assert or print it.

#![allow(dead_code)]

use prise::data::{pairs, ImageRecord, PairLabel, UnionFeature};
use prise::head::{mlp_forward_tape, MlpParams};
use prise::metrics::{average_precision, auc, check_accuracy_identity, mean_average_precision, accuracy, per_class_recall, ScoredPrediction};
use prise::model::{MaskMode, ModelSpec, PriseModel};
use prise::numeric::finite_diff::{numeric_gradient, relative_error};
use prise::numeric::{ParamId, ParamStore, Precision, Tape, Tensor, Var};
use prise::rgcn::{build_graph, rgcn_forward, rgcn_forward_tape, RgcnIds, RgcnParams, RgcnVars};
use prise::scene::{bilinear_score_rows, contrastive_loss_tape, encode_rows, EncoderIds, SceneEncoderParams};
use prise::seed;
use rand::Rng;

pub type TestRng = prise::seed::Rng;

pub fn rng(seed_value: u64, label: &str) -> TestRng {
    seed::rng(seed_value, label)
}

pub fn gaussian(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect()
}

pub fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::matrix(rows, cols, gaussian(rng, rows * cols, scale)).unwrap()
}

/// A well-formed random record with `n` persons, feature dim `f`, `c`
/// classes and a pseudo top-5 list.
pub fn random_record(rng: &mut impl Rng, id: &str, n: usize, f: usize, c: usize) -> ImageRecord {
    let person_features = (0..n).map(|_| gaussian(rng, f, 1.0)).collect();
    let union_features = pairs(n)
        .into_iter()
        .map(|(i, j)| UnionFeature {
            pair: [i, j],
            feature: gaussian(rng, f, 1.0),
        })
        .collect();
    let pair_labels = pairs(n)
        .into_iter()
        .map(|(i, j)| PairLabel {
            pair: [i, j],
            class: rng.random_range(0..c),
        })
        .collect();
    let mut top5: Vec<u32> = Vec::new();
    while top5.len() < 5 {
        let v = rng.random_range(0..12);
        if !top5.contains(&v) {
            top5.push(v);
        }
    }
    ImageRecord {
        image_id: id.to_string(),
        n_persons: n,
        boxes: vec![[0.0, 0.0, 1.0, 1.0]; n],
        person_features,
        union_features,
        background_feature: gaussian(rng, f, 1.0),
        raw_scene_input: Some(gaussian(rng, f, 1.0).into_iter().map(f64::abs).collect()),
        pseudo_top5: Some(top5),
        pair_labels,
    }
}

pub fn all_streams() -> Vec<String> {
    ["interactive", "foreground", "background", "scene"].map(String::from).to_vec()
}

pub fn small_spec(f: usize, c: usize, depth: usize, hidden: usize) -> ModelSpec {
    ModelSpec {
        f,
        c,
        rgcn_depth: depth,
        hidden,
        streams: all_streams(),
        mask_mode: MaskMode::Remove,
        scene_encoder: "contrast_finetuned".into(),
        precision: Precision::F64,
    }
}

pub fn random_encoder(rng: &mut impl Rng, f: usize) -> SceneEncoderParams {
    SceneEncoderParams {
        weight: random_tensor(rng, f, f, 0.8),
        bias: random_tensor(rng, 1, f, 0.3),
    }
}

// ---------------------------------------------------------------- gradients

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
const FD_FLOOR: f64 = 1e-6;

/// Largest relative error between the tape gradient and central finite
/// differences over every parameter of `store`. `build` must read all
/// parameters through `tape.param` and return a scalar.
pub fn gradient_error(store: &ParamStore, build: impl Fn(&mut Tape, &ParamStore) -> Var) -> f64 {
    let mut tape = Tape::new();
    let loss = build(&mut tape, store);
    let grads = tape.backward(loss).unwrap();
    let eval = |s: &ParamStore| {
        let mut t = Tape::new();
        let l = build(&mut t, s);
        t.value(l).item()
    };
    let mut worst: f64 = 0.0;
    for id in store.ids().collect::<Vec<_>>() {
        let analytic = grads
            .param(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
        let numeric = numeric_gradient(store, id, FD_STEP, eval);
        worst = worst.max(relative_error(&analytic, &numeric, FD_FLOOR));
    }
    worst
}

fn param(tape: &mut Tape, store: &ParamStore, id: ParamId) -> Var {
    tape.param(id, store.get(id).clone())
}

/// `Σ out ⊙ C` for a fixed random `C`, so every output element matters.
fn project(tape: &mut Tape, out: Var, coeff: &Tensor) -> Var {
    let c = tape.leaf(coeff.clone());
    let p = tape.mul(out, c).unwrap();
    tape.sum(p)
}

fn rgcn_case(seed_value: u64) -> (ParamStore, RgcnIds, prise::rgcn::PersonGraph) {
    let mut r = rng(seed_value, "fd/rgcn");
    let n = r.random_range(2..=5);
    let f = r.random_range(2..=4);
    let depth = r.random_range(0..=2);
    let mut store = ParamStore::new();
    let ids = RgcnParams::random(f, depth, &mut r).register(&mut store);
    let feats: Vec<Vec<f64>> = (0..n).map(|_| gaussian(&mut r, f, 1.0)).collect();
    let graph = prise::rgcn::PersonGraph::from_features("fd", &feats).unwrap();
    (store, ids, graph)
}

/// Which RGCN output a gradient check differentiates.
#[derive(Clone, Copy, Debug)]
pub enum RgcnOutput {
    /// `r^0` only (the edge update on the input projection).
    FirstEdges,
    /// `h^T` (node updates).
    LastNodes,
    /// `max_t r^t`.
    Fused,
}

pub fn rgcn_gradient_error(seed_value: u64, which: RgcnOutput) -> f64 {
    let (store, ids, graph) = rgcn_case(seed_value);
    let mut r = rng(seed_value, "fd/rgcn/coeff");
    let f = graph.feature_dim();
    let rows = match which {
        RgcnOutput::LastNodes => graph.n_persons(),
        _ => graph.edges().len(),
    };
    let coeff = random_tensor(&mut r, rows, f, 1.0);
    gradient_error(&store, |tape, s| {
        let vars = RgcnVars::from_store(tape, s, &ids).unwrap();
        let st = rgcn_forward_tape(tape, &graph, &vars).unwrap();
        let out = match which {
            RgcnOutput::FirstEdges => st.edges[0],
            RgcnOutput::LastNodes => *st.nodes.last().unwrap(),
            RgcnOutput::Fused => st.fused,
        };
        project(tape, out, &coeff)
    })
}

pub fn bilinear_gradient_error(seed_value: u64) -> f64 {
    let mut r = rng(seed_value, "fd/bilinear");
    let b = r.random_range(1..=4);
    let f = r.random_range(2..=5);
    let mut store = ParamStore::new();
    let x = store.insert("x", random_tensor(&mut r, b, f, 1.0));
    let w = store.insert("w", random_tensor(&mut r, f, f, 0.5));
    let y = store.insert("y", random_tensor(&mut r, b, f, 1.0));
    let coeff = random_tensor(&mut r, b, 1, 1.0);
    gradient_error(&store, |tape, s| {
        let (xv, wv, yv) = (param(tape, s, x), param(tape, s, w), param(tape, s, y));
        let out = bilinear_score_rows(tape, xv, wv, yv).unwrap();
        project(tape, out, &coeff)
    })
}

/// Encoder, bilinear scorer and the contrastive loss end to end.
pub fn contrast_loss_gradient_error(seed_value: u64) -> f64 {
    let mut r = rng(seed_value, "fd/contrast");
    let b = r.random_range(1..=4);
    let f = r.random_range(2..=4);
    let mut store = ParamStore::new();
    random_encoder(&mut r, f).register(&mut store);
    let w = store.insert("w", random_tensor(&mut r, f, f, 0.5));
    let raw: Vec<Tensor> = (0..3).map(|_| random_tensor(&mut r, b, f, 1.0).map(f64::abs)).collect();
    gradient_error(&store, |tape, s| {
        let enc = EncoderIds::from_store(s).unwrap();
        let rows: Vec<Var> = raw
            .iter()
            .map(|t| {
                let leaf = tape.leaf(t.clone());
                encode_rows(tape, s, enc, leaf).unwrap()
            })
            .collect();
        let wv = param(tape, s, w);
        let sp = bilinear_score_rows(tape, rows[0], wv, rows[1]).unwrap();
        let sn = bilinear_score_rows(tape, rows[0], wv, rows[2]).unwrap();
        contrastive_loss_tape(tape, sp, sn).unwrap()
    })
}

pub fn mlp_gradient_error(seed_value: u64) -> f64 {
    let mut r = rng(seed_value, "fd/mlp");
    let m = r.random_range(1..=4);
    let d = r.random_range(2..=6);
    let h = r.random_range(2..=6);
    let c = r.random_range(2..=4);
    let mut store = ParamStore::new();
    let ids = MlpParams::random(d, h, c, &mut r).register(&mut store);
    let x = store.insert("x", random_tensor(&mut r, m, d, 1.0));
    let coeff = random_tensor(&mut r, m, c, 1.0);
    gradient_error(&store, |tape, s| {
        let xv = param(tape, s, x);
        let out = mlp_forward_tape(tape, s, ids, xv).unwrap();
        project(tape, out, &coeff)
    })
}

pub fn classification_gradient_error(seed_value: u64) -> f64 {
    let mut r = rng(seed_value, "fd/ce");
    let m = r.random_range(1..=6);
    let c = r.random_range(2..=5);
    let mut store = ParamStore::new();
    let z = store.insert("logits", random_tensor(&mut r, m, c, 2.0));
    let mut targets: Vec<Option<usize>> = (0..m).map(|_| Some(r.random_range(0..c))).collect();
    if m > 1 && r.random_bool(0.5) {
        targets[0] = None;
    }
    let weights: Option<Vec<f64>> = r.random_bool(0.5).then(|| (0..c).map(|_| r.random_range(0.2..2.0)).collect());
    gradient_error(&store, |tape, s| {
        let zv = param(tape, s, z);
        tape.cross_entropy(zv, &targets, weights.as_deref()).unwrap()
    })
}

/// Full relation model on a small batch: RGCN, the four-block fusion, the
/// MLP and the classification loss, with the encoder trainable.
pub fn model_gradient_error(seed_value: u64) -> f64 {
    let mut r = rng(seed_value, "fd/model");
    let f = r.random_range(2..=3);
    let c = r.random_range(2..=3);
    let depth = r.random_range(0..=2);
    let spec = small_spec(f, c, depth, 4);
    let enc = random_encoder(&mut r, f);
    let model = PriseModel::init(spec.clone(), Some(&enc), seed_value).unwrap();
    let records: Vec<ImageRecord> = (0..2)
        .map(|k| {
            let n = r.random_range(2..=4);
            random_record(&mut r, &format!("m{k}"), n, f, c)
        })
        .collect();
    let targets: Vec<Option<usize>> = records.iter().flat_map(|x| x.labels_in_order()).collect();
    gradient_error(&model.params, |tape, s| {
        let m = PriseModel {
            spec: spec.clone(),
            params: s.clone(),
        };
        let refs: Vec<&ImageRecord> = records.iter().collect();
        let out = m.forward(tape, &refs).unwrap().unwrap();
        tape.cross_entropy(out.logits, &targets, None).unwrap()
    })
}

/// Matmul → ReLU → sigmoid → elementwise product chain over random shapes.
pub fn composition_gradient_error(seed_value: u64) -> f64 {
    let mut r = rng(seed_value, "fd/compose");
    let (a, b, c) = (r.random_range(1..=4), r.random_range(1..=4), r.random_range(1..=4));
    let mut store = ParamStore::new();
    let x = store.insert("x", random_tensor(&mut r, a, b, 1.0));
    let w1 = store.insert("w1", random_tensor(&mut r, b, c, 1.0));
    let w2 = store.insert("w2", random_tensor(&mut r, c, c, 1.0));
    gradient_error(&store, |tape, s| {
        let (xv, w1v, w2v) = (param(tape, s, x), param(tape, s, w1), param(tape, s, w2));
        let h = tape.matmul(xv, w1v).unwrap();
        let h = tape.relu(h);
        let g = tape.matmul(h, w2v).unwrap();
        let g = tape.sigmoid(g);
        let p = tape.mul(g, h).unwrap();
        tape.mean(p)
    })
}

pub const GRADIENT_CASES: usize = 100;

type GradientCheck = (&'static str, Box<dyn Fn(u64) -> f64>);

/// Worst relative error per op over [`GRADIENT_CASES`] seeds each.
pub fn gradient_suite() -> Vec<(&'static str, f64)> {
    let checks: Vec<GradientCheck> = vec![
        ("rgcn edge update", Box::new(|s| rgcn_gradient_error(s, RgcnOutput::FirstEdges))),
        ("rgcn node update", Box::new(|s| rgcn_gradient_error(s, RgcnOutput::LastNodes))),
        ("rgcn layer max fusion", Box::new(|s| rgcn_gradient_error(s, RgcnOutput::Fused))),
        ("bilinear score", Box::new(bilinear_gradient_error)),
        ("contrastive loss", Box::new(contrast_loss_gradient_error)),
        ("mlp", Box::new(mlp_gradient_error)),
        ("classification loss", Box::new(classification_gradient_error)),
        ("full relation model", Box::new(model_gradient_error)),
        ("op composition", Box::new(composition_gradient_error)),
    ];
    checks
        .iter()
        .map(|(name, f)| {
            let worst = (0..GRADIENT_CASES as u64).map(|s| f(s + 1)).fold(0.0, f64::max);
            (*name, worst)
        })
        .collect()
}

// ------------------------------------------------------------------ graphs

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

/// Max deviation between the outputs on permuted inputs and the permuted
/// outputs, over all permutations for N = 2..=5, both for fused RGCN edge
/// features and for pair predictions of the full model.
pub fn equivariance_deviation(instances_per_n: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for n in 2..=5 {
        for k in 0..instances_per_n {
            let mut r = rng(k * 10 + n as u64, "equivariance");
            let (f, c) = (4, 3);
            let record = random_record(&mut r, "eq", n, f, c);
            let model = PriseModel::init(small_spec(f, c, 2, 8), Some(&random_encoder(&mut r, f)), k).unwrap();
            let rgcn = RgcnIds::from_store(&model.params, 2).unwrap().params(&model.params);
            let base_state = rgcn_forward(&build_graph(&record).unwrap(), &rgcn).unwrap();
            let base_pred = model.predict_image(&record).unwrap();
            for perm in permutations(n) {
                let moved = record.permute_persons(&perm);
                let state = rgcn_forward(&build_graph(&moved).unwrap(), &rgcn).unwrap();
                let pred = model.predict_image(&moved).unwrap();
                for (i, j) in pairs(n) {
                    let (a, b) = (perm[i], perm[j]);
                    for t in 0..=2 {
                        worst = worst.max(max_abs(base_state.edge(t, i, j), state.edge(t, a, b)));
                    }
                    worst = worst.max(max_abs(base_state.fused_edge(i, j), state.fused_edge(a, b)));
                    let p0 = &base_pred.get(i, j).unwrap().probs;
                    let p1 = &pred.get(a, b).unwrap().probs;
                    worst = worst.max(max_abs(p0, p1));
                }
            }
        }
    }
    worst
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Number of (instance, layer, pair) triples where `r_ij^t` and `r_ji^t`
/// differ in any bit, recomputed from the node embeddings in both orders.
pub fn edge_symmetry_violations(instances: u64) -> usize {
    let mut bad = 0;
    for k in 0..instances {
        let mut r = rng(k, "symmetry");
        let n = r.random_range(2..=6);
        let f = r.random_range(1..=6);
        let depth = r.random_range(0..=3);
        let record = random_record(&mut r, "sym", n, f, 2);
        let params = RgcnParams::random(f, depth, &mut r);
        let state = rgcn_forward(&build_graph(&record).unwrap(), &params).unwrap();
        for t in 0..=depth {
            let w = &params.layer_weights[t];
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let hi = Tensor::vector(state.node(t, i).to_vec());
                    let hj = Tensor::vector(state.node(t, j).to_vec());
                    let rij = prise::rgcn::edge_update(&hi, &hj, w).unwrap();
                    let rji = prise::rgcn::edge_update(&hj, &hi, w).unwrap();
                    let stored_same = state.edge(t, i, j).iter().zip(state.edge(t, j, i)).all(|(a, b)| a.to_bits() == b.to_bits());
                    let recomputed_same = rij.data().iter().zip(rji.data()).all(|(a, b)| a.to_bits() == b.to_bits());
                    if !stored_same || !recomputed_same {
                        bad += 1;
                    }
                }
            }
        }
    }
    bad
}

/// Element-by-element RGCN forward. Returns per-layer node embeddings
/// `[t][i][d]`, per-layer edge features `[t][i][j][d]` and the fused edges.
pub struct ScalarState {
    pub nodes: Vec<Vec<Vec<f64>>>,
    pub edges: Vec<Vec<Vec<Vec<f64>>>>,
    pub fused: Vec<Vec<Vec<f64>>>,
}

fn at(m: &Tensor, r: usize, c: usize) -> f64 {
    m.data()[r * m.cols() + c]
}

pub fn scalar_rgcn(x: &[Vec<f64>], params: &RgcnParams) -> ScalarState {
    let n = x.len();
    let f = x[0].len();
    let depth = params.layer_weights.len() - 1;
    let apply = |w: &Tensor, v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; f];
        for (a, o) in out.iter_mut().enumerate() {
            for (b, vb) in v.iter().enumerate().take(f) {
                *o += at(w, a, b) * vb;
            }
        }
        out
    };
    let relu = |v: f64| if v > 0.0 { v } else { 0.0 };
    let mut h: Vec<Vec<f64>> = x.iter().map(|xi| apply(&params.input_projection, xi)).collect();
    let mut nodes = vec![h.clone()];
    let mut edges = Vec::new();
    for t in 0..=depth {
        let w = &params.layer_weights[t];
        let wh: Vec<Vec<f64>> = h.iter().map(|hi| apply(w, hi)).collect();
        let mut r = vec![vec![vec![0.0; f]; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    for d in 0..f {
                        r[i][j][d] = relu(wh[i][d] + wh[j][d]);
                    }
                }
            }
        }
        if t < depth {
            let mut next = h.clone();
            for i in 0..n {
                for d in 0..f {
                    let mut pre = wh[i][d];
                    for j in 0..n {
                        if j != i {
                            pre += r[i][j][d] * wh[j][d];
                        }
                    }
                    next[i][d] = h[i][d] + relu(pre);
                }
            }
            h = next;
            nodes.push(h.clone());
        }
        edges.push(r);
    }
    let mut fused = vec![vec![vec![0.0; f]; n]; n];
    for i in 0..n {
        for j in 0..n {
            for d in 0..f {
                fused[i][j][d] = (0..=depth).map(|t| edges[t][i][j][d]).fold(f64::NEG_INFINITY, f64::max);
            }
        }
    }
    ScalarState { nodes, edges, fused }
}

/// Max deviation between the vectorized forward and [`scalar_rgcn`] for
/// N ≤ 4, F ≤ 3, T ≤ 2.
pub fn brute_force_deviation(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let mut r = rng(k, "brute");
        let n = r.random_range(1..=4);
        let f = r.random_range(1..=3);
        let depth = r.random_range(0..=2);
        let x: Vec<Vec<f64>> = (0..n).map(|_| gaussian(&mut r, f, 1.5)).collect();
        let params = RgcnParams::random(f, depth, &mut r);
        let graph = prise::rgcn::PersonGraph::from_features("bf", &x).unwrap();
        let fast = rgcn_forward(&graph, &params).unwrap();
        let slow = scalar_rgcn(&x, &params);
        for t in 0..=depth {
            for i in 0..n {
                worst = worst.max(max_abs(fast.node(t, i), &slow.nodes[t][i]));
            }
        }
        for (i, j) in pairs(n) {
            for t in 0..=depth {
                worst = worst.max(max_abs(fast.edge(t, i, j), &slow.edges[t][i][j]));
            }
            worst = worst.max(max_abs(fast.fused_edge(i, j), &slow.fused[i][j]));
        }
    }
    worst
}

// ---------------------------------------------------------------- metrics

/// AP as the area under the step precision/recall curve, walking ranks in
/// descending score order with ties kept in input order.
pub fn brute_ap(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let npos = positive.iter().filter(|p| **p).count();
    if npos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // insertion sort: stable by construction
    for a in 1..order.len() {
        let mut b = a;
        while b > 0 && scores[order[b - 1]] < scores[order[b]] {
            order.swap(b - 1, b);
            b -= 1;
        }
    }
    let (mut tp, mut prev_recall, mut area) = (0usize, 0.0, 0.0);
    for (k, &idx) in order.iter().enumerate() {
        if positive[idx] {
            tp += 1;
        }
        let precision = tp as f64 / (k + 1) as f64;
        let recall = tp as f64 / npos as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(area)
}

/// Fraction of positive/negative pairs ordered correctly, ties count half.
pub fn brute_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (a, pa) in positive.iter().enumerate() {
        for (b, pb) in positive.iter().enumerate() {
            if *pa && !*pb {
                den += 1.0;
                num += if scores[a] > scores[b] {
                    1.0
                } else if scores[a] == scores[b] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

pub struct MetricOracleResult {
    pub max_ap_deviation: f64,
    pub max_auc_deviation: f64,
    pub identity_failures: usize,
}

/// Random instances of at most 20 samples, with coarse scores so ties occur.
pub fn metric_oracles(trials: u64) -> MetricOracleResult {
    let mut out = MetricOracleResult {
        max_ap_deviation: 0.0,
        max_auc_deviation: 0.0,
        identity_failures: 0,
    };
    for k in 0..trials {
        let mut r = rng(k, "metrics");
        let n = r.random_range(2..=20);
        let c = r.random_range(2..=4);
        let preds: Vec<ScoredPrediction> = (0..n)
            .map(|_| {
                let scores = (0..c).map(|_| r.random_range(0..6) as f64 / 5.0).collect();
                ScoredPrediction::new(r.random_range(0..c), scores).unwrap()
            })
            .collect();
        // mAP against the per-class oracle
        let report = mean_average_precision(&preds, c).unwrap();
        let mut oracle = Vec::new();
        for class in 0..c {
            let scores: Vec<f64> = preds.iter().map(|p| p.scores[class]).collect();
            let pos: Vec<bool> = preds.iter().map(|p| p.true_class == class).collect();
            let lib = average_precision(&scores, &pos);
            let bf = brute_ap(&scores, &pos);
            match (lib, bf) {
                (Some(a), Some(b)) => {
                    out.max_ap_deviation = out.max_ap_deviation.max((a - b).abs());
                    oracle.push(b);
                }
                (None, None) => {}
                _ => out.max_ap_deviation = f64::INFINITY,
            }
            if pos.iter().any(|p| *p) && pos.iter().any(|p| !*p) {
                let a = auc(&scores, &pos).unwrap();
                out.max_auc_deviation = out.max_auc_deviation.max((a - brute_auc(&scores, &pos)).abs());
            }
        }
        if !oracle.is_empty() {
            let m = oracle.iter().sum::<f64>() / oracle.len() as f64;
            out.max_ap_deviation = out.max_ap_deviation.max((report.map - m).abs());
        }
        // accuracy = Σ_c (n_c / n) recall_c
        let acc = accuracy(&preds).unwrap();
        let recalls = per_class_recall(&preds, c);
        let weighted: f64 = (0..c)
            .map(|class| {
                let nc = preds.iter().filter(|p| p.true_class == class).count() as f64;
                recalls[class].map_or(0.0, |rc| rc * nc / n as f64)
            })
            .sum();
        if (acc - weighted).abs() > 1e-12 || check_accuracy_identity(&preds, c).is_err() {
            out.identity_failures += 1;
        }
    }
    out
}

// ---------------------------------------------------------------- pipeline

/// Learning rates for the desk-scale synthetic runs. The default rates
/// (5e-5 and 1e-5) assume far more optimizer steps than ~11 batches per
/// epoch give.
pub const DESK_TRAIN_LR: f64 = 3e-3;
pub const DESK_CONTRAST_LR: f64 = 1e-3;

pub fn desk_contrast_config() -> prise::scene::ContrastConfig {
    prise::scene::ContrastConfig {
        lr: DESK_CONTRAST_LR,
        ..Default::default()
    }
}

pub fn desk_train_config() -> prise::trainer::TrainConfig {
    prise::trainer::TrainConfig {
        lr: DESK_TRAIN_LR,
        ..Default::default()
    }
}
