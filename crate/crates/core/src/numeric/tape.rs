//! Reverse-mode gradient tape.
//!
//! Every op appends one node holding its forward value and the indices of its
//! inputs. [`Tape::backward`] walks the nodes in exact reverse order, so a
//! node's adjoint is complete before it is propagated to its inputs.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::Arc;

use super::tensor::{log_softmax, softmax, Tensor};
use super::{NumericError, ParamId, Precision};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseKind {
    Relu,
    Sigmoid,
    Add,
    Mul,
    Sub,
}

impl ElementwiseKind {
    pub fn is_binary(self) -> bool {
        matches!(self, Self::Add | Self::Mul | Self::Sub)
    }
}

impl FromStr for ElementwiseKind {
    type Err = NumericError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Self::Relu),
            "sigmoid" => Ok(Self::Sigmoid),
            "add" => Ok(Self::Add),
            "mul" => Ok(Self::Mul),
            "sub" => Ok(Self::Sub),
            other => Err(NumericError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    MaxElementwiseOverList,
}

impl FromStr for ReduceKind {
    type Err = NumericError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sum" => Ok(Self::Sum),
            "mean" => Ok(Self::Mean),
            "max_elementwise_over_list" | "max_list" => Ok(Self::MaxElementwiseOverList),
            other => Err(NumericError::UnknownKind(other.to_string())),
        }
    }
}

/// Scores are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    MaxList(Vec<Var>, Vec<usize>),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    RowSums(Var),
    /// Weighted softmax cross-entropy; `grad` is the per-row gradient w.r.t. the logits.
    CrossEntropy(Var, Tensor),
    /// Binary cross-entropy summed over elements; `grad` as above.
    Bce(Var, Tensor),
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
    precision: Precision,
    clamp_warnings: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_precision(Precision::F64)
    }

    pub fn with_precision(precision: Precision) -> Self {
        Self {
            nodes: Vec::new(),
            precision,
            clamp_warnings: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of log arguments that hit the clamp bounds so far.
    pub fn clamp_warnings(&self) -> usize {
        self.clamp_warnings
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let value = match self.precision {
            Precision::F64 => value,
            Precision::F32 => value.round_f32(),
        };
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A constant input: it receives an adjoint but is not a parameter.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId, t: Tensor) -> Var {
        self.push(t, Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericError> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, Op::Transpose(a)))
    }

    pub fn elementwise(
        &mut self,
        kind: ElementwiseKind,
        a: Var,
        b: Option<Var>,
    ) -> Result<Var, NumericError> {
        match (kind, b) {
            (ElementwiseKind::Relu, None) => Ok(self.relu(a)),
            (ElementwiseKind::Sigmoid, None) => Ok(self.sigmoid(a)),
            (ElementwiseKind::Add, Some(b)) => self.add(a, b),
            (ElementwiseKind::Sub, Some(b)) => self.sub(a, b),
            (ElementwiseKind::Mul, Some(b)) => self.mul(a, b),
            (kind, _) => Err(NumericError::Arity {
                op: kind_name(kind),
                binary: kind.is_binary(),
            }),
        }
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).relu();
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).sigmoid();
        self.push(out, Op::Sigmoid(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let out = self.value(a).mul(self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).scale(k);
        self.push(out, Op::Scale(a, k))
    }

    pub fn reduce(&mut self, kind: ReduceKind, inputs: &[Var]) -> Result<Var, NumericError> {
        match kind {
            ReduceKind::MaxElementwiseOverList => self.max_list(inputs),
            ReduceKind::Sum | ReduceKind::Mean => {
                let [a] = inputs else {
                    return Err(NumericError::Arity {
                        op: "reduce",
                        binary: false,
                    });
                };
                Ok(if kind == ReduceKind::Sum {
                    self.sum(*a)
                } else {
                    self.mean(*a)
                })
            }
        }
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).mean());
        self.push(out, Op::Mean(a))
    }

    pub fn max_list(&mut self, inputs: &[Var]) -> Result<Var, NumericError> {
        let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
        let (out, arg) = Tensor::max_list(&values)?;
        Ok(self.push(out, Op::MaxList(inputs.to_vec(), arg)))
    }

    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var, NumericError> {
        let out = self.value(a).gather_rows(&index)?;
        Ok(self.push(out, Op::GatherRows(a, index)))
    }

    /// Repeats a single-row matrix `n` times.
    pub fn repeat_row(&mut self, a: Var, n: usize) -> Result<Var, NumericError> {
        let shape = self.value(a).shape().to_vec();
        if shape.len() != 2 || shape[0] != 1 {
            return Err(NumericError::NotMatrix {
                op: "repeat_row",
                shape,
            });
        }
        self.gather_rows(a, vec![0; n].into())
    }

    pub fn scatter_add_rows(
        &mut self,
        a: Var,
        index: Arc<[usize]>,
        out_rows: usize,
    ) -> Result<Var, NumericError> {
        let out = self.value(a).scatter_add_rows(&index, out_rows)?;
        Ok(self.push(out, Op::ScatterAddRows(a, index)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let values: Vec<&Tensor> = parts.iter().map(|v| self.value(*v)).collect();
        let out = Tensor::concat_cols(&values)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let values: Vec<&Tensor> = parts.iter().map(|v| self.value(*v)).collect();
        let out = Tensor::concat_rows(&values)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn row_sums(&mut self, a: Var) -> Result<Var, NumericError> {
        let out = self.value(a).row_sums()?;
        Ok(self.push(out, Op::RowSums(a)))
    }

    /// `X · Wᵀ + 1·b` for row-major inputs `X` (m×k), weights `W` (n×k) and a
    /// `1 × n` bias.
    pub fn affine(&mut self, x: Var, w_t: Var, bias: Var) -> Result<Var, NumericError> {
        let m = self.value(x).rows();
        let xw = self.matmul(x, w_t)?;
        let b = self.repeat_row(bias, m)?;
        self.add(xw, b)
    }

    /// Weighted mean negative log-likelihood of a softmax over each row of
    /// `logits`. `targets[k] = None` excludes row `k`. Per-row probabilities
    /// are clamped at [`LOG_CLAMP`] before the log, which caps the loss.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        class_weights: Option<&[f64]>,
    ) -> Result<Var, NumericError> {
        let z = self.value(logits);
        let [m, c] = z.shape() else {
            return Err(NumericError::NotMatrix {
                op: "cross_entropy",
                shape: z.shape().to_vec(),
            });
        };
        let (m, c) = (*m, *c);
        if targets.len() != m {
            return Err(NumericError::ShapeMismatch {
                op: "cross_entropy",
                left: z.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        if let Some(w) = class_weights {
            if w.len() != c {
                return Err(NumericError::ShapeMismatch {
                    op: "cross_entropy",
                    left: vec![c],
                    right: vec![w.len()],
                });
            }
        }
        let mut total = 0.0;
        let mut weight_sum = 0.0;
        let mut grad = vec![0.0; m * c];
        let mut clamped = 0;
        for (k, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= c {
                return Err(NumericError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: t,
                    bound: c,
                });
            }
            let row = z.row_slice(k);
            let logp = log_softmax(row);
            let p = softmax(row);
            let wt = class_weights.map_or(1.0, |w| w[t]);
            if logp[t] < LOG_CLAMP.ln() {
                clamped += 1;
            }
            for (j, pj) in p.iter().enumerate() {
                grad[k * c + j] = wt * (pj - if j == t { 1.0 } else { 0.0 });
            }
            let nll = -logp[t];
            total += wt * nll;
            weight_sum += wt;
        }
        if weight_sum <= 0.0 {
            return Err(NumericError::EmptyInput {
                op: "cross_entropy",
            });
        }
        for g in &mut grad {
            *g /= weight_sum;
        }
        self.clamp_warnings += clamped;
        let out = Tensor::scalar(total / weight_sum);
        let grad = Tensor::from_parts(vec![m, c], grad);
        Ok(self.push(out, Op::CrossEntropy(logits, grad)))
    }

    /// Σ −[y log s + (1 − y) log(1 − s)] over all elements of `scores`, with
    /// `s` clamped to `[LOG_CLAMP, 1 − LOG_CLAMP]`.
    pub fn bce_sum(&mut self, scores: Var, targets: &[f64]) -> Result<Var, NumericError> {
        let s = self.value(scores);
        if s.len() != targets.len() {
            return Err(NumericError::ShapeMismatch {
                op: "bce_sum",
                left: s.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let mut total = 0.0;
        let mut grad = vec![0.0; s.len()];
        let mut clamped = 0;
        for (k, (&sv, &y)) in s.data().iter().zip(targets).enumerate() {
            let inside = (LOG_CLAMP..=1.0 - LOG_CLAMP).contains(&sv);
            if !inside {
                clamped += 1;
            }
            let c = sv.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP);
            total += -(y * c.ln() + (1.0 - y) * (1.0 - c).ln());
            if inside {
                grad[k] = -y / c + (1.0 - y) / (1.0 - c);
            }
        }
        let grad = Tensor::from_parts(s.shape().to_vec(), grad);
        self.clamp_warnings += clamped;
        Ok(self.push(Tensor::scalar(total), Op::Bce(scores, grad)))
    }

    /// Adjoints of every node with respect to the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(NumericError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);
        let mut params = BTreeMap::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    let t = Tensor::from_parts(node.value.shape().to_vec(), g.clone());
                    params
                        .entry(*id)
                        .and_modify(|acc: &mut Tensor| *acc = acc.add(&t).expect("same shape"))
                        .or_insert(t);
                }
                Op::MatMul(a, b) => {
                    let gt = Tensor::from_parts(node.value.shape().to_vec(), g.clone());
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let ga = gt.matmul(&bv.transpose()?)?;
                    let gb = av.transpose()?.matmul(&gt)?;
                    accumulate(&mut adj, *a, ga.data());
                    accumulate(&mut adj, *b, gb.data());
                }
                Op::Transpose(a) => {
                    let gt = Tensor::from_parts(node.value.shape().to_vec(), g.clone());
                    accumulate(&mut adj, *a, gt.transpose()?.data());
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(x)
                        .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    let ga: Vec<f64> = g.iter().zip(y).map(|(gv, yv)| gv * yv * (1.0 - yv)).collect();
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Add(a, b) => {
                    self.accumulate_broadcast(&mut adj, *a, &g, |_| 1.0);
                    self.accumulate_broadcast(&mut adj, *b, &g, |_| 1.0);
                }
                Op::Sub(a, b) => {
                    self.accumulate_broadcast(&mut adj, *a, &g, |_| 1.0);
                    self.accumulate_broadcast(&mut adj, *b, &g, |_| -1.0);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    self.accumulate_broadcast(&mut adj, *a, &g, |k| broadcast_at(bv, k));
                    self.accumulate_broadcast(&mut adj, *b, &g, |k| broadcast_at(av, k));
                }
                Op::Scale(a, k) => {
                    let ga: Vec<f64> = g.iter().map(|v| v * k).collect();
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    accumulate(&mut adj, *a, &vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    accumulate(&mut adj, *a, &vec![g[0] / n as f64; n]);
                }
                Op::MaxList(inputs, arg) => {
                    let n = g.len();
                    for (k, v) in inputs.iter().enumerate() {
                        let gk: Vec<f64> =
                            (0..n).map(|e| if arg[e] == k { g[e] } else { 0.0 }).collect();
                        accumulate(&mut adj, *v, &gk);
                    }
                }
                Op::GatherRows(a, index) => {
                    let gt = Tensor::from_parts(node.value.shape().to_vec(), g.clone());
                    let rows = self.value(*a).rows();
                    let ga = gt.scatter_add_rows(index, rows)?;
                    accumulate(&mut adj, *a, ga.data());
                }
                Op::ScatterAddRows(a, index) => {
                    let gt = Tensor::from_parts(node.value.shape().to_vec(), g.clone());
                    let ga = gt.gather_rows(index)?;
                    accumulate(&mut adj, *a, ga.data());
                }
                Op::ConcatCols(parts) => {
                    let gt = Tensor::from_parts(node.value.shape().to_vec(), g.clone());
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        let gp = gt.slice_cols(start, w)?;
                        accumulate(&mut adj, *p, gp.data());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        accumulate(&mut adj, *p, &g[start..start + n]);
                        start += n;
                    }
                }
                Op::RowSums(a) => {
                    let av = self.value(*a);
                    let cols = av.cols();
                    let ga: Vec<f64> = (0..av.len()).map(|k| g[k / cols]).collect();
                    accumulate(&mut adj, *a, &ga);
                }
                Op::CrossEntropy(a, grad) | Op::Bce(a, grad) => {
                    let ga: Vec<f64> = grad.data().iter().map(|v| v * g[0]).collect();
                    accumulate(&mut adj, *a, &ga);
                }
            }
            adj[idx] = Some(g);
        }

        let adjoints = adj
            .into_iter()
            .zip(&self.nodes)
            .map(|(a, n)| a.map(|d| Tensor::from_parts(n.value.shape().to_vec(), d)))
            .collect();
        Ok(Gradients { params, adjoints })
    }

    /// Accumulates `g * factor(k)` into `target`, summing over elements when
    /// the target was a broadcast scalar.
    fn accumulate_broadcast(
        &self,
        adj: &mut [Option<Vec<f64>>],
        target: Var,
        g: &[f64],
        factor: impl Fn(usize) -> f64,
    ) {
        let n = self.value(target).len();
        if n == g.len() {
            let ga: Vec<f64> = g.iter().enumerate().map(|(k, v)| v * factor(k)).collect();
            accumulate(adj, target, &ga);
        } else {
            let total: f64 = g.iter().enumerate().map(|(k, v)| v * factor(k)).sum();
            accumulate(adj, target, &[total]);
        }
    }
}

fn broadcast_at(t: &Tensor, k: usize) -> f64 {
    if t.is_scalar() {
        t.item()
    } else {
        t.data()[k]
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut adj[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn kind_name(kind: ElementwiseKind) -> &'static str {
    match kind {
        ElementwiseKind::Relu => "relu",
        ElementwiseKind::Sigmoid => "sigmoid",
        ElementwiseKind::Add => "add",
        ElementwiseKind::Mul => "mul",
        ElementwiseKind::Sub => "sub",
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    params: BTreeMap<ParamId, Tensor>,
    adjoints: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a parameter, or `None` if it did not influence the loss.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    /// Adjoint of any recorded value; zero when it does not reach the loss.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        self.adjoints[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }
}
