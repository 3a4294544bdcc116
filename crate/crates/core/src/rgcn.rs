//! Fully connected person graphs and the relational GCN over them.
//!
//! With node embeddings `h_i^t` and per-layer square weights `W^t`:
//!
//! ```text
//! h_i^0     = w x_i
//! r_ij^t    = ReLU(W^t h_i^t + W^t h_j^t)
//! h_i^{t+1} = h_i^t + ReLU(W^t h_i^t + Σ_{j≠i} r_ij^t ⊙ W^t h_j^t)
//! r_ij      = max_t r_ij^t            (element-wise, t = 0..=T)
//! ```
//!
//! A depth-`T` network holds `T + 1` layer matrices: `W^0..W^{T-1}` drive the
//! node updates and `W^T` produces the last edge features from `h^T`.
//!
//! Embeddings are stored as rows, so `W h_i` is computed as row `i` of
//! `H · Wᵀ`. One feature is kept per unordered pair.

use std::sync::Arc;

use rand::Rng;

use crate::data::{pairs, ImageRecord};
use crate::error::{PriseError, Result};
use crate::numeric::{NumericError, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct PersonGraph {
    n_persons: usize,
    node_features: Tensor,
    edges: Vec<(usize, usize)>,
    edge_src: Arc<[usize]>,
    edge_dst: Arc<[usize]>,
}

impl PersonGraph {
    pub fn from_features(image_id: &str, features: &[Vec<f64>]) -> Result<Self> {
        let n = features.len();
        if n == 0 {
            return Err(PriseError::validation(image_id, "person_features", "empty image: no persons"));
        }
        let f = features[0].len();
        if let Some(i) = features.iter().position(|x| x.len() != f) {
            return Err(PriseError::validation(
                image_id,
                format!("person_features[{i}]"),
                format!("dimension {} differs from {f}", features[i].len()),
            ));
        }
        let node_features = Tensor::from_rows(features, f)?;
        let edges = pairs(n);
        let edge_src = edges.iter().map(|e| e.0).collect();
        let edge_dst = edges.iter().map(|e| e.1).collect();
        Ok(Self {
            n_persons: n,
            node_features,
            edges,
            edge_src,
            edge_dst,
        })
    }

    pub fn n_persons(&self) -> usize {
        self.n_persons
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.cols()
    }

    pub fn node_features(&self) -> &Tensor {
        &self.node_features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n_persons).filter(|&j| j != i).collect()
    }
}

pub fn build_graph(record: &ImageRecord) -> Result<PersonGraph> {
    if record.n_persons == 0 || record.person_features.is_empty() {
        return Err(PriseError::validation(&record.image_id, "n_persons", "empty image: no persons"));
    }
    if record.person_features.len() != record.n_persons {
        return Err(PriseError::validation(
            &record.image_id,
            "person_features",
            format!(
                "{} features for {} persons",
                record.person_features.len(),
                record.n_persons
            ),
        ));
    }
    PersonGraph::from_features(&record.image_id, &record.person_features)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RgcnParams {
    pub input_projection: Tensor,
    /// `W^0..=W^T`.
    pub layer_weights: Vec<Tensor>,
}

impl RgcnParams {
    pub fn init_bound(f: usize) -> f64 {
        (6.0 / (2.0 * f as f64)).sqrt()
    }

    pub fn random(f: usize, depth: usize, rng: &mut impl Rng) -> Self {
        let b = Self::init_bound(f);
        let mut draw = || {
            let data = (0..f * f).map(|_| rng.random_range(-b..=b)).collect();
            Tensor::matrix(f, f, data).expect("square")
        };
        let input_projection = draw();
        let layer_weights = (0..=depth).map(|_| draw()).collect();
        Self {
            input_projection,
            layer_weights,
        }
    }

    pub fn zeros(f: usize, depth: usize) -> Self {
        Self {
            input_projection: Tensor::zeros(&[f, f]),
            layer_weights: (0..=depth).map(|_| Tensor::zeros(&[f, f])).collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.layer_weights.len() - 1
    }

    pub fn feature_dim(&self) -> usize {
        self.input_projection.rows()
    }

    pub fn validate(&self) -> Result<(), NumericError> {
        let f = self.input_projection.rows();
        let square = |t: &Tensor| t.shape() == [f, f];
        if !square(&self.input_projection) {
            return Err(NumericError::NotMatrix {
                op: "rgcn input projection",
                shape: self.input_projection.shape().to_vec(),
            });
        }
        if self.layer_weights.is_empty() {
            return Err(NumericError::EmptyInput { op: "rgcn layer weights" });
        }
        if let Some(w) = self.layer_weights.iter().find(|w| !square(w)) {
            return Err(NumericError::ShapeMismatch {
                op: "rgcn layer weight",
                left: vec![f, f],
                right: w.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn register(&self, store: &mut ParamStore) -> RgcnIds {
        let input = store.insert("rgcn.input", self.input_projection.clone());
        let layers = self
            .layer_weights
            .iter()
            .enumerate()
            .map(|(t, w)| store.insert(format!("rgcn.layer{t}"), w.clone()))
            .collect();
        RgcnIds { input, layers }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RgcnIds {
    pub input: ParamId,
    pub layers: Vec<ParamId>,
}

impl RgcnIds {
    pub fn from_store(store: &ParamStore, depth: usize) -> Result<Self, NumericError> {
        Ok(Self {
            input: store.require("rgcn.input")?,
            layers: (0..=depth)
                .map(|t| store.require(&format!("rgcn.layer{t}")))
                .collect::<Result<_, _>>()?,
        })
    }

    pub fn all(&self) -> Vec<ParamId> {
        std::iter::once(self.input).chain(self.layers.iter().copied()).collect()
    }

    pub fn params(&self, store: &ParamStore) -> RgcnParams {
        RgcnParams {
            input_projection: store.get(self.input).clone(),
            layer_weights: self.layers.iter().map(|&id| store.get(id).clone()).collect(),
        }
    }
}

/// RGCN weights placed on a tape, already transposed for row-major products.
#[derive(Clone, Debug)]
pub struct RgcnVars {
    input_t: Var,
    layers_t: Vec<Var>,
}

impl RgcnVars {
    pub fn from_store(tape: &mut Tape, store: &ParamStore, ids: &RgcnIds) -> Result<Self, NumericError> {
        let input = tape.param(ids.input, store.get(ids.input).clone());
        let layers = ids
            .layers
            .iter()
            .map(|&id| tape.param(id, store.get(id).clone()))
            .collect::<Vec<_>>();
        Self::transpose_all(tape, input, &layers)
    }

    /// Constant (non-parameter) weights.
    pub fn from_params(tape: &mut Tape, params: &RgcnParams) -> Result<Self, NumericError> {
        params.validate()?;
        let input = tape.leaf(params.input_projection.clone());
        let layers = params
            .layer_weights
            .iter()
            .map(|w| tape.leaf(w.clone()))
            .collect::<Vec<_>>();
        Self::transpose_all(tape, input, &layers)
    }

    fn transpose_all(tape: &mut Tape, input: Var, layers: &[Var]) -> Result<Self, NumericError> {
        Ok(Self {
            input_t: tape.transpose(input)?,
            layers_t: layers
                .iter()
                .map(|&w| tape.transpose(w))
                .collect::<Result<_, _>>()?,
        })
    }

    pub fn depth(&self) -> usize {
        self.layers_t.len() - 1
    }
}

/// Per-layer values of one forward pass, as tape handles.
#[derive(Clone, Debug)]
pub struct TapeGraphState {
    /// `h^0..=h^T`, each `N × F`.
    pub nodes: Vec<Var>,
    /// `r^0..=r^T`, each `E × F` in canonical pair order.
    pub edges: Vec<Var>,
    pub fused: Var,
}

fn layer_edges(tape: &mut Tape, m: Var, graph: &PersonGraph) -> Result<Var, NumericError> {
    let mi = tape.gather_rows(m, graph.edge_src.clone())?;
    let mj = tape.gather_rows(m, graph.edge_dst.clone())?;
    let s = tape.add(mi, mj)?;
    Ok(tape.relu(s))
}

/// Records the RGCN forward pass for `graph` on `tape`.
pub fn rgcn_forward_tape(
    tape: &mut Tape,
    graph: &PersonGraph,
    vars: &RgcnVars,
) -> Result<TapeGraphState, NumericError> {
    let n = graph.n_persons;
    let x = tape.leaf(graph.node_features.clone());
    let mut h = tape.matmul(x, vars.input_t)?;
    let mut nodes = vec![h];
    let mut edges = Vec::with_capacity(vars.layers_t.len());
    let depth = vars.depth();
    for t in 0..depth {
        let m = tape.matmul(h, vars.layers_t[t])?;
        let r = layer_edges(tape, m, graph)?;
        edges.push(r);
        // message r_ij ⊙ W h_j flows to i, and r_ij ⊙ W h_i flows to j
        let mj = tape.gather_rows(m, graph.edge_dst.clone())?;
        let mi = tape.gather_rows(m, graph.edge_src.clone())?;
        let to_src = tape.mul(r, mj)?;
        let to_dst = tape.mul(r, mi)?;
        let agg_src = tape.scatter_add_rows(to_src, graph.edge_src.clone(), n)?;
        let agg_dst = tape.scatter_add_rows(to_dst, graph.edge_dst.clone(), n)?;
        let agg = tape.add(agg_src, agg_dst)?;
        let pre = tape.add(m, agg)?;
        let act = tape.relu(pre);
        h = tape.add(h, act)?;
        nodes.push(h);
    }
    let m = tape.matmul(h, vars.layers_t[depth])?;
    edges.push(layer_edges(tape, m, graph)?);
    let fused = tape.max_list(&edges)?;
    Ok(TapeGraphState {
        nodes,
        edges,
        fused,
    })
}

/// Materialized result of [`rgcn_forward`].
#[derive(Clone, Debug, PartialEq)]
pub struct GraphState {
    pub n_persons: usize,
    pub node_embeddings: Vec<Tensor>,
    pub edge_features: Vec<Tensor>,
    pub fused: Tensor,
}

impl GraphState {
    pub fn from_tape(tape: &Tape, n_persons: usize, state: &TapeGraphState) -> Self {
        Self {
            n_persons,
            node_embeddings: state.nodes.iter().map(|v| tape.value(*v).clone()).collect(),
            edge_features: state.edges.iter().map(|v| tape.value(*v).clone()).collect(),
            fused: tape.value(state.fused).clone(),
        }
    }

    pub fn depth(&self) -> usize {
        self.edge_features.len() - 1
    }

    /// `r_ij^t`; symmetric in `i` and `j`.
    pub fn edge(&self, t: usize, i: usize, j: usize) -> &[f64] {
        let k = crate::data::pair_index(i, j, self.n_persons);
        self.edge_features[t].row_slice(k)
    }

    pub fn fused_edge(&self, i: usize, j: usize) -> &[f64] {
        let k = crate::data::pair_index(i, j, self.n_persons);
        self.fused.row_slice(k)
    }

    pub fn node(&self, t: usize, i: usize) -> &[f64] {
        self.node_embeddings[t].row_slice(i)
    }
}

pub fn rgcn_forward(graph: &PersonGraph, params: &RgcnParams) -> Result<GraphState> {
    if params.feature_dim() != graph.feature_dim() {
        return Err(NumericError::ShapeMismatch {
            op: "rgcn_forward",
            left: params.input_projection.shape().to_vec(),
            right: graph.node_features.shape().to_vec(),
        }
        .into());
    }
    let mut tape = Tape::new();
    let vars = RgcnVars::from_params(&mut tape, params)?;
    let state = rgcn_forward_tape(&mut tape, graph, &vars)?;
    Ok(GraphState::from_tape(&tape, graph.n_persons, &state))
}

/// `ReLU(W h_i + W h_j)` for rank-1 embeddings.
pub fn edge_update(h_i: &Tensor, h_j: &Tensor, w_t: &Tensor) -> Result<Tensor, NumericError> {
    let a = w_t.matvec(h_i)?;
    let b = w_t.matvec(h_j)?;
    Ok(a.add(&b)?.relu())
}

/// A neighbour's embedding and the shared edge feature at the same layer.
#[derive(Clone, Copy, Debug)]
pub struct Neighbor<'a> {
    pub embedding: &'a Tensor,
    pub edge: &'a Tensor,
}

/// `h_i + ReLU(W h_i + Σ_j r_ij ⊙ W h_j)`. `n_persons` is the graph size;
/// a fully connected graph gives every node exactly `n_persons - 1` neighbours.
pub fn node_update(
    h_i: &Tensor,
    neighbors: &[Neighbor<'_>],
    w_t: &Tensor,
    n_persons: usize,
) -> Result<Tensor> {
    if neighbors.len() + 1 != n_persons {
        return Err(PriseError::Data(format!(
            "node_update: {} neighbours is inconsistent with a fully connected graph of {n_persons} persons",
            neighbors.len()
        )));
    }
    let mut pre = w_t.matvec(h_i)?;
    for nb in neighbors {
        let msg = nb.edge.mul(&w_t.matvec(nb.embedding)?)?;
        pre = pre.add(&msg)?;
    }
    Ok(h_i.add(&pre.relu())?)
}
