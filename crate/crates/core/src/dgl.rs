//! Dynamic graph-like learning over channel nodes.
//!
//! Each channel of a window is a node. One round builds an edge feature for
//! every ordered pair `(i, j)`, scores it with a sigmoid gate, and aggregates
//! the gated edge features back onto node `i`. A linear map brings the
//! aggregated width back to the node width so rounds can be chained.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{glorot, Bound, ParamSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DglConfig {
    /// Number of message rounds `n`.
    pub iterations: usize,
    /// Per-node feature width after the dimensionality reduction.
    pub node_dim: usize,
    /// Width of the edge features.
    pub edge_hidden: usize,
    /// Append the node-pooled `X_e` to the representation.
    pub concat_skip: bool,
    /// At inference, interaction strengths below this are zeroed.
    pub prune_threshold: Option<f64>,
}

impl Default for DglConfig {
    fn default() -> Self {
        Self {
            iterations: 2,
            node_dim: 16,
            edge_hidden: 16,
            concat_skip: true,
            prune_threshold: None,
        }
    }
}

impl DglConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.node_dim == 0 || self.edge_hidden == 0 {
            return Err(Error::Config(
                "model.dgl.iterations, node_dim and edge_hidden must be positive".into(),
            ));
        }
        if let Some(t) = self.prune_threshold {
            if !(0.0..1.0).contains(&t) {
                return Err(Error::Config(format!("model.dgl.prune_threshold {t} outside [0,1)")));
            }
        }
        Ok(())
    }

    /// Representation width for node inputs of width `in_dim`.
    pub fn output_dim(&self, in_dim: usize) -> usize {
        self.node_dim + if self.concat_skip { in_dim } else { 0 }
    }

    pub fn init_params<R: Rng>(&self, in_dim: usize, rng: &mut R, params: &mut ParamSet) {
        let (nd, eh) = (self.node_dim, self.edge_hidden);
        params.insert("dgl.reduce.w", glorot(rng, in_dim, nd));
        params.insert("dgl.reduce.b", Tensor::zeros(&[nd]));
        params.insert("dgl.edge.w1", glorot(rng, 2 * nd, eh));
        params.insert("dgl.edge.b1", Tensor::zeros(&[eh]));
        params.insert("dgl.edge.w2", glorot(rng, eh, eh));
        params.insert("dgl.edge.b2", Tensor::zeros(&[eh]));
        params.insert("dgl.gate.w", glorot(rng, eh, 1));
        params.insert("dgl.gate.b", Tensor::zeros(&[1]));
        params.insert("dgl.update.w", glorot(rng, eh, nd));
        params.insert("dgl.update.b", Tensor::zeros(&[nd]));
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: Var,
    pub b: Var,
}

impl Linear {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let y = g.matmul(x, self.w)?;
        g.add_row(y, self.b)
    }
}

/// Weights shared by every pair and every round.
#[derive(Clone, Copy, Debug)]
pub struct DglVars {
    pub reduce: Linear,
    pub edge1: Linear,
    pub edge2: Linear,
    pub gate: Linear,
    pub update: Linear,
}

impl DglVars {
    pub fn bind(b: &Bound) -> Result<Self> {
        let lin = |name: &str| -> Result<Linear> {
            Ok(Linear {
                w: b.var(&format!("dgl.{name}.w"))?,
                b: b.var(&format!("dgl.{name}.b"))?,
            })
        };
        Ok(Self {
            reduce: lin("reduce")?,
            edge1: Linear {
                w: b.var("dgl.edge.w1")?,
                b: b.var("dgl.edge.b1")?,
            },
            edge2: Linear {
                w: b.var("dgl.edge.w2")?,
                b: b.var("dgl.edge.b2")?,
            },
            gate: lin("gate")?,
            update: lin("update")?,
        })
    }
}

/// Ordered node pairs `(i, j)`, `i ≠ j`, for every sample of a batch, in
/// lexicographic order. Indices are stacked row numbers `b·V + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairIndex {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub rows: usize,
}

impl PairIndex {
    pub fn new(batch: usize, nodes: usize) -> Self {
        let mut src = Vec::with_capacity(batch * nodes * nodes.saturating_sub(1));
        let mut dst = Vec::with_capacity(src.capacity());
        for b in 0..batch {
            for i in 0..nodes {
                for j in (0..nodes).filter(|&j| j != i) {
                    src.push(b * nodes + i);
                    dst.push(b * nodes + j);
                }
            }
        }
        Self {
            src,
            dst,
            rows: batch * nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// Pointwise (kernel-1) convolution over the node axis: every row of `X_e`
/// is projected to `node_dim` features with shared weights.
pub fn reduce_dim(g: &mut Graph, x_e: Var, proj: &Linear) -> Result<Var> {
    let (_, d) = g.value(x_e).dims2()?;
    let (d_w, _) = g.value(proj.w).dims2()?;
    if d != d_w {
        return Err(Error::Dimension(format!("reduce_dim expects width {d_w}, got {d}")));
    }
    proj.forward(g, x_e)
}

/// `e_{i,j} = f(Cat[x_i, x_j])` with a two-layer relu perceptron `f`.
pub fn node_to_edge(g: &mut Graph, nodes: Var, pairs: &PairIndex, vars: &DglVars) -> Result<Var> {
    let xi = g.gather_rows(nodes, pairs.src.clone())?;
    let xj = g.gather_rows(nodes, pairs.dst.clone())?;
    let cat = g.concat(&[xi, xj], 1)?;
    let h = vars.edge1.forward(g, cat)?;
    let h = g.relu(h)?;
    vars.edge2.forward(g, h)
}

/// `In_{i,j} = sigmoid(g(e_{i,j}))`, one column.
pub fn interaction_strength(g: &mut Graph, edges: Var, gate: &Linear) -> Result<Var> {
    let s = gate.forward(g, edges)?;
    g.sigmoid(s)
}

/// `Σ_{j≠i} e_{i,j} · In_{i,j}` for every node `i`.
pub fn aggregate_messages(g: &mut Graph, edges: Var, strength: Var, pairs: &PairIndex) -> Result<Var> {
    let weighted = g.mul_col(edges, strength)?;
    g.index_add_rows(weighted, pairs.src.clone(), pairs.rows)
}

/// Aggregation followed by the learned `edge_hidden → node_dim` map.
pub fn aggregate(g: &mut Graph, edges: Var, strength: Var, pairs: &PairIndex, update: &Linear) -> Result<Var> {
    let agg = aggregate_messages(g, edges, strength, pairs)?;
    update.forward(g, agg)
}

/// Per-sample mean over node rows: `B·V × d → B × d`.
pub fn mean_over_nodes(g: &mut Graph, x: Var, nodes: usize) -> Result<Var> {
    let (rows, _) = g.value(x).dims2()?;
    let summed = g.index_add_rows(x, (0..rows).map(|r| r / nodes).collect(), rows / nodes)?;
    g.scale(summed, 1.0 / nodes as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handles produced by one DGL forward pass.
#[derive(Clone, Debug)]
pub struct DglOutput {
    /// `g(x)`, one row per sample.
    pub repr: Var,
    /// Node features after the last round.
    pub nodes: Var,
    /// Interaction strengths of each round (`B·V(V−1) × 1`).
    pub interactions: Vec<Var>,
    pub pairs: PairIndex,
}

/// Reduction, `n` rounds of node→edge→gate→aggregate, node pooling, and the
/// optional skip concatenation with node-pooled `X_e`.
pub fn dgl_forward(
    g: &mut Graph,
    x_e: Var,
    nodes_per_sample: usize,
    cfg: &DglConfig,
    vars: &DglVars,
    mode: Mode,
) -> Result<DglOutput> {
    let (rows, _) = g.value(x_e).dims2()?;
    if nodes_per_sample == 0 || rows % nodes_per_sample != 0 {
        return Err(Error::Dimension(format!("{rows} rows is not a whole number of {nodes_per_sample}-node graphs")));
    }
    let pairs = PairIndex::new(rows / nodes_per_sample, nodes_per_sample);
    let mut h = reduce_dim(g, x_e, &vars.reduce)?;
    let mut interactions = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        if pairs.is_empty() {
            break;
        }
        let e = node_to_edge(g, h, &pairs, vars)?;
        let mut strength = interaction_strength(g, e, &vars.gate)?;
        interactions.push(strength);
        if let (Mode::Eval, Some(thr)) = (mode, cfg.prune_threshold) {
            let keep: Vec<f64> = g.value(strength).data().iter().map(|&v| if v < thr { 0.0 } else { 1.0 }).collect();
            let mask = g.constant(Tensor::new(g.shape(strength).to_vec(), keep)?);
            strength = g.mul(strength, mask)?;
        }
        h = aggregate(g, e, strength, &pairs, &vars.update)?;
    }
    let pooled = mean_over_nodes(g, h, nodes_per_sample)?;
    let repr = if cfg.concat_skip {
        let skip = mean_over_nodes(g, x_e, nodes_per_sample)?;
        g.concat(&[pooled, skip], 1)?
    } else {
        pooled
    };
    Ok(DglOutput {
        repr,
        nodes: h,
        interactions,
        pairs,
    })
}

/// Reshapes one sample's interaction column into a `V×V` matrix with a zero
/// diagonal.
pub fn interaction_matrix(values: &[f64], sample: usize, nodes: usize) -> Vec<Vec<f64>> {
    let per = nodes * (nodes - 1);
    let vals = &values[sample * per..(sample + 1) * per];
    let mut m = vec![vec![0.0; nodes]; nodes];
    let mut k = 0;
    for (i, row) in m.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            if i != j {
                *cell = vals[k];
                k += 1;
            }
        }
    }
    m
}
