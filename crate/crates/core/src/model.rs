//! Graph autoencoder: a stack of GAT or GCN layers producing embeddings `Z`,
//! an inner-product decoder `sigmoid(Z Zᵀ)`, and the squared Frobenius
//! reconstruction loss with an `λ‖Z‖²` penalty.
//!
//! The reconstruction target is always the raw 0/1 adjacency without
//! self-loops, counted over all ordered pairs `(i, j)` including the
//! diagonal. Self-loops only ever appear on the propagation side.

use log::warn;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{symmetric_normalize, NormalizedAdjacency, SparseGraph};
use crate::layers::{
    gat_backward, gat_forward, gcn_backward, gcn_forward, GatCache, GatParams, GcnCache,
    GcnParams,
};
use crate::numerics::{dot, sigmoid, Activation, DenseMatrix};

pub const DEFAULT_DENSE_LIMIT: usize = 5000;
pub const DEFAULT_LAMBDA: f64 = 1e-4;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Gat,
    Gcn,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Gat(GatParams),
    Gcn(GcnParams),
}

impl LayerParams {
    pub fn weight(&self) -> &DenseMatrix {
        match self {
            LayerParams::Gat(p) => &p.weight,
            LayerParams::Gcn(p) => &p.weight,
        }
    }

    /// Trainable buffers in a fixed order: weight, then attention (GAT only).
    pub fn buffers(&self) -> Vec<&[f64]> {
        match self {
            LayerParams::Gat(p) => vec![p.weight.data(), &p.attention],
            LayerParams::Gcn(p) => vec![p.weight.data()],
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            LayerParams::Gat(p) => vec![p.weight.data_mut(), &mut p.attention],
            LayerParams::Gcn(p) => vec![p.weight.data_mut()],
        }
    }
}

/// Encoder stack plus the settings that shape the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct GaeModel {
    pub kind: EncoderKind,
    pub layer_dims: Vec<usize>,
    pub layers: Vec<LayerParams>,
    pub lambda: f64,
    pub self_loops: bool,
    pub leaky_slope: f64,
}

/// Hidden layers use ReLU; the embedding layer stays linear so inner
/// products can be negative.
pub fn layer_activation(layer: usize, num_layers: usize) -> Activation {
    if layer + 1 == num_layers {
        Activation::Identity
    } else {
        Activation::Relu
    }
}

/// The graph in the form the encoder propagates over.
#[derive(Debug, Clone)]
pub enum Propagation {
    /// Neighbor sets for attention, self-loop policy already applied.
    Attention(SparseGraph),
    Normalized(NormalizedAdjacency),
}

#[derive(Debug)]
pub enum LayerCache<'a> {
    Gat(GatCache<'a>),
    Gcn(GcnCache<'a>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: DenseMatrix,
    pub attention: Option<Vec<f64>>,
}

impl LayerGrads {
    pub fn buffers(&self) -> Vec<&[f64]> {
        match &self.attention {
            Some(a) => vec![self.weight.data(), a],
            None => vec![self.weight.data()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub layers: Vec<LayerGrads>,
}

impl ModelGrads {
    pub fn buffers(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(LayerGrads::buffers).collect()
    }
}

impl GaeModel {
    /// Validates dimensions and per-layer parameter shapes.
    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::Config("layer_dims needs at least an input and an embedding size".into()));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::Config("layer dimensions must be positive".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.layers.len() + 1 != self.layer_dims.len() {
            return Err(Error::Config(format!(
                "{} layers for {} layer dims",
                self.layers.len(),
                self.layer_dims.len()
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let expected = (self.layer_dims[l], self.layer_dims[l + 1]);
            if layer.weight().shape() != expected {
                return Err(Error::Config(format!(
                    "layer {l} weight is {:?}, expected {expected:?}",
                    layer.weight().shape()
                )));
            }
            match (self.kind, layer) {
                (EncoderKind::Gat, LayerParams::Gat(p)) if p.attention.len() == 2 * expected.1 => {}
                (EncoderKind::Gcn, LayerParams::Gcn(_)) => {}
                _ => {
                    return Err(Error::Config(format!(
                        "layer {l} does not match encoder kind {:?}",
                        self.kind
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn embed_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn buffers(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(LayerParams::buffers).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(LayerParams::buffers_mut).collect()
    }

    /// Applies this model's self-loop policy to `g` for propagation.
    pub fn propagation(&self, g: &SparseGraph) -> Propagation {
        match self.kind {
            EncoderKind::Gat => Propagation::Attention(if self.self_loops {
                g.with_self_loops()
            } else {
                g.clone()
            }),
            EncoderKind::Gcn => Propagation::Normalized(symmetric_normalize(g, self.self_loops)),
        }
    }

    /// Runs the encoder, returning the embeddings and per-layer caches.
    pub fn encode<'a>(
        &self,
        prop: &'a Propagation,
        x: &DenseMatrix,
    ) -> Result<(DenseMatrix, Vec<LayerCache<'a>>)> {
        let n = match prop {
            Propagation::Attention(g) => g.num_nodes(),
            Propagation::Normalized(a) => a.num_nodes(),
        };
        if x.rows() != n || x.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "encode",
                lhs: (n, self.input_dim()),
                rhs: x.shape(),
            });
        }
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, cache) = match (layer, prop) {
                (LayerParams::Gat(p), Propagation::Attention(g)) => {
                    let (o, c) = gat_forward(g, &h, p)?;
                    (o, LayerCache::Gat(c))
                }
                (LayerParams::Gcn(p), Propagation::Normalized(a)) => {
                    let (o, c) = gcn_forward(a, &h, p)?;
                    (o, LayerCache::Gcn(c))
                }
                _ => return Err(Error::Config("propagation does not match encoder kind".into())),
            };
            caches.push(cache);
            h = out;
        }
        Ok((h, caches))
    }

    /// Backpropagates `d_z` (gradient of the loss w.r.t. the embeddings)
    /// through the encoder.
    pub fn backward(&self, caches: &[LayerCache<'_>], d_z: &DenseMatrix) -> Result<ModelGrads> {
        let mut upstream = d_z.clone();
        let mut grads = Vec::with_capacity(self.layers.len());
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            let (g, d_in) = match (layer, cache) {
                (LayerParams::Gat(p), LayerCache::Gat(c)) => {
                    let g = gat_backward(p, c, &upstream)?;
                    (
                        LayerGrads {
                            weight: g.weight,
                            attention: Some(g.attention),
                        },
                        g.input,
                    )
                }
                (LayerParams::Gcn(p), LayerCache::Gcn(c)) => {
                    let g = gcn_backward(p, c, &upstream)?;
                    (
                        LayerGrads {
                            weight: g.weight,
                            attention: None,
                        },
                        g.input,
                    )
                }
                _ => return Err(Error::Input("cache does not match layer kind".into())),
            };
            grads.push(g);
            upstream = d_in;
        }
        grads.reverse();
        Ok(ModelGrads { layers: grads })
    }

    /// Forward pass, loss, and exact gradients of the total loss for every
    /// parameter.
    pub fn loss_and_grads(
        &self,
        prop: &Propagation,
        g: &SparseGraph,
        x: &DenseMatrix,
        objective: &Objective,
    ) -> Result<(LossBreakdown, ModelGrads)> {
        let (z, caches) = self.encode(prop, x)?;
        let (loss, d_z) = objective_with_grad(g, &z, self.lambda, objective)?;
        let grads = self.backward(&caches, &d_z)?;
        Ok((loss, grads))
    }

    pub fn embed(&self, g: &SparseGraph, x: &DenseMatrix) -> Result<DenseMatrix> {
        let prop = self.propagation(g);
        Ok(self.encode(&prop, x)?.0)
    }
}

/// Dense `sigmoid(Z Zᵀ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructedAdjacency {
    n: usize,
    values: Vec<f64>,
}

impl ReconstructedAdjacency {
    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn decode_dense(z: &DenseMatrix, dense_limit: usize) -> Result<ReconstructedAdjacency> {
    let n = z.rows();
    if n > dense_limit {
        return Err(Error::Input(format!(
            "{n} nodes exceeds the dense decoding limit of {dense_limit}; use decode_entries"
        )));
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = sigmoid(dot(z.row(i), z.row(j)));
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    Ok(ReconstructedAdjacency { n, values })
}

/// `sigmoid(z_i · z_j)` for each requested pair.
pub fn decode_entries(z: &DenseMatrix, idx: &[(usize, usize)]) -> Result<Vec<f64>> {
    idx.iter()
        .map(|&(i, j)| {
            if i >= z.rows() || j >= z.rows() {
                Err(Error::NodeOutOfRange(i, j, z.rows()))
            } else {
                Ok(sigmoid(dot(z.row(i), z.row(j))))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub recon: f64,
    pub reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn new(recon: f64, reg: f64, lambda: f64) -> Self {
        LossBreakdown {
            recon,
            reg,
            total: recon + lambda * reg,
        }
    }
}

/// Which estimate of the reconstruction term to optimize.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Every ordered pair, diagonal included.
    Dense,
    /// All edges plus a uniform sample of non-edges, drawn from `seed`.
    Sampled { neg_ratio: f64, seed: u64 },
}

/// Exact reconstruction loss over all `N²` ordered pairs.
pub fn loss_dense(g: &SparseGraph, z: &DenseMatrix, lambda: f64) -> Result<LossBreakdown> {
    Ok(dense_recon(g, z, false)?.0.with_reg(z, lambda))
}

pub fn loss_sampled(
    g: &SparseGraph,
    z: &DenseMatrix,
    lambda: f64,
    neg_ratio: f64,
    seed: u64,
) -> Result<LossBreakdown> {
    let entries = sample_entries(g, neg_ratio, seed)?;
    Ok(sampled_recon(&entries, z, false)?.0.with_reg(z, lambda))
}

/// Loss and its gradient with respect to the embeddings, including the
/// `2λZ` regularizer term.
pub fn objective_with_grad(
    g: &SparseGraph,
    z: &DenseMatrix,
    lambda: f64,
    objective: &Objective,
) -> Result<(LossBreakdown, DenseMatrix)> {
    let (recon, d_z) = match *objective {
        Objective::Dense => dense_recon(g, z, true)?,
        Objective::Sampled { neg_ratio, seed } => {
            let entries = sample_entries(g, neg_ratio, seed)?;
            sampled_recon(&entries, z, true)?
        }
    };
    let mut d_z = d_z.expect("gradient requested");
    d_z.add_scaled(z, 2.0 * lambda)?;
    Ok((recon.with_reg(z, lambda), d_z))
}

struct Recon(f64);

impl Recon {
    fn with_reg(self, z: &DenseMatrix, lambda: f64) -> LossBreakdown {
        LossBreakdown::new(self.0, z.sum_sq(), lambda)
    }
}

fn check_graph(g: &SparseGraph, z: &DenseMatrix) -> Result<()> {
    if g.num_nodes() != z.rows() {
        return Err(Error::Shape {
            op: "reconstruction loss",
            lhs: (g.num_nodes(), g.num_nodes()),
            rhs: z.shape(),
        });
    }
    z.ensure_finite("embeddings")
}

// d/ds of (sigmoid(s) - target)^2
#[inline]
fn entry_grad(p: f64, target: f64) -> f64 {
    2.0 * (p - target) * p * (1.0 - p)
}

/// Sums over every ordered pair in row-major order.
fn dense_recon(g: &SparseGraph, z: &DenseMatrix, want_grad: bool) -> Result<(Recon, Option<DenseMatrix>)> {
    check_graph(g, z)?;
    let n = z.rows();
    let d = z.cols();
    let mut grad = want_grad.then(|| DenseMatrix::zeros(n, d));
    let mut recon = 0.0;
    for i in 0..n {
        let nbrs = g.neighbors(i);
        for j in 0..n {
            let target = if j != i && nbrs.binary_search(&j).is_ok() { 1.0 } else { 0.0 };
            let p = sigmoid(dot(z.row(i), z.row(j)));
            recon += (p - target) * (p - target);
            if let Some(gr) = grad.as_mut() {
                // d/dz_i and d/dz_j of (p - t)² with p = σ(z_i·z_j)
                let coef = entry_grad(p, target);
                for c in 0..d {
                    let zi = z.get(i, c);
                    let zj = z.get(j, c);
                    gr.row_mut(i)[c] += coef * zj;
                    gr.row_mut(j)[c] += coef * zi;
                }
            }
        }
    }
    Ok((Recon(recon), grad))
}

/// A weighted set of ordered `(i, j)` entries standing in for the full
/// reconstruction sum.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledEntries {
    /// `(i, j)` for every non-loop edge, stored once with weight 2.
    pub positives: Vec<(usize, usize)>,
    /// Ordered zero-target entries, diagonal included.
    pub negatives: Vec<(usize, usize)>,
    /// `population / sample size` for the negatives.
    pub negative_weight: f64,
    pub negative_population: usize,
}

/// Draws `ceil(neg_ratio · |E|)` distinct zero-target entries uniformly
/// (capped at the population). With full coverage the weighted sum equals
/// the dense loss.
pub fn sample_entries(g: &SparseGraph, neg_ratio: f64, seed: u64) -> Result<SampledEntries> {
    if !(neg_ratio > 0.0 && neg_ratio.is_finite()) {
        return Err(Error::Config(format!("neg_ratio must be > 0, got {neg_ratio}")));
    }
    let target = g.without_self_loops();
    let n = target.num_nodes();
    let positives: Vec<(usize, usize)> = target.edges().collect();

    // zero-target entries per row: everything except the row's neighbors
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0usize);
    for i in 0..n {
        prefix.push(prefix[i] + n - target.degree(i));
    }
    let population = prefix[n];
    if population == 0 {
        warn!("graph has no zero-target entries; sampled loss uses positives only");
        return Ok(SampledEntries {
            positives,
            negatives: Vec::new(),
            negative_weight: 0.0,
            negative_population: 0,
        });
    }
    let wanted = ((neg_ratio * positives.len() as f64).ceil() as usize).max(1);
    let k = wanted.min(population);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = index::sample(&mut rng, population, k).into_vec();
    picks.sort_unstable();

    let mut negatives = Vec::with_capacity(k);
    let mut row = 0;
    for m in picks {
        while prefix[row + 1] <= m {
            row += 1;
        }
        let mut col = m - prefix[row];
        // col-th column not in the (sorted) neighbor list
        for &nb in target.neighbors(row) {
            if nb <= col {
                col += 1;
            } else {
                break;
            }
        }
        negatives.push((row, col));
    }
    Ok(SampledEntries {
        positives,
        negatives,
        negative_weight: population as f64 / k as f64,
        negative_population: population,
    })
}

fn sampled_recon(
    entries: &SampledEntries,
    z: &DenseMatrix,
    want_grad: bool,
) -> Result<(Recon, Option<DenseMatrix>)> {
    z.ensure_finite("embeddings")?;
    let mut grad = want_grad.then(|| DenseMatrix::zeros(z.rows(), z.cols()));
    let mut pos = 0.0;
    let mut neg = 0.0;
    let groups = [
        (&entries.positives, 1.0, 2.0),
        (&entries.negatives, 0.0, entries.negative_weight),
    ];
    for (gi, (list, target, weight)) in groups.into_iter().enumerate() {
        for &(i, j) in list.iter() {
            if i >= z.rows() || j >= z.rows() {
                return Err(Error::NodeOutOfRange(i, j, z.rows()));
            }
            let p = sigmoid(dot(z.row(i), z.row(j)));
            let sq = (p - target) * (p - target);
            if gi == 0 {
                pos += sq;
            } else {
                neg += sq;
            }
            if let Some(gr) = grad.as_mut() {
                let coef = weight * entry_grad(p, target);
                for c in 0..z.cols() {
                    let zi = z.get(i, c);
                    let zj = z.get(j, c);
                    gr.row_mut(i)[c] += coef * zj;
                    gr.row_mut(j)[c] += coef * zi;
                }
            }
        }
    }
    Ok((Recon(2.0 * pos + entries.negative_weight * neg), grad))
}
