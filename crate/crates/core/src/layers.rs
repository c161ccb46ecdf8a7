//! Graph attention and graph convolution layers with hand-written backward
//! passes.
//!
//! GAT layer, for a receiving node `i` and each neighbor `j` in its row:
//!
//! ```text
//! e_ij     = leaky_relu(a_selfᵀ W h_i + a_neighᵀ W h_j)
//! alpha_ij = softmax_j(e_ij)
//! out_i    = act(sum_j alpha_ij W h_j)
//! ```
//!
//! GCN layer: `out = act(Â H W)` with `Â` the symmetric normalized adjacency.

use crate::error::{Error, Result};
use crate::graph::{NormalizedAdjacency, SparseGraph};
use crate::numerics::{
    dot, matmul, matmul_nt, matmul_tn, segment_softmax, spmm, Activation, DenseMatrix,
};

/// Trainable state of one attention layer.
///
/// `attention` has length `2 * d_out`: the first half scores the receiving
/// node's transformed features, the second half the neighbor's.
#[derive(Debug, Clone, PartialEq)]
pub struct GatParams {
    pub weight: DenseMatrix,
    pub attention: Vec<f64>,
    pub leaky_slope: f64,
    pub activation: Activation,
}

impl GatParams {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    fn attention_halves(&self) -> (&[f64], &[f64]) {
        self.attention.split_at(self.out_dim())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    pub weight: DenseMatrix,
    pub activation: Activation,
}

/// Everything `gat_backward` needs from the forward pass.
#[derive(Debug, Clone)]
pub struct GatCache<'g> {
    pub graph: &'g SparseGraph,
    pub input: DenseMatrix,
    /// `H W`
    pub transformed: DenseMatrix,
    /// Attention scores before the leaky-relu, one per stored edge.
    pub raw_scores: Vec<f64>,
    /// Softmax-normalized attention weights, one per stored edge.
    pub alpha: Vec<f64>,
    pub pre_activation: DenseMatrix,
}

#[derive(Debug, Clone)]
pub struct GcnCache<'a> {
    pub adj: &'a NormalizedAdjacency,
    /// `Â H`
    pub propagated: DenseMatrix,
    pub pre_activation: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatGrads {
    pub weight: DenseMatrix,
    pub attention: Vec<f64>,
    pub input: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnGrads {
    pub weight: DenseMatrix,
    pub input: DenseMatrix,
}

pub fn gat_forward<'g>(
    g: &'g SparseGraph,
    h: &DenseMatrix,
    p: &GatParams,
) -> Result<(DenseMatrix, GatCache<'g>)> {
    if h.rows() != g.num_nodes() {
        return Err(Error::Shape {
            op: "gat_forward",
            lhs: (g.num_nodes(), g.num_nodes()),
            rhs: h.shape(),
        });
    }
    if p.attention.len() != 2 * p.out_dim() {
        return Err(Error::Input(format!(
            "attention vector has length {}, expected {}",
            p.attention.len(),
            2 * p.out_dim()
        )));
    }
    if let Some(i) = (0..g.num_nodes()).find(|&i| g.degree(i) == 0) {
        return Err(Error::Config(format!(
            "node {i} has no neighbors to attend over; enable self-loops"
        )));
    }
    let transformed = matmul(h, &p.weight)?;
    let (a_self, a_neigh) = p.attention_halves();
    let self_score: Vec<f64> = (0..g.num_nodes())
        .map(|i| dot(a_self, transformed.row(i)))
        .collect();
    let neigh_score: Vec<f64> = (0..g.num_nodes())
        .map(|j| dot(a_neigh, transformed.row(j)))
        .collect();

    let leaky = Activation::LeakyRelu(p.leaky_slope);
    let mut raw_scores = Vec::with_capacity(g.col_indices().len());
    for i in 0..g.num_nodes() {
        for &j in g.neighbors(i) {
            raw_scores.push(self_score[i] + neigh_score[j]);
        }
    }
    let logits: Vec<f64> = raw_scores.iter().map(|&e| leaky.apply(e)).collect();
    let alpha = segment_softmax(&logits, g.row_offsets())?;

    let d = p.out_dim();
    let mut pre_activation = DenseMatrix::zeros(g.num_nodes(), d);
    for i in 0..g.num_nodes() {
        let start = g.row_offsets()[i];
        let out_row = pre_activation.row_mut(i);
        for (k, &j) in g.neighbors(i).iter().enumerate() {
            let w = alpha[start + k];
            for (o, &v) in out_row.iter_mut().zip(transformed.row(j)) {
                *o += w * v;
            }
        }
    }
    let out = pre_activation.map(|v| p.activation.apply(v));
    let cache = GatCache {
        graph: g,
        input: h.clone(),
        transformed,
        raw_scores,
        alpha,
        pre_activation,
    };
    Ok((out, cache))
}

pub fn gat_backward(p: &GatParams, cache: &GatCache<'_>, upstream: &DenseMatrix) -> Result<GatGrads> {
    let g = cache.graph;
    let n = g.num_nodes();
    let d = p.out_dim();
    if upstream.shape() != (n, d) {
        return Err(Error::Shape {
            op: "gat_backward",
            lhs: (n, d),
            rhs: upstream.shape(),
        });
    }
    let mut d_pre = upstream.clone();
    for (dv, &x) in d_pre.data_mut().iter_mut().zip(cache.pre_activation.data()) {
        *dv *= p.activation.derivative(x);
    }

    let leaky = Activation::LeakyRelu(p.leaky_slope);
    let wh = &cache.transformed;
    let mut d_wh = DenseMatrix::zeros(n, d);
    let mut d_self = vec![0.0; n];
    let mut d_neigh = vec![0.0; n];
    let mut d_alpha = Vec::new();
    for i in 0..n {
        let start = g.row_offsets()[i];
        let neighbors = g.neighbors(i);
        let alpha = &cache.alpha[start..start + neighbors.len()];
        let dp = d_pre.row(i);
        d_alpha.clear();
        d_alpha.extend(neighbors.iter().map(|&j| dot(dp, wh.row(j))));
        for (&j, &a) in neighbors.iter().zip(alpha) {
            for (o, &v) in d_wh.row_mut(j).iter_mut().zip(dp) {
                *o += a * v;
            }
        }
        // softmax Jacobian: dlogit_k = alpha_k * (dalpha_k - sum_m alpha_m dalpha_m)
        let mean = dot(alpha, &d_alpha);
        for (k, &j) in neighbors.iter().enumerate() {
            let d_logit = alpha[k] * (d_alpha[k] - mean);
            let d_raw = d_logit * leaky.derivative(cache.raw_scores[start + k]);
            d_self[i] += d_raw;
            d_neigh[j] += d_raw;
        }
    }

    let (a_self, a_neigh) = p.attention_halves();
    let mut d_attention = vec![0.0; 2 * d];
    for i in 0..n {
        let row = wh.row(i);
        for c in 0..d {
            d_attention[c] += d_self[i] * row[c];
            d_attention[d + c] += d_neigh[i] * row[c];
        }
        let out = d_wh.row_mut(i);
        for c in 0..d {
            out[c] += d_self[i] * a_self[c] + d_neigh[i] * a_neigh[c];
        }
    }

    Ok(GatGrads {
        weight: matmul_tn(&cache.input, &d_wh)?,
        attention: d_attention,
        input: matmul_nt(&d_wh, &p.weight)?,
    })
}

pub fn gcn_forward<'a>(
    adj: &'a NormalizedAdjacency,
    h: &DenseMatrix,
    p: &GcnParams,
) -> Result<(DenseMatrix, GcnCache<'a>)> {
    let propagated = spmm(adj, h)?;
    let pre_activation = matmul(&propagated, &p.weight)?;
    let out = pre_activation.map(|v| p.activation.apply(v));
    Ok((
        out,
        GcnCache {
            adj,
            propagated,
            pre_activation,
        },
    ))
}

pub fn gcn_backward(p: &GcnParams, cache: &GcnCache<'_>, upstream: &DenseMatrix) -> Result<GcnGrads> {
    if upstream.shape() != cache.pre_activation.shape() {
        return Err(Error::Shape {
            op: "gcn_backward",
            lhs: cache.pre_activation.shape(),
            rhs: upstream.shape(),
        });
    }
    let mut d_pre = upstream.clone();
    for (dv, &x) in d_pre.data_mut().iter_mut().zip(cache.pre_activation.data()) {
        *dv *= p.activation.derivative(x);
    }
    let weight = matmul_tn(&cache.propagated, &d_pre)?;
    // Â is symmetric, so Âᵀ · (dpre Wᵀ) is another forward spmm.
    let input = spmm(cache.adj, &matmul_nt(&d_pre, &p.weight)?)?;
    Ok(GcnGrads { weight, input })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::symmetric_normalize;
    use crate::numerics::{grad_check, DEFAULT_GRAD_CHECK_STEP};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> SparseGraph {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(p) {
                    edges.push((i, j));
                }
            }
        }
        SparseGraph::from_edges(&edges, n).unwrap().with_self_loops()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
        DenseMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn gat_params(rng: &mut ChaCha8Rng, din: usize, dout: usize, act: Activation) -> GatParams {
        GatParams {
            weight: random_matrix(rng, din, dout),
            attention: (0..2 * dout).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            leaky_slope: 0.2,
            activation: act,
        }
    }

    /// Attention computed with plain loops over a dense
    /// adjacency, one node at a time.
    fn gat_oracle(adj: &DenseMatrix, h: &DenseMatrix, p: &GatParams) -> DenseMatrix {
        let n = h.rows();
        let d = p.out_dim();
        let mut wh = vec![vec![0.0; d]; n];
        for i in 0..n {
            for c in 0..d {
                for k in 0..h.cols() {
                    wh[i][c] += h.get(i, k) * p.weight.get(k, c);
                }
            }
        }
        let mut out = DenseMatrix::zeros(n, d);
        for i in 0..n {
            let nbrs: Vec<usize> = (0..n).filter(|&j| adj.get(i, j) != 0.0).collect();
            let e: Vec<f64> = nbrs
                .iter()
                .map(|&j| {
                    let mut s = 0.0;
                    for c in 0..d {
                        s += p.attention[c] * wh[i][c] + p.attention[d + c] * wh[j][c];
                    }
                    if s < 0.0 {
                        p.leaky_slope * s
                    } else {
                        s
                    }
                })
                .collect();
            let m = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = e.iter().map(|v| (v - m).exp()).sum();
            for c in 0..d {
                let mut acc = 0.0;
                for (k, &j) in nbrs.iter().enumerate() {
                    acc += (e[k] - m).exp() / z * wh[j][c];
                }
                out.set(i, c, p.activation.apply(acc));
            }
        }
        out
    }

    #[test]
    fn gat_matches_dense_oracle() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_graph(&mut rng, 6, 0.4);
            let h = random_matrix(&mut rng, 6, 4);
            let p = gat_params(&mut rng, 4, 3, Activation::Relu);
            let (out, _) = gat_forward(&g, &h, &p).unwrap();
            assert!(out.max_abs_diff(&gat_oracle(&g.to_dense(), &h, &p)) < 1e-12);
        }
    }

    #[test]
    fn zero_attention_is_mean_aggregation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_graph(&mut rng, 8, 0.3);
        let h = random_matrix(&mut rng, 8, 3);
        let mut p = gat_params(&mut rng, 3, 2, Activation::Identity);
        p.attention = vec![0.0; 4];
        let (out, cache) = gat_forward(&g, &h, &p).unwrap();
        let wh = matmul(&h, &p.weight).unwrap();
        for i in 0..8 {
            let deg = g.degree(i) as f64;
            for a in &cache.alpha[g.row_offsets()[i]..g.row_offsets()[i + 1]] {
                assert!((a - 1.0 / deg).abs() < 1e-15);
            }
            for c in 0..2 {
                let mean: f64 = g.neighbors(i).iter().map(|&j| wh.get(j, c)).sum::<f64>() / deg;
                assert!((out.get(i, c) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_node_identity() {
        let g = SparseGraph::from_edges(&[(0, 0)], 1).unwrap();
        let h = DenseMatrix::from_rows(&[vec![0.5, -2.0]]).unwrap();
        let p = GatParams {
            weight: DenseMatrix::identity(2),
            attention: vec![0.3, 0.1, -0.2, 0.7],
            leaky_slope: 0.2,
            activation: Activation::Identity,
        };
        assert_eq!(gat_forward(&g, &h, &p).unwrap().0, h);
    }

    #[test]
    fn neighborless_node_is_config_error() {
        let g = SparseGraph::from_edges(&[(0, 1)], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = gat_params(&mut rng, 2, 2, Activation::Relu);
        let err = gat_forward(&g, &DenseMatrix::zeros(3, 2), &p).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn gat_zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = random_graph(&mut rng, 6, 0.5);
        let h = random_matrix(&mut rng, 6, 3);
        let p = gat_params(&mut rng, 3, 2, Activation::Relu);
        let (_, cache) = gat_forward(&g, &h, &p).unwrap();
        let grads = gat_backward(&p, &cache, &DenseMatrix::zeros(6, 2)).unwrap();
        assert!(grads.weight.data().iter().all(|&v| v == 0.0));
        assert!(grads.attention.iter().all(|&v| v == 0.0));
        assert!(grads.input.data().iter().all(|&v| v == 0.0));
    }

    // Scalar probe: L = sum(out ⊙ R) for a fixed random R.
    fn gat_probe(
        g: &SparseGraph,
        h: &DenseMatrix,
        p: &GatParams,
        r: &DenseMatrix,
    ) -> (f64, GatGrads) {
        let (out, cache) = gat_forward(g, h, p).unwrap();
        let loss = crate::numerics::dot(out.data(), r.data());
        (loss, gat_backward(p, &cache, r).unwrap())
    }

    fn check_gat(seed: u64, slope: f64, zero_attention: bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, 6, 0.4);
        let h = random_matrix(&mut rng, 6, 4);
        let mut p = gat_params(&mut rng, 4, 3, Activation::Relu);
        p.leaky_slope = slope;
        if zero_attention {
            p.attention = vec![0.0; 6];
        }
        let r = random_matrix(&mut rng, 6, 3);
        let step = DEFAULT_GRAD_CHECK_STEP;

        let w = grad_check(
            |w| {
                let q = GatParams { weight: w.clone(), ..p.clone() };
                let (l, gr) = gat_probe(&g, &h, &q, &r);
                Ok((l, gr.weight))
            },
            &p.weight,
            step,
        )
        .unwrap();
        assert!(w.max_rel_error < 1e-4, "seed {seed} W: {w:?}");

        // With a linear score map the receiving-node half of `a` shifts every
        // logit in a row equally and has an exactly zero gradient; a relative
        // check there only measures roundoff, so compare it absolutely.
        let checked = if slope == 1.0 { 3..6 } else { 0..6 };
        let a0 = DenseMatrix::new(1, checked.len(), p.attention[checked.clone()].to_vec()).unwrap();
        let with_half = |half: &DenseMatrix| {
            let mut att = p.attention.clone();
            att[checked.clone()].copy_from_slice(half.data());
            GatParams { attention: att, ..p.clone() }
        };
        let a = grad_check(
            |half| {
                let (l, gr) = gat_probe(&g, &h, &with_half(half), &r);
                Ok((l, DenseMatrix::new(1, checked.len(), gr.attention[checked.clone()].to_vec()).unwrap()))
            },
            &a0,
            step,
        )
        .unwrap();
        assert!(a.max_rel_error < 1e-4, "seed {seed} a: {a:?}");
        if slope == 1.0 {
            let (_, gr) = gat_probe(&g, &h, &p, &r);
            assert!(gr.attention[..3].iter().all(|v| v.abs() < 1e-12));
        }

        let x = grad_check(
            |x| {
                let (l, gr) = gat_probe(&g, x, &p, &r);
                Ok((l, gr.input))
            },
            &h,
            step,
        )
        .unwrap();
        assert!(x.max_rel_error < 1e-4, "seed {seed} H: {x:?}");
    }

    #[test]
    fn gat_gradients_match_central_differences() {
        for seed in 0..20 {
            check_gat(seed, 0.2, false);
        }
    }

    #[test]
    fn gat_gradients_without_attention_nonlinearity() {
        // slope 1 makes the score map linear
        for seed in 100..105 {
            check_gat(seed, 1.0, false);
        }
    }

    #[test]
    fn gat_attention_gradient_nonzero_at_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let g = random_graph(&mut rng, 6, 0.5);
        let h = random_matrix(&mut rng, 6, 4);
        let mut p = gat_params(&mut rng, 4, 3, Activation::Identity);
        p.attention = vec![0.0; 6];
        let r = random_matrix(&mut rng, 6, 3);
        let (_, grads) = gat_probe(&g, &h, &p, &r);
        assert!(grads.attention.iter().any(|v| v.abs() > 1e-6));
        // all scores sit on the leaky-relu kink at a = 0, so check the linear case
        check_gat(42, 1.0, true);
    }

    fn gcn_setup(seed: u64) -> (NormalizedAdjacency, DenseMatrix, GcnParams, DenseMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, 7, 0.4).without_self_loops();
        let adj = symmetric_normalize(&g, true);
        let h = random_matrix(&mut rng, 7, 4);
        let p = GcnParams {
            weight: random_matrix(&mut rng, 4, 3),
            activation: Activation::Relu,
        };
        let r = random_matrix(&mut rng, 7, 3);
        (adj, h, p, r)
    }

    #[test]
    fn gcn_matches_dense_oracle() {
        for seed in 0..10 {
            let (adj, h, p, _) = gcn_setup(seed);
            let dense = adj.to_dense();
            let expected = matmul(&matmul(&dense, &h).unwrap(), &p.weight)
                .unwrap()
                .map(|v| v.max(0.0));
            let (out, _) = gcn_forward(&adj, &h, &p).unwrap();
            assert!(out.max_abs_diff(&expected) < 1e-12);
        }
    }

    #[test]
    fn gcn_identity_and_zero_cases() {
        let g = SparseGraph::from_edges(&[], 3).unwrap();
        let adj = symmetric_normalize(&g, true);
        let h = DenseMatrix::from_fn(3, 2, |i, j| i as f64 - j as f64);
        let p = GcnParams {
            weight: DenseMatrix::identity(2),
            activation: Activation::Identity,
        };
        assert_eq!(gcn_forward(&adj, &h, &p).unwrap().0, h);
        let relu = GcnParams { activation: Activation::Relu, ..p };
        let zero = gcn_forward(&adj, &DenseMatrix::zeros(3, 2), &relu).unwrap().0;
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gcn_linear_weight_gradient_closed_form() {
        let (adj, h, mut p, r) = gcn_setup(5);
        p.activation = Activation::Identity;
        let (_, cache) = gcn_forward(&adj, &h, &p).unwrap();
        let grads = gcn_backward(&p, &cache, &r).unwrap();
        let ah = matmul(&adj.to_dense(), &h).unwrap();
        let expected = matmul(&ah.transpose(), &r).unwrap();
        assert!(grads.weight.max_abs_diff(&expected) < 1e-12);
        let zero = gcn_backward(&p, &cache, &DenseMatrix::zeros(7, 3)).unwrap();
        assert!(zero.weight.data().iter().chain(zero.input.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn gcn_gradients_match_central_differences() {
        for seed in 0..20 {
            let (adj, h, p, r) = gcn_setup(seed);
            let probe = |h: &DenseMatrix, p: &GcnParams| {
                let (out, cache) = gcn_forward(&adj, h, p).unwrap();
                (dot(out.data(), r.data()), gcn_backward(p, &cache, &r).unwrap())
            };
            let w = grad_check(
                |w| {
                    let q = GcnParams { weight: w.clone(), ..p.clone() };
                    let (l, gr) = probe(&h, &q);
                    Ok((l, gr.weight))
                },
                &p.weight,
                DEFAULT_GRAD_CHECK_STEP,
            )
            .unwrap();
            assert!(w.max_rel_error < 1e-4, "seed {seed}: {w:?}");
            let x = grad_check(
                |x| {
                    let (l, gr) = probe(x, &p);
                    Ok((l, gr.input))
                },
                &h,
                DEFAULT_GRAD_CHECK_STEP,
            )
            .unwrap();
            assert!(x.max_rel_error < 1e-4, "seed {seed}: {x:?}");
        }
    }
}
