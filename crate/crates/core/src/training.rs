//! Glorot initialization, Adam, and the full-batch training loop.

use std::io::Write;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::layers::{GatParams, GcnParams};
use crate::model::{
    layer_activation, EncoderKind, GaeModel, LayerParams, LossBreakdown, Objective,
    DEFAULT_DENSE_LIMIT, DEFAULT_LAMBDA, DEFAULT_LEAKY_SLOPE,
};
use crate::numerics::DenseMatrix;

pub const DEFAULT_HIDDEN_DIM: usize = 64;
pub const DEFAULT_EMBED_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lambda: f64,
    pub seed: u64,
    pub neg_ratio: f64,
    pub dense_limit: usize,
    pub encoder_kind: EncoderKind,
    /// Input, hidden..., embedding sizes; an input size of 0 is taken from
    /// the feature width.
    pub layer_dims: Vec<usize>,
    pub self_loops: bool,
    pub leaky_slope: f64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr: 0.01,
            lambda: DEFAULT_LAMBDA,
            seed: 0,
            neg_ratio: 1.0,
            dense_limit: DEFAULT_DENSE_LIMIT,
            encoder_kind: EncoderKind::Gat,
            layer_dims: vec![0, DEFAULT_HIDDEN_DIM, DEFAULT_EMBED_DIM],
            self_loops: true,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        if !(self.neg_ratio > 0.0 && self.neg_ratio.is_finite()) {
            return Err(Error::Config(format!("neg_ratio must be > 0, got {}", self.neg_ratio)));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::Config("leaky_slope must be finite".into()));
        }
        Ok(())
    }
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-limit..=limit))
        .collect()
}

/// Glorot-uniform weights for every layer; attention vectors are drawn as a
/// `(2·d_out) × 1` matrix. Draw order is layer by layer, weight first.
pub fn init_model(
    kind: EncoderKind,
    layer_dims: &[usize],
    lambda: f64,
    self_loops: bool,
    leaky_slope: f64,
    seed: u64,
) -> Result<GaeModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_layers = layer_dims.len().saturating_sub(1);
    let mut layers = Vec::with_capacity(num_layers);
    for (l, dims) in layer_dims.windows(2).enumerate() {
        let (d_in, d_out) = (dims[0], dims[1]);
        let weight = DenseMatrix::new(d_in, d_out, glorot(&mut rng, d_in, d_out))?;
        let activation = layer_activation(l, num_layers);
        layers.push(match kind {
            EncoderKind::Gat => LayerParams::Gat(GatParams {
                weight,
                attention: glorot(&mut rng, 2 * d_out, 1),
                leaky_slope,
                activation,
            }),
            EncoderKind::Gcn => LayerParams::Gcn(GcnParams { weight, activation }),
        });
    }
    let model = GaeModel {
        kind,
        layer_dims: layer_dims.to_vec(),
        layers,
        lambda,
        self_loops,
        leaky_slope,
    };
    model.validate()?;
    Ok(model)
}

/// Bias-corrected Adam over a fixed list of parameter buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<()> {
        if params.len() != self.m.len()
            || grads.len() != self.m.len()
            || params.iter().zip(&grads).zip(&self.m).any(|((p, g), m)| {
                p.len() != m.len() || g.len() != m.len()
            })
        {
            return Err(Error::Input("parameter/gradient layout does not match optimizer state".into()));
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("gradient"));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub epoch: usize,
    pub recon: f64,
    pub reg: f64,
    pub total: f64,
}

/// Loss trace; each record holds the loss of the parameters an epoch
/// started from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,recon,reg,total")?;
        for r in &self.records {
            writeln!(w, "{},{:.16e},{:.16e},{:.16e}", r.epoch, r.recon, r.reg, r.total)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("ascii output")
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Dense objective up to `dense_limit` nodes, negative sampling beyond.
pub fn objective_for(cfg: &TrainConfig, num_nodes: usize, epoch: usize) -> Objective {
    if num_nodes <= cfg.dense_limit {
        Objective::Dense
    } else {
        Objective::Sampled {
            neg_ratio: cfg.neg_ratio,
            seed: epoch_seed(cfg.seed, epoch),
        }
    }
}

/// Full-batch training: one forward/backward/update per epoch.
pub fn train(g: &SparseGraph, x: &DenseMatrix, cfg: &TrainConfig) -> Result<(GaeModel, TrainLog)> {
    cfg.validate()?;
    let mut dims = cfg.layer_dims.clone();
    if dims.first().is_some_and(|&d| d != 0 && d != x.cols()) {
        return Err(Error::Config(format!(
            "input dimension {} does not match feature width {}",
            dims[0],
            x.cols()
        )));
    }
    if dims.len() < 2 {
        return Err(Error::Config("layer_dims needs at least an input and an embedding size".into()));
    }
    dims[0] = x.cols();
    if x.rows() != g.num_nodes() {
        return Err(Error::Input(format!(
            "{} feature rows for {} nodes",
            x.rows(),
            g.num_nodes()
        )));
    }
    let mut model = init_model(
        cfg.encoder_kind,
        &dims,
        cfg.lambda,
        cfg.self_loops,
        cfg.leaky_slope,
        cfg.seed,
    )?;
    let prop = model.propagation(g);
    let sizes: Vec<usize> = model.buffers().iter().map(|b| b.len()).collect();
    let mut adam = Adam::new(cfg.lr, &sizes);
    let mut log = TrainLog::default();
    let mut last_good = None;

    for epoch in 1..=cfg.epochs {
        let objective = objective_for(cfg, g.num_nodes(), epoch);
        let diverged = |reason: String| Error::Diverged {
            epoch,
            last_good,
            reason,
        };
        let (loss, grads) = match model.loss_and_grads(&prop, g, x, &objective) {
            Ok(v) => v,
            Err(Error::NonFinite(what)) => return Err(diverged(format!("non-finite {what}"))),
            Err(e) => return Err(e),
        };
        if !loss.total.is_finite() {
            return Err(diverged(format!("loss is {}", loss.total)));
        }
        if epoch == 1 || epoch % cfg.log_every == 0 || epoch == cfg.epochs {
            log.records.push(record(epoch, &loss));
            debug!("epoch {epoch}: total {:.6e}", loss.total);
        }
        match adam.step(model.buffers_mut(), grads.buffers()) {
            Ok(()) => {}
            Err(Error::NonFinite(what)) => return Err(diverged(format!("non-finite {what}"))),
            Err(e) => return Err(e),
        }
        if model.buffers().iter().any(|b| b.iter().any(|v| !v.is_finite())) {
            return Err(diverged("non-finite parameter after update".into()));
        }
        last_good = Some(epoch);
    }
    if let (Some(first), Some(last)) = (log.records.first(), log.records.last()) {
        info!(
            "trained {} epochs: total loss {:.6e} -> {:.6e}",
            cfg.epochs, first.total, last.total
        );
    }
    Ok((model, log))
}

fn record(epoch: usize, loss: &LossBreakdown) -> LogRecord {
    LogRecord {
        epoch,
        recon: loss.recon,
        reg: loss.reg,
        total: loss.total,
    }
}
