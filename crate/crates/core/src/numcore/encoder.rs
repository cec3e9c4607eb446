//! Post-norm Transformer encoder layers built on [`Graph`].

use rand::Rng;

use super::graph::{Graph, NodeId};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 128,
            n_heads: 4,
            n_layers: 4,
            d_ff: 256,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_layers == 0 {
            return Err(Error::Config("n_layers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Parameter handles of one encoder layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerParams {
    pub wq: ParamId,
    pub bq: ParamId,
    /// Keys carry no bias: softmax ignores a per-row constant, so its
    /// gradient would be identically zero.
    pub wk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ff_w1: ParamId,
    pub ff_b1: ParamId,
    pub ff_w2: ParamId,
    pub ff_b2: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

/// Registers `[1, n]` layer-norm gain (ones) and bias (zeros).
pub fn register_layer_norm(store: &mut ParamStore, prefix: &str, n: usize) -> Result<(ParamId, ParamId)> {
    let g = store.register(format!("{prefix}.gain"), Tensor::full(&[1, n], 1.0))?;
    let b = store.register(format!("{prefix}.bias"), Tensor::zeros(&[1, n]))?;
    Ok((g, b))
}

pub fn register_linear(
    store: &mut ParamStore,
    prefix: &str,
    d_in: usize,
    d_out: usize,
    std: f64,
    rng: &mut impl Rng,
) -> Result<(ParamId, ParamId)> {
    let w = store.normal(format!("{prefix}.weight"), d_in, d_out, std, rng)?;
    let b = store.register(format!("{prefix}.bias"), Tensor::zeros(&[1, d_out]))?;
    Ok((w, b))
}

impl LayerParams {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &EncoderConfig,
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<LayerParams> {
        let d = cfg.d_model;
        let (wq, bq) = register_linear(store, &format!("{prefix}.attn.query"), d, d, std, rng)?;
        let wk = store.normal(format!("{prefix}.attn.key.weight"), d, d, std, rng)?;
        let (wv, bv) = register_linear(store, &format!("{prefix}.attn.value"), d, d, std, rng)?;
        let (wo, bo) = register_linear(store, &format!("{prefix}.attn.output"), d, d, std, rng)?;
        let (ln1_gain, ln1_bias) = register_layer_norm(store, &format!("{prefix}.ln1"), d)?;
        let (ff_w1, ff_b1) = register_linear(store, &format!("{prefix}.ff.in"), d, cfg.d_ff, std, rng)?;
        let (ff_w2, ff_b2) = register_linear(store, &format!("{prefix}.ff.out"), cfg.d_ff, d, std, rng)?;
        let (ln2_gain, ln2_bias) = register_layer_norm(store, &format!("{prefix}.ln2"), d)?;
        Ok(LayerParams {
            wq,
            bq,
            wk,
            wv,
            bv,
            wo,
            bo,
            ln1_gain,
            ln1_bias,
            ff_w1,
            ff_b1,
            ff_w2,
            ff_b2,
            ln2_gain,
            ln2_bias,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    pub fn register(
        store: &mut ParamStore,
        cfg: &EncoderConfig,
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<EncoderParams> {
        cfg.validate()?;
        let layers = (0..cfg.n_layers)
            .map(|i| LayerParams::register(store, &format!("encoder.layer{i}"), cfg, std, rng))
            .collect::<Result<_>>()?;
        Ok(EncoderParams {
            config: *cfg,
            layers,
        })
    }
}

fn linear(g: &mut Graph, x: NodeId, w: ParamId, b: ParamId) -> Result<NodeId> {
    let w = g.param(w)?;
    let b = g.param(b)?;
    g.linear(x, w, b)
}

/// Multi-head self-attention, residual, layer norm, feed-forward, residual,
/// layer norm.
pub fn attention_layer(g: &mut Graph, x: NodeId, p: &LayerParams, cfg: &EncoderConfig) -> Result<NodeId> {
    let d = g.value(x).cols();
    if d != cfg.d_model {
        return Err(Error::Shape {
            op: "attention_layer",
            left: g.value(x).shape().to_vec(),
            right: vec![cfg.d_model],
        });
    }
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let q = linear(g, x, p.wq, p.bq)?;
    let wk = g.param(p.wk)?;
    let k = g.matmul(x, wk)?;
    let v = linear(g, x, p.wv, p.bv)?;
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let (qh, kh, vh) = if cfg.n_heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * hd, hd)?,
                g.slice_cols(k, h * hd, hd)?,
                g.slice_cols(v, h * hd, hd)?,
            )
        };
        let scores = g.matmul_t(qh, kh)?;
        let scores = g.scale(scores, scale)?;
        let attn = g.softmax(scores)?;
        heads.push(g.matmul(attn, vh)?);
    }
    let ctx = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_cols(&heads)?
    };
    let attn_out = linear(g, ctx, p.wo, p.bo)?;
    let res1 = g.add(x, attn_out)?;
    let (g1, b1) = (g.param(p.ln1_gain)?, g.param(p.ln1_bias)?);
    let h1 = g.layer_norm(res1, g1, b1)?;
    let ff = linear(g, h1, p.ff_w1, p.ff_b1)?;
    let ff = g.gelu(ff)?;
    let ff = linear(g, ff, p.ff_w2, p.ff_b2)?;
    let res2 = g.add(h1, ff)?;
    let (g2, b2) = (g.param(p.ln2_gain)?, g.param(p.ln2_bias)?);
    g.layer_norm(res2, g2, b2)
}

/// Hidden states after every layer of the encoder.
#[derive(Debug, Clone)]
pub struct HiddenStates {
    layers: Vec<NodeId>,
}

impl HiddenStates {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// `l`-th layer counted from the last (`l = 1` is the final layer).
    pub fn from_last(&self, l: usize) -> Result<NodeId> {
        if l == 0 || l > self.layers.len() {
            return Err(Error::Config(format!(
                "hidden layer {l} from the last requested, encoder has {}",
                self.layers.len()
            )));
        }
        Ok(self.layers[self.layers.len() - l])
    }

    pub fn last(&self) -> NodeId {
        *self.layers.last().expect("at least one layer")
    }

    pub fn all(&self) -> &[NodeId] {
        &self.layers
    }
}

/// Runs every layer over a `[L, d_model]` sequence.
pub fn encode(g: &mut Graph, x: NodeId, params: &EncoderParams) -> Result<HiddenStates> {
    if g.value(x).rows() == 0 {
        return Err(Error::Shape {
            op: "encode",
            left: g.value(x).shape().to_vec(),
            right: vec![],
        });
    }
    let mut layers = Vec::with_capacity(params.layers.len());
    let mut h = x;
    for layer in &params.layers {
        h = attention_layer(g, h, layer, &params.config)?;
        layers.push(h);
    }
    Ok(HiddenStates { layers })
}
