//! Encoder block: positional encoding, then `conv × N`, self-attention and a
//! feed-forward layer, each as a pre-layernorm residual sublayer with
//! stochastic depth.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{Bound, Init, ParamId, ParamStore};
use super::{apply_dropout, ModelError};
use crate::tensor::{depthwise_separable_conv1d, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderStackConfig {
    pub num_blocks: usize,
    pub num_conv_layers: usize,
    pub kernel_size: usize,
    pub hidden: usize,
    pub heads: usize,
    /// Survival probability of the last sublayer of the stack.
    pub survival_last: f64,
    /// Dropout on each sublayer output before the residual add.
    pub layer_dropout: f64,
}

impl EncoderStackConfig {
    pub fn sublayers(&self) -> usize {
        self.num_blocks * (self.num_conv_layers + 2)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if !self.hidden.is_multiple_of(2) {
            return Err(ModelError::OddDimension(self.hidden));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(ModelError::Config(format!(
                "kernel size {} is even",
                self.kernel_size
            )));
        }
        Ok(())
    }
}

/// Sinusoidal position table, `[len, d]`.
pub fn positional_encoding(len: usize, d: usize) -> Result<Tensor, ModelError> {
    if !d.is_multiple_of(2) {
        return Err(ModelError::OddDimension(d));
    }
    Ok(Tensor::from_fn([len, d], |idx| {
        let (pos, ch) = (idx / d, idx % d);
        let pair = (ch / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
        if ch % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}

/// `p_l = 1 - (l / L)(1 - p_L)` for sublayer `l` of `L` (1-based).
pub fn survival_probability(l: usize, total: usize, survival_last: f64) -> f64 {
    1.0 - (l as f64 / total as f64) * (1.0 - survival_last)
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    fn new(store: &mut ParamStore, prefix: &str, d: usize) -> Self {
        Self {
            gain: store.add(format!("{prefix}.ln.gain"), Tensor::full([d], 1.0), true),
            bias: store.add(format!("{prefix}.ln.bias"), Tensor::zeros([d]), true),
        }
    }
}

/// Pre-layernorm residual wrapper with stochastic depth.
///
/// With an `rng` (training) the sublayer survives with probability
/// `survival_prob`; a dropped sublayer returns `x` unchanged. Without an
/// `rng` the output is always `x + f(LN(x))`.
#[allow(clippy::too_many_arguments)]
pub fn residual_sublayer<F>(
    tape: &mut Tape,
    x: Var,
    ln_gain: Var,
    ln_bias: Var,
    survival_prob: f64,
    dropout: f64,
    mut rng: Option<&mut ChaCha8Rng>,
    f: F,
) -> Result<Var, ModelError>
where
    F: FnOnce(&mut Tape, Var, Option<&mut ChaCha8Rng>) -> Result<Var, ModelError>,
{
    if let Some(r) = rng.as_deref_mut() {
        if r.random::<f64>() >= survival_prob {
            return Ok(x);
        }
    }
    let normed = tape.layernorm(x, ln_gain, ln_bias)?;
    let out = f(tape, normed, rng.as_deref_mut())?;
    let out = apply_dropout(tape, out, dropout, rng)?;
    Ok(tape.add(x, out)?)
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

impl AttentionParams {
    pub(crate) fn new(store: &mut ParamStore, init: &mut Init, prefix: &str, d: usize) -> Self {
        let mut w = |n: &str| store.add(format!("{prefix}.{n}"), init.glorot(&[d, d]), true);
        Self {
            wq: w("wq"),
            wk: w("wk"),
            wv: w("wv"),
            wo: w("wo"),
        }
    }
}

/// Scaled dot-product multi-head self-attention over `x: [B, L, d]`.
///
/// `key_mask` is `[B, L]` with 1 on real positions; masked keys get zero weight.
pub fn multi_head_self_attention(
    tape: &mut Tape,
    x: Var,
    params: &AttentionParams,
    bound: &Bound,
    key_mask: &Tensor,
    heads: usize,
) -> Result<Var, ModelError> {
    let (attn, _) = self_attention_weights(tape, x, params, bound, key_mask, heads)?;
    Ok(attn)
}

/// Like [`multi_head_self_attention`] but also returns the `[B, h, L, L]`
/// attention weights.
pub fn self_attention_weights(
    tape: &mut Tape,
    x: Var,
    params: &AttentionParams,
    bound: &Bound,
    key_mask: &Tensor,
    heads: usize,
) -> Result<(Var, Var), ModelError> {
    let shape = tape.shape(x).to_vec();
    let (b, len, d) = (shape[0], shape[1], shape[2]);
    if d % heads != 0 || key_mask.shape() != [b, len] {
        return Err(ModelError::Tensor(crate::tensor::TensorError::DimensionMismatch {
            op: "multi_head_self_attention",
            lhs: shape,
            rhs: key_mask.shape().to_vec(),
        }));
    }
    let dh = d / heads;
    let mut project = |w: ParamId| -> Result<Var, ModelError> {
        let p = tape.matmul(x, bound.var(w))?;
        let p = tape.reshape(p, &[b, len, heads, dh])?;
        Ok(tape.permute(p, &[0, 2, 1, 3])?)
    };
    let q = project(params.wq)?;
    let k = project(params.wk)?;
    let v = project(params.wv)?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
    let mask = key_mask.clone().reshape([b, 1, 1, len])?;
    let weights = tape.masked_softmax(scores, 3, &mask)?;
    let ctx = tape.matmul(weights, v)?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, &[b, len, d])?;
    Ok((tape.matmul(ctx, bound.var(params.wo))?, weights))
}

#[derive(Debug, Clone, Copy)]
struct ConvSublayer {
    ln: LayerNormParams,
    depth: ParamId,
    point: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct FfnSublayer {
    ln: LayerNormParams,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct EncoderBlock {
    convs: Vec<ConvSublayer>,
    attn_ln: LayerNormParams,
    attn: AttentionParams,
    ffn: FfnSublayer,
}

/// A stack of encoder blocks sharing one stochastic-depth schedule.
#[derive(Debug, Clone)]
pub struct EncoderStack {
    pub config: EncoderStackConfig,
    blocks: Vec<EncoderBlock>,
}

impl EncoderStack {
    pub(crate) fn new(
        store: &mut ParamStore,
        init: &mut Init,
        prefix: &str,
        config: EncoderStackConfig,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.hidden;
        let k = config.kernel_size;
        let blocks = (0..config.num_blocks)
            .map(|bi| {
                let bp = format!("{prefix}.block{bi}");
                let convs = (0..config.num_conv_layers)
                    .map(|ci| {
                        let cp = format!("{bp}.conv{ci}");
                        ConvSublayer {
                            ln: LayerNormParams::new(store, &cp, d),
                            depth: store.add(format!("{cp}.depth"), init.glorot(&[k, d]), true),
                            point: store.add(format!("{cp}.point"), init.glorot(&[d, d]), true),
                            bias: store.add(format!("{cp}.bias"), Tensor::zeros([d]), true),
                        }
                    })
                    .collect();
                let ap = format!("{bp}.attn");
                let attn_ln = LayerNormParams::new(store, &ap, d);
                let attn = AttentionParams::new(store, init, &ap, d);
                let fp = format!("{bp}.ffn");
                let ffn = FfnSublayer {
                    ln: LayerNormParams::new(store, &fp, d),
                    w1: store.add(format!("{fp}.w1"), init.glorot(&[d, d]), true),
                    b1: store.add(format!("{fp}.b1"), Tensor::zeros([d]), true),
                    w2: store.add(format!("{fp}.w2"), init.glorot(&[d, d]), true),
                    b2: store.add(format!("{fp}.b2"), Tensor::zeros([d]), true),
                };
                EncoderBlock {
                    convs,
                    attn_ln,
                    attn,
                    ffn,
                }
            })
            .collect();
        Ok(Self { config, blocks })
    }

    /// Runs every block on `x: [B, L, d]` with `mask: [B, L]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        mask: &Tensor,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, ModelError> {
        let cfg = &self.config;
        let shape = tape.shape(x).to_vec();
        let (b, len) = (shape[0], shape[1]);
        let pe = tape.constant(positional_encoding(len, cfg.hidden)?);
        let mask3 = tape.constant(mask.clone().reshape([b, len, 1])?);
        let total = cfg.sublayers();
        let mut l = 0;
        let mut x = x;
        for block in &self.blocks {
            x = tape.add(x, pe)?;
            for conv in &block.convs {
                l += 1;
                x = residual_sublayer(
                    tape,
                    x,
                    bound.var(conv.ln.gain),
                    bound.var(conv.ln.bias),
                    survival_probability(l, total, cfg.survival_last),
                    cfg.layer_dropout,
                    rng.as_deref_mut(),
                    |t, y, _| {
                        let y = t.mul(y, mask3)?;
                        let c = depthwise_separable_conv1d(
                            t,
                            y,
                            bound.var(conv.depth),
                            bound.var(conv.point),
                            bound.var(conv.bias),
                        )?;
                        let c = t.relu(c);
                        Ok(t.mul(c, mask3)?)
                    },
                )?;
            }
            l += 1;
            x = residual_sublayer(
                tape,
                x,
                bound.var(block.attn_ln.gain),
                bound.var(block.attn_ln.bias),
                survival_probability(l, total, cfg.survival_last),
                cfg.layer_dropout,
                rng.as_deref_mut(),
                |t, y, _| multi_head_self_attention(t, y, &block.attn, bound, mask, cfg.heads),
            )?;
            l += 1;
            let ffn = &block.ffn;
            x = residual_sublayer(
                tape,
                x,
                bound.var(ffn.ln.gain),
                bound.var(ffn.ln.bias),
                survival_probability(l, total, cfg.survival_last),
                cfg.layer_dropout,
                rng.as_deref_mut(),
                |t, y, _| {
                    let h = t.matmul(y, bound.var(ffn.w1))?;
                    let h = t.add(h, bound.var(ffn.b1))?;
                    let h = t.relu(h);
                    let o = t.matmul(h, bound.var(ffn.w2))?;
                    Ok(t.add(o, bound.var(ffn.b2))?)
                },
            )?;
        }
        Ok(x)
    }
}
