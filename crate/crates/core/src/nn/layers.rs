//! Pre-norm transformer blocks built on the tape.

use rand_chacha::ChaCha8Rng;

use super::params::{Init, ParamId, ParameterStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParameterStore, name: &str, input: usize, output: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Linear {
            weight: store.add(&format!("{name}.weight"), input, output, Init::TruncatedNormal(INIT_STD), rng)?,
            bias: store.add(&format!("{name}.bias"), 1, output, Init::Zeros, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParameterStore, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(LayerNorm {
            gain: store.add(&format!("{name}.gain"), 1, dim, Init::Ones, rng)?,
            bias: store.add(&format!("{name}.bias"), 1, dim, Init::Zeros, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let n = tape.layer_norm(x);
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        let y = tape.mul_row(n, g)?;
        tape.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParameterStore, name: &str, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("embed dim {dim} not divisible by {heads} heads")));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, rng)?,
            key: Linear::new(store, &format!("{name}.key"), dim, dim, rng)?,
            value: Linear::new(store, &format!("{name}.value"), dim, dim, rng)?,
            output: Linear::new(store, &format!("{name}.output"), dim, dim, rng)?,
            heads,
            dim,
        })
    }

    /// Attention of `queries` over `memory`. With `causal`, query row `i`
    /// only sees memory rows `0..=i`.
    pub fn forward(&self, tape: &mut Tape, queries: Var, memory: Var, causal: bool) -> Result<Var> {
        if tape.shape(queries).1 != self.dim || tape.shape(memory).1 != self.dim {
            return Err(Error::Shape {
                op: "multi_head_attention",
                detail: format!(
                    "queries {:?}, memory {:?}, expected width {}",
                    tape.shape(queries),
                    tape.shape(memory),
                    self.dim
                ),
            });
        }
        let q = self.query.forward(tape, queries)?;
        let k = self.key.forward(tape, memory)?;
        let v = self.value.forward(tape, memory)?;
        let head_dim = self.dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outputs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * head_dim, head_dim)?;
            let kh = tape.slice_cols(k, h * head_dim, head_dim)?;
            let vh = tape.slice_cols(v, h * head_dim, head_dim)?;
            let scores = tape.matmul_t(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let weights = tape.softmax(scores, causal);
            outputs.push(tape.matmul(weights, vh)?);
        }
        let joined = if outputs.len() == 1 { outputs[0] } else { tape.concat_cols(&outputs)? };
        self.output.forward(tape, joined)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParameterStore, name: &str, dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(FeedForward {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, rng)?,
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, dropout: f64) -> Result<Var> {
        let h = self.up.forward(tape, x)?;
        let h = tape.gelu(h);
        let h = tape.dropout(h, dropout);
        self.down.forward(tape, h)
    }
}

/// Self-attention followed by a feed-forward block, both residual.
#[derive(Debug, Clone, Copy)]
pub struct EncoderBlock {
    pub norm1: LayerNorm,
    pub attention: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
}

impl EncoderBlock {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        dim: usize,
        hidden: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(EncoderBlock {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim, rng)?,
            attention: MultiHeadAttention::new(store, &format!("{name}.attention"), dim, heads, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim, rng)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), dim, hidden, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, dropout: f64) -> Result<Var> {
        let n = self.norm1.forward(tape, x)?;
        let a = self.attention.forward(tape, n, n, false)?;
        let a = tape.dropout(a, dropout);
        let x = tape.add(x, a)?;
        let n = self.norm2.forward(tape, x)?;
        let f = self.ffn.forward(tape, n, dropout)?;
        let f = tape.dropout(f, dropout);
        tape.add(x, f)
    }
}

/// Causal self-attention, cross-attention to encoder memory, feed-forward.
#[derive(Debug, Clone, Copy)]
pub struct DecoderBlock {
    pub norm1: LayerNorm,
    pub self_attention: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub cross_attention: MultiHeadAttention,
    pub norm3: LayerNorm,
    pub ffn: FeedForward,
}

impl DecoderBlock {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        dim: usize,
        hidden: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(DecoderBlock {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim, rng)?,
            self_attention: MultiHeadAttention::new(store, &format!("{name}.self_attention"), dim, heads, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim, rng)?,
            cross_attention: MultiHeadAttention::new(store, &format!("{name}.cross_attention"), dim, heads, rng)?,
            norm3: LayerNorm::new(store, &format!("{name}.norm3"), dim, rng)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), dim, hidden, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, memory: Var, dropout: f64) -> Result<Var> {
        let n = self.norm1.forward(tape, x)?;
        let a = self.self_attention.forward(tape, n, n, true)?;
        let a = tape.dropout(a, dropout);
        let x = tape.add(x, a)?;
        let n = self.norm2.forward(tape, x)?;
        let c = self.cross_attention.forward(tape, n, memory, false)?;
        let c = tape.dropout(c, dropout);
        let x = tape.add(x, c)?;
        let n = self.norm3.forward(tape, x)?;
        let f = self.ffn.forward(tape, n, dropout)?;
        let f = tape.dropout(f, dropout);
        tape.add(x, f)
    }
}
