//! Linear, perceptron, layer-norm, and multi-head attention blocks.

use rand::Rng;

use super::param::{Init, ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// `x W + b` with `W` stored `d_in x d_out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
    ) -> Result<Self> {
        let w = store.add(format!("{name}.w"), d_in, d_out, Init::Uniform { fan_in: d_in }, rng)?;
        let b = if bias { Some(store.add(format!("{name}.b"), 1, d_out, Init::Zeros, rng)?) } else { None };
        Ok(Self { w, b, d_in, d_out })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Two linear layers with a GELU between.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
    ) -> Result<Self> {
        Ok(Self {
            l1: Linear::new(store, rng, &format!("{name}.l1"), d_in, d_hidden, true)?,
            l2: Linear::new(store, rng, &format!("{name}.l2"), d_hidden, d_out, true)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = self.l1.forward(tape, x)?;
        let h = tape.gelu(h);
        self.l2.forward(tape, h)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(format!("{name}.gain"), 1, d, Init::Ones, rng)?,
            bias: store.add(format!("{name}.bias"), 1, d, Init::Zeros, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b)
    }
}

/// Scaled dot-product attention over `heads` column groups with output projection.
#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d_model: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::Config(format!("d_model {d_model} is not divisible by heads {heads}")));
        }
        Ok(Self {
            wq: Linear::new(store, rng, &format!("{name}.q"), d_model, d_model, true)?,
            wk: Linear::new(store, rng, &format!("{name}.k"), d_model, d_model, false)?,
            wv: Linear::new(store, rng, &format!("{name}.v"), d_model, d_model, true)?,
            wo: Linear::new(store, rng, &format!("{name}.o"), d_model, d_model, true)?,
            heads,
            d_model,
        })
    }

    /// `keep` is a row-major `queries x keys` mask; `false` entries get zero weight.
    pub fn forward(&self, tape: &mut Tape, queries: Var, keys: Var, values: Var, keep: Option<&[bool]>) -> Result<Var> {
        let q = self.wq.forward(tape, queries)?;
        let k = self.wk.forward(tape, keys)?;
        let v = self.wv.forward(tape, values)?;
        let dh = self.d_model / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let kt = tape.transpose(kh);
            let s = tape.matmul(qh, kt)?;
            let s = tape.scale(s, scale);
            let a = tape.softmax(s, keep)?;
            outs.push(tape.matmul(a, vh)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        self.wo.forward(tape, cat)
    }
}

/// Row-major keep mask where query `i` may attend to key `j <= i`.
pub fn causal_mask(n: usize) -> Vec<bool> {
    (0..n * n).map(|idx| idx % n <= idx / n).collect()
}
