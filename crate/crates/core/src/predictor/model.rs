use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{
    causal_mask, Init, LayerNorm, Linear, Mlp, MultiHeadAttention, ParamId, ParamStore, Tape, Tensor, Var,
};

/// Observed inputs of one sequence, in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// `T_prev` noisy positions.
    pub gps: Vec<[f64; 3]>,
    pub cloud: Vec<[f64; 3]>,
    pub mode: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Points,
    Position,
    Task,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Points, Modality::Position, Modality::Task];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy)]
struct Block {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ffn: Mlp,
}

#[derive(Debug, Clone)]
struct Parts {
    w_pos: Linear,
    e_pos: Mlp,
    point_mlp: Mlp,
    point_attn: MultiHeadAttention,
    task_emb: ParamId,
    align: [(Linear, LayerNorm); 3],
    traj_proj: Linear,
    fusion_attn: MultiHeadAttention,
    gate: Linear,
    fusion_ln: LayerNorm,
    fusion_ffn: Mlp,
    temporal: ParamId,
    queries: ParamId,
    blocks: Vec<Block>,
    traj_head: Mlp,
    beam_mlp: Mlp,
    beam_heads: [Linear; 3],
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `T_pred x 3` predicted positions in meters.
    pub trajectory: Var,
    /// Predicted positions relative to `anchor`.
    pub offsets: Var,
    /// Last observed GPS position.
    pub anchor: [f64; 3],
    /// Per-slot logits over theta, phi, r (`T_pred x N`, `T_pred x N`, `T_pred x S`).
    pub logits: [Var; 3],
    /// Backbone hidden states, `(T_prev + T_pred) x d_model`.
    pub hidden: Var,
    /// Aligned context tokens per modality, each `T_prev x d_model`.
    pub context: [Var; 3],
    /// Fused tokens `c_t`, `T_prev x d_model`.
    pub fused: Var,
}

/// The cascaded trajectory-then-beam predictor.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    parts: Parts,
}

fn rows_tensor(rows: &[[f64; 3]]) -> Tensor {
    Tensor { rows: rows.len(), cols: 3, data: rows.iter().flatten().copied().collect() }
}

/// Points in lexicographic order, so any permutation of the input encodes identically.
pub fn canonical_cloud(cloud: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let mut c = cloud.to_vec();
    c.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])).then(a[2].total_cmp(&b[2])));
    c
}

/// Canonically ordered cloud, centred on its mean and scaled to unit RMS radius.
pub fn standardize_cloud(cloud: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let c = canonical_cloud(cloud);
    let n = c.len().max(1) as f64;
    let mean = [0, 1, 2].map(|a| c.iter().map(|p| p[a]).sum::<f64>() / n);
    let centred: Vec<[f64; 3]> = c.iter().map(|p| [0, 1, 2].map(|a| p[a] - mean[a])).collect();
    let rms = (centred.iter().map(|p| p.iter().map(|x| x * x).sum::<f64>()).sum::<f64>() / n).sqrt();
    let scale = if rms > 0.0 { 1.0 / rms } else { 1.0 };
    centred.iter().map(|p| p.map(|x| x * scale)).collect()
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut st = ParamStore::new();
        let d = cfg.d_model;
        let emb = Init::Normal { std: 0.02 };
        let s = &mut st;
        let r = &mut rng;
        let mut align = Vec::new();
        for name in ["points", "pos", "task"] {
            align.push((
                Linear::new(s, r, &format!("align.{name}"), d, d, true)?,
                LayerNorm::new(s, r, &format!("align.{name}.ln"), d)?,
            ));
        }
        let parts = Parts {
            w_pos: Linear::new(s, r, "pos.raw", 3, d, false)?,
            e_pos: Mlp::new(s, r, "pos.mlp", 3, d, d)?,
            point_mlp: Mlp::new(s, r, "points.mlp", 3, cfg.point_feature_dim, d)?,
            point_attn: MultiHeadAttention::new(s, r, "points.attn", d, 1)?,
            task_emb: s.add("task.emb", cfg.task_mode_count, d, emb, r)?,
            align: [align[0], align[1], align[2]],
            traj_proj: Linear::new(s, r, "traj.proj", d, d, true)?,
            fusion_attn: MultiHeadAttention::new(s, r, "fusion.attn", d, cfg.heads)?,
            gate: Linear::new(s, r, "fusion.gate", 2 * d, d, true)?,
            fusion_ln: LayerNorm::new(s, r, "fusion.ln", d)?,
            fusion_ffn: Mlp::new(s, r, "fusion.ffn", d, cfg.ffn_hidden, d)?,
            temporal: s.add("backbone.temporal", cfg.t_prev + cfg.t_pred, d, emb, r)?,
            queries: s.add("backbone.queries", cfg.t_pred, d, emb, r)?,
            blocks: (0..cfg.backbone_layers)
                .map(|i| {
                    Ok(Block {
                        ln1: LayerNorm::new(s, r, &format!("backbone.{i}.ln1"), d)?,
                        attn: MultiHeadAttention::new(s, r, &format!("backbone.{i}.attn"), d, cfg.heads)?,
                        ln2: LayerNorm::new(s, r, &format!("backbone.{i}.ln2"), d)?,
                        ffn: Mlp::new(s, r, &format!("backbone.{i}.ffn"), d, cfg.ffn_hidden, d)?,
                    })
                })
                .collect::<Result<_>>()?,
            traj_head: Mlp::new(s, r, "head.traj", d, d, 3)?,
            beam_mlp: Mlp::new(s, r, "head.beam", 3 * d, d, d)?,
            beam_heads: [
                Linear::new(s, r, "head.theta", d, cfg.dims.n, true)?,
                Linear::new(s, r, "head.phi", d, cfg.dims.n, true)?,
                Linear::new(s, r, "head.r", d, cfg.dims.s, true)?,
            ],
        };
        Ok(Self { cfg, store: st, parts })
    }

    /// Gate projection, exposed for the closed-gate limit.
    pub fn gate(&self) -> Linear {
        self.parts.gate
    }

    pub fn beam_heads(&self) -> [Linear; 3] {
        self.parts.beam_heads
    }

    pub fn trajectory_head(&self) -> Mlp {
        self.parts.traj_head
    }

    pub fn task_embedding(&self) -> ParamId {
        self.parts.task_emb
    }

    pub fn align_layer(&self, u: Modality) -> Linear {
        self.parts.align[u.index()].0
    }

    pub fn raw_position_projection(&self) -> Linear {
        self.parts.w_pos
    }

    fn normalize(&self, p: &[[f64; 3]]) -> Tensor {
        rows_tensor(&p.iter().map(|&q| self.cfg.norm.apply(q)).collect::<Vec<_>>())
    }

    /// Raw position token `W_pos p` of normalized positions.
    pub fn encode_position(&self, tape: &mut Tape, p_norm: Var) -> Result<Var> {
        self.parts.w_pos.forward(tape, p_norm)
    }

    /// Perceptron position encoder used as attention query.
    pub fn position_query(&self, tape: &mut Tape, p_norm: Var) -> Result<Var> {
        self.parts.e_pos.forward(tape, p_norm)
    }

    /// One point token per query row: attention from `E_pos(p_t)` over per-point features.
    pub fn encode_points(&self, tape: &mut Tape, cloud: &[[f64; 3]], p_norm: Var) -> Result<Var> {
        if cloud.is_empty() {
            return Err(Error::Domain("point cloud is empty".into()));
        }
        let pts = tape.constant(rows_tensor(&standardize_cloud(cloud)));
        let feats = self.parts.point_mlp.forward(tape, pts)?;
        let q = self.position_query(tape, p_norm)?;
        self.parts.point_attn.forward(tape, q, feats, feats, None)
    }

    /// `LN(W_u z)` for modality `u`.
    pub fn align(&self, tape: &mut Tape, z: Var, u: Modality) -> Result<Var> {
        let (lin, ln) = self.parts.align[u.index()];
        let y = lin.forward(tape, z)?;
        ln.forward(tape, y)
    }

    /// Gated cross-modal fusion of `c_traj` (rows = slots) with any number of
    /// context modalities (each with one row per slot).
    pub fn fuse(&self, tape: &mut Tape, c_traj: Var, context: &[Var]) -> Result<Var> {
        let (t, _) = tape.shape(c_traj);
        let ctx = tape.concat_rows(context)?;
        let m = tape.shape(ctx).0;
        if m != t * context.len() {
            return Err(Error::Shape { op: "fuse", lhs: vec![t, context.len()], rhs: vec![m] });
        }
        let keep: Vec<bool> = (0..t * m).map(|i| (i % m) % t == i / m).collect();
        let attn = self.parts.fusion_attn.forward(tape, c_traj, ctx, ctx, Some(&keep))?;
        let cat = tape.concat_cols(&[c_traj, attn])?;
        let g = self.parts.gate.forward(tape, cat)?;
        let g = tape.sigmoid(g);
        let ga = tape.mul(g, attn)?;
        let h = tape.add(c_traj, ga)?;
        let n = self.parts.fusion_ln.forward(tape, h)?;
        let f = self.parts.fusion_ffn.forward(tape, n)?;
        tape.add(h, f)
    }

    /// Causal stack over `[c_1..c_Tprev, q_1..q_Tpred]` plus temporal embeddings.
    /// Returns all hidden states and the future slice.
    pub fn backbone(&self, tape: &mut Tape, fused: Var) -> Result<(Var, Var)> {
        let (t, d) = tape.shape(fused);
        if t != self.cfg.t_prev || d != self.cfg.d_model {
            return Err(Error::Shape { op: "backbone", lhs: vec![t, d], rhs: vec![self.cfg.t_prev, self.cfg.d_model] });
        }
        let q = tape.param(self.parts.queries);
        let seq = tape.concat_rows(&[fused, q])?;
        let pe = tape.param(self.parts.temporal);
        let mut x = tape.add(seq, pe)?;
        let n = self.cfg.t_prev + self.cfg.t_pred;
        let mask = causal_mask(n);
        for b in &self.parts.blocks {
            let h = b.ln1.forward(tape, x)?;
            let a = b.attn.forward(tape, h, h, h, Some(&mask))?;
            x = tape.add(x, a)?;
            let h = b.ln2.forward(tape, x)?;
            let f = b.ffn.forward(tape, h)?;
            x = tape.add(x, f)?;
        }
        let pred = tape.slice_rows(x, self.cfg.t_prev, self.cfg.t_pred)?;
        Ok((x, pred))
    }

    /// `cumsum(delta)` in meters, relative to the anchor.
    pub fn predict_offsets(&self, tape: &mut Tape, s_pred: Var) -> Result<Var> {
        let delta = self.parts.traj_head.forward(tape, s_pred)?;
        Ok(tape.cumsum_rows(delta))
    }

    /// `anchor + cumsum(delta)` in meters.
    pub fn predict_trajectory(&self, tape: &mut Tape, s_pred: Var, anchor: [f64; 3]) -> Result<Var> {
        let steps = self.predict_offsets(tape, s_pred)?;
        let a = tape.constant(Tensor::row_vector(anchor.to_vec()));
        tape.add_row(steps, a)
    }

    /// Decoupled logits from hidden states, predicted offsets from `anchor` (meters), and the environment token.
    pub fn beam_logits(
        &self,
        tape: &mut Tape,
        s_pred: Var,
        offsets: Var,
        anchor: [f64; 3],
        env: Var,
    ) -> Result<[Var; 3]> {
        let n = self.cfg.norm;
        let origin = tape.constant(Tensor::row_vector([0, 1, 2].map(|a| anchor[a] - n.origin[a]).to_vec()));
        let shifted = tape.add_row(offsets, origin)?;
        let mut p_norm = tape.scale(shifted, 1.0 / n.radius);
        if self.cfg.detach_trajectory {
            p_norm = tape.detach(p_norm);
        }
        let e = self.position_query(tape, p_norm)?;
        let rows = tape.shape(s_pred).0;
        let env = tape.broadcast_rows(env, rows)?;
        let cat = tape.concat_cols(&[s_pred, e, env])?;
        let u = self.parts.beam_mlp.forward(tape, cat)?;
        let [a, b, c] = self.parts.beam_heads;
        Ok([a.forward(tape, u)?, b.forward(tape, u)?, c.forward(tape, u)?])
    }

    /// Full forward pass for one sequence.
    pub fn forward(&self, tape: &mut Tape, obs: &Observation) -> Result<ForwardOutput> {
        let cfg = &self.cfg;
        if obs.gps.len() != cfg.t_prev {
            return Err(Error::Shape { op: "forward", lhs: vec![obs.gps.len(), 3], rhs: vec![cfg.t_prev, 3] });
        }
        if obs.mode >= cfg.task_mode_count {
            return Err(Error::Index { what: "task mode", index: obs.mode, len: cfg.task_mode_count });
        }
        let p = tape.constant(self.normalize(&obs.gps));
        let z_pos = self.encode_position(tape, p)?;
        let z_pts = self.encode_points(tape, &obs.cloud, p)?;
        let table = tape.param(self.parts.task_emb);
        let z_task = tape.embedding(table, &vec![obs.mode; cfg.t_prev])?;

        let a_pts = self.align(tape, z_pts, Modality::Points)?;
        let a_pos = self.align(tape, z_pos, Modality::Position)?;
        let a_task = self.align(tape, z_task, Modality::Task)?;
        let c_traj = self.parts.traj_proj.forward(tape, a_pos)?;
        let context = [a_pts, a_pos, a_task];
        let fused = self.fuse(tape, c_traj, &context)?;

        let (hidden, s_pred) = self.backbone(tape, fused)?;
        let anchor = obs.gps[cfg.t_prev - 1];
        let offsets = self.predict_offsets(tape, s_pred)?;
        let a = tape.constant(Tensor::row_vector(anchor.to_vec()));
        let trajectory = tape.add_row(offsets, a)?;
        let all_ctx = tape.concat_rows(&context)?;
        let env = tape.mean_rows(all_ctx)?;
        let logits = self.beam_logits(tape, s_pred, offsets, anchor, env)?;
        Ok(ForwardOutput { trajectory, offsets, anchor, logits, hidden, context, fused })
    }
}
