//! Trajectory L1 and soft-target beam losses, on the tape and in plain form.

use crate::codebook::{BeamDim, BeamIndex3D, CodebookDims};
use crate::dataset::SequenceRecord;
use crate::error::{Error, Result};
use crate::nn::{Tape, Tensor, Var};
use crate::oracle::{log_softmax, SoftTarget};

use super::config::ModelConfig;
use super::model::{ForwardOutput, Observation};

/// Inputs and supervision for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub obs: Observation,
    /// True future positions, `T_pred` rows.
    pub future: Vec<[f64; 3]>,
    pub targets: Vec<SoftTarget>,
    pub beams: Vec<BeamIndex3D>,
}

impl Sample {
    pub fn from_record(rec: &SequenceRecord, t_prev: usize, t_pred: usize, dims: CodebookDims) -> Result<Self> {
        if rec.len() != t_prev + t_pred || rec.gps.len() != rec.len() || rec.labels.len() != rec.len() {
            return Err(Error::Inconsistent(format!(
                "sequence {} has {} slots, expected {}",
                rec.id,
                rec.len(),
                t_prev + t_pred
            )));
        }
        let future_slots = t_prev..t_prev + t_pred;
        Ok(Self {
            id: rec.id,
            obs: Observation { gps: rec.gps_f64()[..t_prev].to_vec(), cloud: rec.cloud_f64(), mode: rec.mode as usize },
            future: rec.positions_f64()[future_slots.clone()].to_vec(),
            targets: future_slots.clone().map(|s| rec.soft_target(s, dims)).collect::<Result<_>>()?,
            beams: future_slots.map(|s| rec.optimal(s, dims)).collect::<Result<_>>()?,
        })
    }

    pub fn from_records(recs: &[SequenceRecord], cfg: &ModelConfig) -> Result<Vec<Self>> {
        recs.iter().map(|r| Self::from_record(r, cfg.t_prev, cfg.t_pred, cfg.dims)).collect()
    }

    /// Stacked `T_pred x size` target rows for one dimension.
    pub fn target_tensor(&self, dim: BeamDim) -> Tensor {
        let cols = self.targets.first().map_or(0, |t| t.get(dim).len());
        Tensor { rows: self.targets.len(), cols, data: self.targets.iter().flat_map(|t| t.get(dim).to_vec()).collect() }
    }
}

/// `sum |pred - truth| / T` over a `T x 3` prediction.
pub fn trajectory_loss(tape: &mut Tape, pred: Var, truth: &[[f64; 3]]) -> Result<Var> {
    let t = Tensor { rows: truth.len(), cols: 3, data: truth.iter().flatten().copied().collect() };
    if truth.is_empty() {
        return Err(Error::Domain("empty trajectory".into()));
    }
    let t = tape.constant(t);
    let d = tape.sub(pred, t)?;
    let a = tape.abs(d);
    let s = tape.sum(a);
    Ok(tape.scale(s, 1.0 / truth.len() as f64))
}

/// Slot-averaged KL divergence of softmax(logits) from the target rows.
pub fn beam_loss(tape: &mut Tape, logits: Var, target: &Tensor) -> Result<Var> {
    if target.rows == 0 {
        return Err(Error::Domain("empty target".into()));
    }
    let ls = tape.log_softmax(logits);
    let log_p =
        Tensor { data: target.data.iter().map(|&x| if x > 0.0 { x.ln() } else { 0.0 }).collect(), ..target.clone() };
    let log_p = tape.constant(log_p);
    let ratio = tape.sub(log_p, ls)?;
    let p = tape.constant(target.clone());
    let terms = tape.mul(p, ratio)?;
    let kl = tape.sum(terms);
    Ok(tape.scale(kl, 1.0 / target.rows as f64))
}

/// Per-term handles of the combined objective.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub trajectory: Var,
    pub beam: [Var; 3],
}

/// Combined loss of one forward pass; the trajectory term is taken on offsets from the anchor.
pub fn sequence_loss(tape: &mut Tape, out: &ForwardOutput, sample: &Sample, lambda: f64) -> Result<LossTerms> {
    let logits = out.logits;
    let a = out.anchor;
    let rel: Vec<[f64; 3]> = sample.future.iter().map(|p| [p[0] - a[0], p[1] - a[1], p[2] - a[2]]).collect();
    let lt = trajectory_loss(tape, out.offsets, &rel)?;
    let mut beam = [lt; 3];
    for (i, dim) in BeamDim::ALL.into_iter().enumerate() {
        beam[i] = beam_loss(tape, logits[i], &sample.target_tensor(dim))?;
    }
    let b = tape.add(beam[0], beam[1])?;
    let b = tape.add(b, beam[2])?;
    let b = tape.scale(b, lambda);
    let total = tape.add(lt, b)?;
    Ok(LossTerms { total, trajectory: lt, beam })
}

/// Plain form of [`trajectory_loss`].
pub fn trajectory_l1(pred: &[[f64; 3]], truth: &[[f64; 3]]) -> Result<f64> {
    if pred.len() != truth.len() || truth.is_empty() {
        return Err(Error::Shape { op: "trajectory_l1", lhs: vec![pred.len(), 3], rhs: vec![truth.len(), 3] });
    }
    let s: f64 = pred.iter().zip(truth).map(|(p, t)| (0..3).map(|a| (p[a] - t[a]).abs()).sum::<f64>()).sum();
    Ok(s / truth.len() as f64)
}

/// Plain form of [`beam_loss`] over per-slot rows.
pub fn soft_kl(logits: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if logits.len() != targets.len() || targets.is_empty() {
        return Err(Error::Shape { op: "soft_kl", lhs: vec![logits.len()], rhs: vec![targets.len()] });
    }
    let mut total = 0.0;
    for (l, p) in logits.iter().zip(targets) {
        if l.len() != p.len() {
            return Err(Error::Shape { op: "soft_kl", lhs: vec![l.len()], rhs: vec![p.len()] });
        }
        let ls = log_softmax(l);
        total += p.iter().zip(&ls).filter(|(&a, _)| a > 0.0).map(|(a, b)| a * (a.ln() - b)).sum::<f64>();
    }
    Ok(total / targets.len() as f64)
}

pub fn combined_loss(l_traj: f64, l_beam: f64, lambda: f64) -> f64 {
    l_traj + lambda * l_beam
}
