//! Per-horizon evaluation metrics and their CSV form.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::codebook::{BeamIndex3D, CodebookDims};
use crate::error::{Error, Result};
use crate::oracle::{topk_accuracy, AccuracyFlags};

/// One CSV row: MAE in meters and accuracy fractions for prediction step `step` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub mae_m: f64,
    pub top1_theta: f64,
    pub top1_phi: f64,
    pub top1_r: f64,
    pub top1_joint: f64,
    pub top5_theta: f64,
    pub top5_phi: f64,
    pub top5_r: f64,
    pub top5_joint: f64,
}

pub const METRICS_COLUMNS: [&str; 10] = [
    "step",
    "mae_m",
    "top1_theta",
    "top1_phi",
    "top1_r",
    "top1_joint",
    "top5_theta",
    "top5_phi",
    "top5_r",
    "top5_joint",
];

#[derive(Debug, Clone, Default)]
struct StepAccum {
    abs_err: f64,
    count: usize,
    top1: [usize; 4],
    top5: [usize; 4],
}

fn bump(acc: &mut [usize; 4], f: AccuracyFlags) {
    for (slot, hit) in acc.iter_mut().zip([f.theta, f.phi, f.r, f.joint]) {
        *slot += hit as usize;
    }
}

/// Accumulates predictions per horizon step.
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    dims: CodebookDims,
    steps: Vec<StepAccum>,
}

impl MetricsAccumulator {
    pub fn new(t_pred: usize, dims: CodebookDims) -> Self {
        Self { dims, steps: vec![StepAccum::default(); t_pred] }
    }

    /// Adds one predicted slot: position error plus decoupled logits.
    pub fn add(
        &mut self,
        step: usize,
        pred: [f64; 3],
        truth: [f64; 3],
        logits: [&[f64]; 3],
        beam: BeamIndex3D,
    ) -> Result<()> {
        let dims = self.dims;
        let acc = self.steps.get_mut(step).ok_or(Error::Index { what: "prediction step", index: step, len: 0 })?;
        acc.abs_err += (0..3).map(|a| (pred[a] - truth[a]).abs()).sum::<f64>() / 3.0;
        acc.count += 1;
        bump(&mut acc.top1, topk_accuracy(logits, beam, 1, dims)?);
        bump(&mut acc.top5, topk_accuracy(logits, beam, 5, dims)?);
        Ok(())
    }

    pub fn rows(&self) -> Vec<StepMetrics> {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let n = a.count.max(1) as f64;
                let f = |x: usize| x as f64 / n;
                StepMetrics {
                    step: i + 1,
                    mae_m: a.abs_err / n,
                    top1_theta: f(a.top1[0]),
                    top1_phi: f(a.top1[1]),
                    top1_r: f(a.top1[2]),
                    top1_joint: f(a.top1[3]),
                    top5_theta: f(a.top5[0]),
                    top5_phi: f(a.top5[1]),
                    top5_r: f(a.top5[2]),
                    top5_joint: f(a.top5[3]),
                }
            })
            .collect()
    }

    /// Averages over all steps.
    pub fn summary(&self) -> StepMetrics {
        let rows = self.rows();
        let n = rows.len().max(1) as f64;
        let avg = |f: fn(&StepMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
        StepMetrics {
            step: 0,
            mae_m: avg(|r| r.mae_m),
            top1_theta: avg(|r| r.top1_theta),
            top1_phi: avg(|r| r.top1_phi),
            top1_r: avg(|r| r.top1_r),
            top1_joint: avg(|r| r.top1_joint),
            top5_theta: avg(|r| r.top5_theta),
            top5_phi: avg(|r| r.top5_phi),
            top5_r: avg(|r| r.top5_r),
            top5_joint: avg(|r| r.top5_joint),
        }
    }
}

pub fn write_metrics_csv<W: Write>(rows: &[StepMetrics], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(r: R) -> Result<Vec<StepMetrics>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(METRICS_COLUMNS.iter().copied()) {
        return Err(Error::Inconsistent(format!("unexpected metrics columns: {headers:?}")));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}
