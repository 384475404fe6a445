//! Mini-batch Adam training, evaluation, and model persistence.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::baseline::baseline_cv_geometric;
use super::config::ModelConfig;
use super::loss::{sequence_loss, Sample};
use super::model::{Model, Observation};
use crate::codebook::CodebookGrid;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::metrics::MetricsAccumulator;
use crate::nn::{
    grad_check, load_checkpoint, write_checkpoint, Adam, GradCheckOptions, GradCheckReport, Gradients, Tape, Var,
};

pub const CHECKPOINT_FILE: &str = "model.nfck";
pub const CONFIG_FILE: &str = "model.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_traj: f64,
    pub l_beam: f64,
    pub val_mae: f64,
    pub val_top1_joint: f64,
    pub val_top5_joint: f64,
}

/// Decoded network output for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub trajectory: Vec<[f64; 3]>,
    pub logits: Vec<[Vec<f64>; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    /// Evaluate on the validation split every this many epochs (and on the last).
    pub eval_every: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { epochs: 20, eval_every: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights with the best validation joint Top-1.
    pub best: Model,
    pub best_epoch: usize,
    pub last: Model,
    pub log: Vec<EpochLog>,
}

struct SequenceStep {
    grads: Gradients,
    l_traj: f64,
    l_beam: f64,
}

fn sequence_step(model: &Model, s: &Sample) -> Result<SequenceStep> {
    let mut tape = Tape::new(&model.store);
    let out = model.forward(&mut tape, &s.obs)?;
    let terms = sequence_loss(&mut tape, &out, s, model.cfg.lambda_loss)?;
    let l_traj = tape.value(terms.trajectory).item()?;
    let l_beam = terms.beam.iter().map(|&b| tape.value(b).item()).sum::<Result<f64>>()?;
    let grads = tape.backward(terms.total)?;
    Ok(SequenceStep { grads, l_traj, l_beam })
}

fn map_ordered<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> Result<U> + Sync + Send) -> Result<Vec<U>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Mean combined loss over `samples`, built on one tape.
pub fn batch_loss(model: &Model, tape: &mut Tape, samples: &[Sample]) -> Result<Var> {
    if samples.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let mut total: Option<Var> = None;
    for s in samples {
        let out = model.forward(tape, &s.obs)?;
        let l = sequence_loss(tape, &out, s, model.cfg.lambda_loss)?.total;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    let total = total.expect("non-empty batch");
    Ok(tape.scale(total, 1.0 / samples.len() as f64))
}

/// Finite-difference check of the full combined loss on a micro-batch.
pub fn gradcheck_model(model: &mut Model, samples: &[Sample], opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let shape = model.clone();
    grad_check(&mut model.store, opts, |tape| batch_loss(&shape, tape, samples))
}

/// Runs the model on one observation and decodes its outputs.
pub fn predict(model: &Model, obs: &Observation) -> Result<Prediction> {
    let mut tape = Tape::new(&model.store);
    let out = model.forward(&mut tape, obs)?;
    let tr = tape.value(out.trajectory);
    let trajectory = (0..tr.rows).map(|r| [tr.get(r, 0), tr.get(r, 1), tr.get(r, 2)]).collect();
    let [a, b, c] = out.logits.map(|v| tape.value(v).clone());
    let logits = (0..a.rows).map(|r| [a.row(r).to_vec(), b.row(r).to_vec(), c.row(r).to_vec()]).collect();
    Ok(Prediction { trajectory, logits })
}

fn accumulate_predictions(
    preds: &[Prediction],
    samples: &[Sample],
    t_pred: usize,
    dims: crate::codebook::CodebookDims,
) -> Result<MetricsAccumulator> {
    let mut acc = MetricsAccumulator::new(t_pred, dims);
    for (p, s) in preds.iter().zip(samples) {
        for t in 0..t_pred {
            let [a, b, c] = &p.logits[t];
            acc.add(t, p.trajectory[t], s.future[t], [a, b, c], s.beams[t])?;
        }
    }
    Ok(acc)
}

/// Per-step metrics of the model over `samples`; parallel over sequences when enabled.
pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<MetricsAccumulator> {
    let preds = map_ordered(samples, |s| predict(model, &s.obs))?;
    accumulate_predictions(&preds, samples, model.cfg.t_pred, model.cfg.dims)
}

/// Per-step metrics of the constant-velocity baseline over `samples`.
pub fn evaluate_baseline(
    samples: &[Sample],
    grid: &CodebookGrid,
    bs: Vec3,
    t_pred: usize,
) -> Result<MetricsAccumulator> {
    let preds = map_ordered(samples, |s| {
        let b = baseline_cv_geometric(&s.obs.gps, t_pred, grid, bs)?;
        Ok(Prediction { trajectory: b.trajectory, logits: b.logits })
    })?;
    accumulate_predictions(&preds, samples, t_pred, grid.dims)
}

/// Trains a freshly initialized model. `on_epoch` sees every log row as it is produced.
pub fn train(
    cfg: &ModelConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    opts: TrainOptions,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Domain("training set is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Domain("validation set is empty".into()));
    }
    if opts.epochs == 0 || opts.eval_every == 0 {
        return Err(Error::Config("epochs and eval_every must be positive".into()));
    }
    let mut model = Model::new(cfg.clone())?;
    let mut adam = Adam::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5348_5546_464c_4531);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(opts.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    let mut last_val = (f64::NAN, f64::NAN, f64::NAN);

    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        let (mut sum_traj, mut sum_beam) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let samples: Vec<&Sample> = batch.iter().map(|&i| &train_set[i]).collect();
            let steps = map_ordered(&samples, |s| sequence_step(&model, s))?;
            model.store.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for st in &steps {
                model.store.accumulate(&st.grads, scale);
                sum_traj += st.l_traj;
                sum_beam += st.l_beam;
            }
            adam.step(&mut model.store);
        }
        if epoch % opts.eval_every == 0 || epoch == opts.epochs {
            let m = evaluate(&model, val_set)?.summary();
            last_val = (m.mae_m, m.top1_joint, m.top5_joint);
            if best.as_ref().is_none_or(|(b, _, _)| m.top1_joint > *b) {
                best = Some((m.top1_joint, epoch, model.clone()));
            }
        }
        let n = train_set.len() as f64;
        let row = EpochLog {
            epoch,
            l_traj: sum_traj / n,
            l_beam: sum_beam / n,
            val_mae: last_val.0,
            val_top1_joint: last_val.1,
            val_top5_joint: last_val.2,
        };
        if !(row.l_traj.is_finite() && row.l_beam.is_finite()) {
            return Err(Error::Domain(format!("training loss diverged at epoch {epoch}")));
        }
        on_epoch(&row);
        log.push(row);
    }
    let (_, best_epoch, best) = best.ok_or_else(|| Error::Domain("no validation pass ran".into()))?;
    Ok(TrainOutcome { best, best_epoch, last: model, log })
}

pub fn write_train_log<W: Write>(rows: &[EpochLog], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_train_log<R: Read>(r: R) -> Result<Vec<EpochLog>> {
    let mut rd = csv::Reader::from_reader(r);
    Ok(rd.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Writes the checkpoint and its config sidecar into `dir`.
pub fn save_model(model: &Model, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join(CHECKPOINT_FILE))?);
    write_checkpoint(&model.store, &mut w)?;
    w.flush()?;
    fs::write(dir.join(CONFIG_FILE), model.cfg.to_json()?)?;
    Ok(())
}

pub fn load_model(dir: &Path) -> Result<Model> {
    let cfg = ModelConfig::from_json(&fs::read_to_string(dir.join(CONFIG_FILE))?)?;
    let mut model = Model::new(cfg)?;
    load_checkpoint(&mut model.store, BufReader::new(File::open(dir.join(CHECKPOINT_FILE))?))?;
    Ok(model)
}
