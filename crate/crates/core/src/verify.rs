//! The gradient verification suite: every tape primitive on random shapes, one
//! attention block, and the combined training loss of a small model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codebook::{BeamIndex3D, CodebookDims};
use crate::error::Result;
use crate::nn::{
    grad_check, GradCheckOptions, GradCheckReport, Init, MultiHeadAttention, ParamId, ParamStore, Tape, Tensor, Var,
};
use crate::oracle::SoftTarget;
use crate::predictor::{gradcheck_model, Model, ModelConfig, Observation, Sample};

pub const PRIMITIVE_TOLERANCE: f64 = 1e-6;
pub const MODEL_TOLERANCE: f64 = 1e-4;
const SHAPES_PER_PRIMITIVE: u64 = 5;

/// Worst errors of one named check, over all its random instances.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    /// Same, restricted to coordinates with gradient magnitude at least 1e-5.
    pub max_rel_error_significant: f64,
    pub coords_checked: usize,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    fn absorb(&mut self, r: &GradCheckReport) {
        self.max_rel_error = self.max_rel_error.max(r.max_rel_error);
        self.max_rel_error_significant = self.max_rel_error_significant.max(r.max_rel_error_significant);
        self.coords_checked += r.coords_checked;
    }

    fn new(name: &str, tolerance: f64) -> Self {
        Self { name: name.into(), max_rel_error: 0.0, max_rel_error_significant: 0.0, coords_checked: 0, tolerance }
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    // magnitudes kept away from 0 so relu/abs kinks stay outside the stencil
    let data = (0..rows * cols)
        .map(|_| {
            let m: f64 = rng.random_range(0.2..1.5);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor { rows, cols, data }
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..=5)
}

type Shapes = fn(&mut ChaCha8Rng) -> Vec<(usize, usize)>;
type Build = fn(&mut Tape, &[Var]) -> Result<Var>;

fn one(r: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    vec![(dim(r), dim(r))]
}

fn same2(r: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let s = (dim(r), dim(r));
    vec![s, s]
}

fn primitives() -> Vec<(&'static str, Shapes, Build)> {
    vec![
        (
            "matmul",
            |r| {
                let (a, b, c) = (dim(r), dim(r), dim(r));
                vec![(a, b), (b, c)]
            },
            |t, v| t.matmul(v[0], v[1]),
        ),
        ("add", same2, |t, v| t.add(v[0], v[1])),
        ("sub", same2, |t, v| t.sub(v[0], v[1])),
        ("mul", same2, |t, v| t.mul(v[0], v[1])),
        (
            "add_row",
            |r| {
                let (a, c) = (dim(r), dim(r));
                vec![(a, c), (1, c)]
            },
            |t, v| t.add_row(v[0], v[1]),
        ),
        ("scale", one, |t, v| Ok(t.scale(v[0], -1.7))),
        (
            "concat_cols",
            |r| {
                let n = dim(r);
                vec![(n, dim(r)), (n, dim(r))]
            },
            |t, v| t.concat_cols(v),
        ),
        (
            "concat_rows",
            |r| {
                let c = dim(r);
                vec![(dim(r), c), (dim(r), c)]
            },
            |t, v| t.concat_rows(v),
        ),
        (
            "slice_cols",
            |r| vec![(dim(r), dim(r) + 1)],
            |t, v| {
                let c = t.shape(v[0]).1;
                t.slice_cols(v[0], 1, c - 1)
            },
        ),
        (
            "slice_rows",
            |r| vec![(dim(r) + 2, dim(r))],
            |t, v| {
                let n = t.shape(v[0]).0;
                t.slice_rows(v[0], 1, n - 2)
            },
        ),
        ("transpose", one, |t, v| Ok(t.transpose(v[0]))),
        ("sum", one, |t, v| Ok(t.sum(v[0]))),
        ("mean", one, |t, v| t.mean(v[0])),
        ("mean_rows", one, |t, v| t.mean_rows(v[0])),
        ("broadcast_rows", |r| vec![(1, dim(r))], |t, v| t.broadcast_rows(v[0], 3)),
        ("softmax", one, |t, v| t.softmax(v[0], None)),
        (
            "masked_softmax",
            |r| vec![(dim(r), dim(r) + 1)],
            |t, v| {
                let (n, c) = t.shape(v[0]);
                let keep: Vec<bool> = (0..n * c).map(|i| i % c == 0 || (i * 7) % 3 != 0).collect();
                t.softmax(v[0], Some(&keep))
            },
        ),
        ("log_softmax", one, |t, v| Ok(t.log_softmax(v[0]))),
        (
            "layer_norm",
            |r| {
                let c = r.random_range(3..=6);
                vec![(dim(r), c), (1, c), (1, c)]
            },
            |t, v| t.layer_norm(v[0], v[1], v[2]),
        ),
        ("relu", one, |t, v| Ok(t.relu(v[0]))),
        ("gelu", one, |t, v| Ok(t.gelu(v[0]))),
        ("sigmoid", one, |t, v| Ok(t.sigmoid(v[0]))),
        ("abs", one, |t, v| Ok(t.abs(v[0]))),
        (
            "embedding",
            |r| vec![(dim(r) + 1, dim(r))],
            |t, v| {
                let n = t.shape(v[0]).0;
                let ids: Vec<usize> = (0..6).map(|i| (i * 5) % n).collect();
                t.embedding(v[0], &ids)
            },
        ),
        ("cumsum_rows", one, |t, v| Ok(t.cumsum_rows(v[0]))),
    ]
}

/// Checks `sum(build(inputs) * w)` for a fixed random weighting `w`.
fn check_graph(store: &mut ParamStore, ids: &[ParamId], w_seed: u64, build: Build) -> Result<GradCheckReport> {
    let (rows, cols) = {
        let mut tape = Tape::new(store);
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
        let out = build(&mut tape, &vars)?;
        tape.shape(out)
    };
    let w = rand_tensor(&mut ChaCha8Rng::seed_from_u64(w_seed), rows, cols);
    grad_check(store, &GradCheckOptions::default(), |tape| {
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
        let out = build(tape, &vars)?;
        let wv = tape.constant(w.clone());
        let prod = tape.mul(out, wv)?;
        Ok(tape.sum(prod))
    })
}

/// One result per primitive, each the worst of five random shapes.
pub fn primitive_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (name, shapes, build) in primitives() {
        let mut res = CheckResult::new(name, PRIMITIVE_TOLERANCE);
        for i in 0..SHAPES_PER_PRIMITIVE {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::sequence_seed(seed, i));
            let mut store = ParamStore::new();
            let ids = shapes(&mut rng)
                .into_iter()
                .enumerate()
                .map(|(k, (r, c))| store.insert(format!("x{k}"), rand_tensor(&mut rng, r, c), Init::Zeros))
                .collect::<Result<Vec<_>>>()?;
            res.absorb(&check_graph(&mut store, &ids, rng.random(), build)?);
        }
        out.push(res);
    }
    out.push(attention_check(seed)?);
    Ok(out)
}

/// Masked multi-head attention with all projection weights checked.
pub fn attention_check(seed: u64) -> Result<CheckResult> {
    let mut res = CheckResult::new("attention", PRIMITIVE_TOLERANCE);
    for i in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::sequence_seed(seed ^ 0xa77e, i));
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, &mut rng, "mha", 8, 2)?;
        let q = store.insert("q", rand_tensor(&mut rng, 3, 8), Init::Zeros)?;
        let kv = store.insert("kv", rand_tensor(&mut rng, 4, 8), Init::Zeros)?;
        let keep: Vec<bool> = (0..12).map(|i| i % 4 <= i / 4).collect();
        let w = rand_tensor(&mut rng, 3, 8);
        let rep = grad_check(&mut store, &GradCheckOptions::default(), |t| {
            let (qv, kvv) = (t.param(q), t.param(kv));
            let o = mha.forward(t, qv, kvv, kvv, Some(&keep))?;
            let wv = t.constant(w.clone());
            let p = t.mul(o, wv)?;
            Ok(t.sum(p))
        })?;
        res.absorb(&rep);
    }
    Ok(res)
}

/// Small model used by the end-to-end check.
pub fn verification_config(seed: u64) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        heads: 2,
        backbone_layers: 1,
        t_prev: 3,
        t_pred: 2,
        dims: CodebookDims { n: 4, s: 3 },
        point_feature_dim: 6,
        ffn_hidden: 8,
        batch_size: 2,
        seed,
        ..ModelConfig::default()
    }
}

fn random_dist(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// A straight-line sequence with a random cloud and random soft targets.
pub fn synthetic_sample(cfg: &ModelConfig, points: usize, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = [rng.random_range(20.0..80.0), rng.random_range(-30.0..30.0), rng.random_range(30.0..60.0)];
    let vel = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3)];
    let at = |t: usize| [0, 1, 2].map(|a| start[a] + vel[a] * t as f64);
    let dims = cfg.dims;
    Sample {
        id: seed,
        obs: Observation {
            gps: (0..cfg.t_prev).map(at).collect(),
            cloud: (0..points)
                .map(|_| [rng.random_range(0.0..100.0), rng.random_range(-50.0..50.0), rng.random_range(0.0..30.0)])
                .collect(),
            mode: rng.random_range(0..cfg.task_mode_count),
        },
        future: (cfg.t_prev..cfg.t_prev + cfg.t_pred).map(at).collect(),
        targets: (0..cfg.t_pred)
            .map(|_| SoftTarget {
                theta: random_dist(&mut rng, dims.n),
                phi: random_dist(&mut rng, dims.n),
                r: random_dist(&mut rng, dims.s),
            })
            .collect(),
        beams: (0..cfg.t_pred)
            .map(|_| {
                BeamIndex3D::new(rng.random_range(0..dims.n), rng.random_range(0..dims.n), rng.random_range(0..dims.s))
            })
            .collect(),
    }
}

/// Every parameter coordinate of the combined loss on a two-sequence batch.
pub fn full_loss_check(seed: u64) -> Result<CheckResult> {
    let cfg = verification_config(seed);
    let mut model = Model::new(cfg.clone())?;
    let samples =
        [synthetic_sample(&cfg, 5, seed.wrapping_mul(2)), synthetic_sample(&cfg, 5, seed.wrapping_mul(2) + 1)];
    let mut res = CheckResult::new("full_loss", MODEL_TOLERANCE);
    res.absorb(&gradcheck_model(&mut model, &samples, &GradCheckOptions::default())?);
    Ok(res)
}

pub fn verification_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = primitive_checks(seed)?;
    out.push(full_loss_check(seed)?);
    Ok(out)
}
