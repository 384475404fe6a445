use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::codebook::{BeamDim, BeamIndex3D, CodebookDims, CodebookGrid, CoverageRanges, FocalPoint};
use crate::geometry::Vec3;
use crate::nn::{grad_check, GradCheckOptions, Tape, Tensor, LAYER_NORM_EPS};
use crate::oracle::{topk_accuracy, SoftTarget};

fn tiny_config() -> ModelConfig {
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
        seed: 3,
        ..ModelConfig::default()
    }
}

fn random_dist(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn synthetic_sample(cfg: &ModelConfig, points: usize, seed: u64) -> Sample {
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

fn fill(model: &mut Model, id: crate::nn::ParamId, v: f64) {
    model.store.get_mut(id).value.data.iter_mut().for_each(|x| *x = v);
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor { rows, cols, data: (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect() }
}

#[test]
fn output_shapes_under_default_config() {
    let cfg = ModelConfig { point_feature_dim: 16, ..ModelConfig::default() };
    let model = Model::new(cfg.clone()).unwrap();
    let s = synthetic_sample(&cfg, 12, 1);
    let mut tape = Tape::new(&model.store);
    let out = model.forward(&mut tape, &s.obs).unwrap();
    assert_eq!(tape.shape(out.trajectory), (10, 3));
    assert_eq!(out.logits.map(|l| tape.shape(l)), [(10, 20), (10, 20), (10, 10)]);
    assert_eq!(tape.shape(out.hidden), (20, 64));
    assert_eq!(tape.shape(out.fused), (10, 64));
    assert!(tape.value(out.trajectory).data.iter().all(|x| x.is_finite()));
}

#[test]
fn forward_rejects_bad_inputs() {
    let cfg = tiny_config();
    let model = Model::new(cfg.clone()).unwrap();
    let mut s = synthetic_sample(&cfg, 5, 2);
    let mut tape = Tape::new(&model.store);
    let mut short = s.obs.clone();
    short.gps.pop();
    assert!(matches!(model.forward(&mut tape, &short), Err(crate::Error::Shape { .. })));
    s.obs.cloud.clear();
    assert!(matches!(model.forward(&mut tape, &s.obs), Err(crate::Error::Domain(_))));
    let mut bad_mode = synthetic_sample(&cfg, 5, 2).obs;
    bad_mode.mode = cfg.task_mode_count;
    assert!(matches!(model.forward(&mut tape, &bad_mode), Err(crate::Error::Index { .. })));
}

#[test]
fn position_token_is_linear_and_zero_at_base_station() {
    let cfg = tiny_config();
    let model = Model::new(cfg.clone()).unwrap();
    let mut tape = Tape::new(&model.store);
    let bs = tape.constant(Tensor::row_vector(cfg.norm.apply(cfg.norm.origin).to_vec()));
    let z = model.encode_position(&mut tape, bs).unwrap();
    assert!(tape.value(z).data.iter().all(|&x| x == 0.0));
    let ex = tape.constant(Tensor::row_vector(vec![1.0, 0.0, 0.0]));
    let z = model.encode_position(&mut tape, ex).unwrap();
    let w = &model.store.get(model.raw_position_projection().w).value;
    assert_eq!(tape.value(z).data, w.row(0));
}

#[test]
fn position_token_gradient_check() {
    let cfg = tiny_config();
    let mut model = Model::new(cfg).unwrap();
    let shape = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = random_tensor(&mut rng, 3, 3, 1.0);
    let c = random_tensor(&mut rng, 3, 8, 1.0);
    let rep = grad_check(&mut model.store, &GradCheckOptions::default(), |tape| {
        let p = tape.constant(p.clone());
        let z = shape.encode_position(tape, p)?;
        let c = tape.constant(c.clone());
        let m = tape.mul(z, c)?;
        Ok(tape.sum(m))
    })
    .unwrap();
    assert!(rep.max_rel_error < 1e-6, "{rep:?}");
}

#[test]
fn identical_points_reduce_to_single_point() {
    let cfg = tiny_config();
    let model = Model::new(cfg).unwrap();
    let mut tape = Tape::new(&model.store);
    let q = tape.constant(Tensor::from_rows(&[&[0.2, -0.1, 0.3], &[0.1, 0.4, -0.2]]).unwrap());
    let one = model.encode_points(&mut tape, &[[10.0, 5.0, 3.0]], q).unwrap();
    let many = model.encode_points(&mut tape, &[[10.0, 5.0, 3.0]; 7], q).unwrap();
    for (a, b) in tape.value(one).data.iter().zip(&tape.value(many).data) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

fn plain_linear(store: &crate::nn::ParamStore, l: crate::nn::Linear, x: &[f64]) -> Vec<f64> {
    let w = &store.get(l.w).value;
    (0..l.d_out)
        .map(|j| {
            let b = l.b.map_or(0.0, |b| store.get(b).value.data[j]);
            b + (0..l.d_in).map(|i| x[i] * w.get(i, j)).sum::<f64>()
        })
        .collect()
}

fn plain_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

#[test]
fn point_encoder_matches_naive_attention() {
    let cfg = tiny_config();
    let model = Model::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cloud: Vec<[f64; 3]> = (0..8)
        .map(|_| [rng.random_range(0.0..90.0), rng.random_range(-40.0..40.0), rng.random_range(0.0..25.0)])
        .collect();
    let query = [0.3, -0.2, 0.15];

    let mut tape = Tape::new(&model.store);
    let qv = tape.constant(Tensor::row_vector(query.to_vec()));
    let got = model.encode_points(&mut tape, &cloud, qv).unwrap();
    let got = tape.value(got).data.clone();

    // Reference built from a parameter snapshot, so it sees the same weights by name.
    let st = &model.store;
    let lin = |name: &str, x: &[f64]| {
        let w = st.id(&format!("{name}.w")).unwrap();
        let b = st.id(&format!("{name}.b"));
        let (d_in, d_out) = (st.get(w).value.rows, st.get(w).value.cols);
        plain_linear(st, crate::nn::Linear { w, b, d_in, d_out }, x)
    };
    let mlp = |name: &str, x: &[f64]| {
        let h: Vec<f64> = lin(&format!("{name}.l1"), x).into_iter().map(plain_gelu).collect();
        lin(&format!("{name}.l2"), &h)
    };
    let e = mlp("pos.mlp", &query);
    let q = lin("points.attn.q", &e);
    let feats: Vec<Vec<f64>> = standardize_cloud(&cloud).iter().map(|p| mlp("points.mlp", p)).collect();
    let keys: Vec<Vec<f64>> = feats.iter().map(|f| lin("points.attn.k", f)).collect();
    let vals: Vec<Vec<f64>> = feats.iter().map(|f| lin("points.attn.v", f)).collect();
    let d = cfg.d_model as f64;
    let scores: Vec<f64> = keys.iter().map(|k| q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / d.sqrt()).collect();
    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
    let z: f64 = ex.iter().sum();
    let mut ctx = vec![0.0; cfg.d_model];
    for (w, v) in ex.iter().zip(&vals) {
        for (c, x) in ctx.iter_mut().zip(v) {
            *c += w / z * x;
        }
    }
    let want = lin("points.attn.o", &ctx);
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn point_cloud_permutation_leaves_outputs_bitwise_identical() {
    let cfg = tiny_config();
    let model = Model::new(cfg.clone()).unwrap();
    let s = synthetic_sample(&cfg, 16, 9);
    let a = predict(&model, &s.obs).unwrap();
    let mut obs = s.obs.clone();
    obs.cloud.reverse();
    obs.cloud.swap(0, 5);
    let b = predict(&model, &obs).unwrap();
    assert_eq!(a, b);
}

#[test]
fn align_output_is_standardized() {
    let cfg = tiny_config();
    let model = Model::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tape = Tape::new(&model.store);
    let z = tape.constant(random_tensor(&mut rng, 4, 8, 200.0));
    let y = model.align(&mut tape, z, Modality::Points).unwrap();
    let y = tape.value(y);
    for r in 0..y.rows {
        let row = y.row(r);
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / row.len() as f64;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-6, "variance {var}");
    }
    let zero = tape.constant(Tensor::zeros(2, 8));
    let a = model.align(&mut tape, zero, Modality::Task).unwrap();
    let b = model.align(&mut tape, zero, Modality::Task).unwrap();
    assert_eq!(tape.value(a), tape.value(b));
    assert!(tape.value(a).data.iter().all(|x| x.is_finite()));
    let _ = LAYER_NORM_EPS;
}

#[test]
fn zeroing_one_alignment_changes_only_its_token() {
    let cfg = tiny_config();
    let mut model = Model::new(cfg.clone()).unwrap();
    let s = synthetic_sample(&cfg, 6, 10);
    let before: Vec<Tensor> = {
        let mut tape = Tape::new(&model.store);
        let out = model.forward(&mut tape, &s.obs).unwrap();
        out.context.iter().map(|&v| tape.value(v).clone()).collect()
    };
    let w = model.align_layer(Modality::Task).w;
    fill(&mut model, w, 0.0);
    let mut tape = Tape::new(&model.store);
    let out = model.forward(&mut tape, &s.obs).unwrap();
    assert_eq!(&before[0], tape.value(out.context[0]));
    assert_eq!(&before[1], tape.value(out.context[1]));
    assert_ne!(&before[2], tape.value(out.context[2]));
}

#[test]
fn closed_gate_ignores_context() {
    let cfg = tiny_config();
    let mut model = Model::new(cfg).unwrap();
    let b = model.gate().b.unwrap();
    fill(&mut model, b, f64::NEG_INFINITY);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let traj = random_tensor(&mut rng, 3, 8, 1.0);
    let run = |ctx_scale: f64, rng: &mut ChaCha8Rng| {
        let mut tape = Tape::new(&model.store);
        let c = tape.constant(traj.clone());
        let ctx: Vec<_> = (0..3).map(|_| tape.constant(random_tensor(rng, 3, 8, ctx_scale))).collect();
        let out = model.fuse(&mut tape, c, &ctx).unwrap();
        tape.value(out).clone()
    };
    let a = run(1.0, &mut rng);
    let b = run(50.0, &mut rng);
    assert_eq!(a, b);
    assert_ne!(a, traj);
}

#[test]
fn fusion_accepts_any_number_of_context_modalities() {
    let cfg = tiny_config();
    let model = Model::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut tape = Tape::new(&model.store);
    let c = tape.constant(random_tensor(&mut rng, 3, 8, 1.0));
    for m in 1..=4 {
        let ctx: Vec<_> = (0..m).map(|_| tape.constant(random_tensor(&mut rng, 3, 8, 1.0))).collect();
        let out = model.fuse(&mut tape, c, &ctx).unwrap();
        assert_eq!(tape.shape(out), (3, 8));
    }
    let odd = tape.constant(random_tensor(&mut rng, 2, 8, 1.0));
    assert!(model.fuse(&mut tape, c, &[odd]).is_err());
}

#[test]
fn fusion_gradient_check() {
    let cfg = tiny_config();
    let mut model = Model::new(cfg).unwrap();
    let shape = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let traj = random_tensor(&mut rng, 3, 8, 1.0);
    let ctx: Vec<Tensor> = (0..3).map(|_| random_tensor(&mut rng, 3, 8, 1.0)).collect();
    let w = random_tensor(&mut rng, 3, 8, 1.0);
    let rep = grad_check(&mut model.store, &GradCheckOptions::default(), |tape| {
        let c = tape.constant(traj.clone());
        let cv: Vec<_> = ctx.iter().map(|t| tape.constant(t.clone())).collect();
        let out = shape.fuse(tape, c, &cv)?;
        let w = tape.constant(w.clone());
        let m = tape.mul(out, w)?;
        Ok(tape.sum(m))
    })
    .unwrap();
    assert!(rep.max_rel_error < 1e-6, "{rep:?}");
}

#[test]
fn backbone_is_causal() {
    let cfg = tiny_config();
    let model = Model::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let c = random_tensor(&mut rng, 3, 8, 1.0);
    let mut tape = Tape::new(&model.store);
    let a = tape.constant(c.clone());
    let (ha, _) = model.backbone(&mut tape, a).unwrap();
    let mut c2 = c.clone();
    for j in 0..8 {
        c2.data[2 * 8 + j] += 3.0;
    }
    let b = tape.constant(c2);
    let (hb, _) = model.backbone(&mut tape, b).unwrap();
    let (ha, hb) = (tape.value(ha), tape.value(hb));
    assert_eq!(ha.shape(), vec![5, 8]);
    assert_eq!(ha.row(0), hb.row(0));
    assert_eq!(ha.row(1), hb.row(1));
    assert_ne!(ha.row(2), hb.row(2));
    assert_ne!(ha.row(4), hb.row(4));
}

#[test]
fn backbone_rejects_wrong_length() {
    let model = Model::new(tiny_config()).unwrap();
    let mut tape = Tape::new(&model.store);
    let x = tape.constant(Tensor::zeros(4, 8));
    assert!(matches!(model.backbone(&mut tape, x), Err(crate::Error::Shape { .. })));
}

#[test]
fn zero_layer_backbone_is_embedding_only() {
    let cfg = ModelConfig { backbone_layers: 0, ..tiny_config() };
    let model = Model::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let c = random_tensor(&mut rng, 3, 8, 1.0);
    let mut tape = Tape::new(&model.store);
    let x = tape.constant(c.clone());
    let (h, pred) = model.backbone(&mut tape, x).unwrap();
    let st = &model.store;
    let temporal = &st.get(st.id("backbone.temporal").unwrap()).value;
    let queries = &st.get(st.id("backbone.queries").unwrap()).value;
    let h = tape.value(h);
    for r in 0..5 {
        for j in 0..8 {
            let base = if r < 3 { c.get(r, j) } else { queries.get(r - 3, j) };
            assert_eq!(h.get(r, j), base + temporal.get(r, j));
        }
    }
    assert_eq!(tape.value(pred).data, h.data[3 * 8..]);
}

#[test]
fn zero_trajectory_head_holds_anchor_and_constant_offset_walks() {
    let cfg = tiny_config();
    let mut model = Model::new(cfg.clone()).unwrap();
    let head = model.trajectory_head();
    for id in [head.l1.w, head.l2.w, head.l1.b.unwrap(), head.l2.b.unwrap()] {
        fill(&mut model, id, 0.0);
    }
    let s = synthetic_sample(&cfg, 4, 14);
    let anchor = *s.obs.gps.last().unwrap();
    let p = predict(&model, &s.obs).unwrap();
    assert!(p.trajectory.iter().all(|&q| q == anchor));
    assert!(p.trajectory.len() == cfg.t_pred);

    model.store.get_mut(head.l2.b.unwrap()).value.data = vec![1.0, 0.0, 0.0];
    let p = predict(&model, &s.obs).unwrap();
    for (t, q) in p.trajectory.iter().enumerate() {
        assert_eq!(*q, [anchor[0] + (t + 1) as f64, anchor[1], anchor[2]]);
    }
}

#[test]
fn trajectory_head_gradient_check() {
    let cfg = tiny_config();
    let mut model = Model::new(cfg).unwrap();
    let shape = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let s = random_tensor(&mut rng, 2, 8, 1.0);
    let w = random_tensor(&mut rng, 2, 3, 1.0);
    let rep = grad_check(&mut model.store, &GradCheckOptions::default(), |tape| {
        let s = tape.constant(s.clone());
        let p = shape.predict_trajectory(tape, s, [0.0; 3])?;
        let w = tape.constant(w.clone());
        let m = tape.mul(p, w)?;
        Ok(tape.sum(m))
    })
    .unwrap();
    assert!(rep.max_rel_error < 1e-6, "{rep:?}");
}

#[test]
fn zeroed_beam_heads_give_uniform_softmax() {
    let cfg = tiny_config();
    let mut model = Model::new(cfg.clone()).unwrap();
    for h in model.beam_heads() {
        fill(&mut model, h.w, 0.0);
        fill(&mut model, h.b.unwrap(), 0.0);
    }
    let p = predict(&model, &synthetic_sample(&cfg, 4, 16).obs).unwrap();
    for slot in &p.logits {
        for l in slot {
            assert!(l.iter().all(|&x| x == 0.0));
        }
    }
}

fn head_grads(model: &Model, s: &Sample, only_traj: bool) -> Vec<Vec<f64>> {
    let mut tape = Tape::new(&model.store);
    let out = model.forward(&mut tape, &s.obs).unwrap();
    let terms = sequence_loss(&mut tape, &out, s, model.cfg.lambda_loss).unwrap();
    let loss = if only_traj { terms.trajectory } else { terms.total };
    let g = tape.backward(loss).unwrap();
    let head = model.trajectory_head();
    let mut by_id: Vec<_> = g.params().filter_map(|(id, g)| g.map(|g| (id, g.to_vec()))).collect();
    by_id.sort_by_key(|(id, _)| *id);
    [head.l1.w, head.l1.b.unwrap(), head.l2.w, head.l2.b.unwrap()]
        .iter()
        .map(|id| by_id.iter().find(|(i, _)| i == id).map(|(_, g)| g.clone()).unwrap())
        .collect()
}

#[test]
fn detaching_trajectory_leaves_only_trajectory_gradient_on_its_head() {
    let cfg = ModelConfig { detach_trajectory: true, ..tiny_config() };
    let model = Model::new(cfg.clone()).unwrap();
    let s = synthetic_sample(&cfg, 5, 17);
    assert_eq!(head_grads(&model, &s, false), head_grads(&model, &s, true));

    let attached = Model::new(ModelConfig { detach_trajectory: false, ..cfg }).unwrap();
    assert_ne!(head_grads(&attached, &s, false), head_grads(&attached, &s, true));
}

#[test]
fn full_loss_gradient_check_on_micro_batch() {
    let cfg = tiny_config();
    let mut model = Model::new(cfg.clone()).unwrap();
    let samples = [synthetic_sample(&cfg, 5, 18), synthetic_sample(&cfg, 5, 19)];
    let rep = gradcheck_model(&mut model, &samples, &GradCheckOptions::default()).unwrap();
    assert_eq!(rep.coords_checked, model.store.num_scalars());
    assert!(rep.max_rel_error_significant < 1e-4, "{rep:?}");
}

#[test]
fn trajectory_loss_examples() {
    let truth = vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
    assert_eq!(trajectory_l1(&truth, &truth).unwrap(), 0.0);
    let off: Vec<[f64; 3]> = truth.iter().map(|p| [p[0] + 1.0, p[1] - 1.0, p[2] + 1.0]).collect();
    assert_eq!(trajectory_l1(&off, &truth).unwrap(), 3.0);
    assert!(trajectory_l1(&off[..1], &truth).is_err());

    let store = crate::nn::ParamStore::new();
    let mut tape = Tape::new(&store);
    let p = tape.constant(Tensor { rows: 2, cols: 3, data: off.iter().flatten().copied().collect() });
    let l = trajectory_loss(&mut tape, p, &truth).unwrap();
    assert_eq!(tape.value(l).item().unwrap(), 3.0);
}

#[test]
fn batch_trajectory_loss_hand_value() {
    // Sequence 1: errors (1,0,0),(0,2,0) -> 3/2. Sequence 2: (0,0,4),(1,1,1) -> 7/2. Mean 2.5.
    let z = [[0.0; 3]; 2];
    let a = trajectory_l1(&[[1.0, 0.0, 0.0], [0.0, -2.0, 0.0]], &z).unwrap();
    let b = trajectory_l1(&[[0.0, 0.0, 4.0], [1.0, 1.0, -1.0]], &z).unwrap();
    assert_eq!((a + b) / 2.0, 2.5);
}

#[test]
fn beam_loss_examples() {
    let one_hot = vec![vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]];
    let uniform = vec![vec![0.0; 10]];
    assert!((soft_kl(&uniform, &one_hot).unwrap() - 10f64.ln()).abs() < 1e-12);

    let target = vec![0.1, 0.2, 0.3, 0.4];
    let logits: Vec<f64> = target.iter().map(|p: &f64| p.ln() + 2.5).collect();
    assert!(soft_kl(std::slice::from_ref(&logits), std::slice::from_ref(&target)).unwrap().abs() < 1e-12);

    let store = crate::nn::ParamStore::new();
    let mut tape = Tape::new(&store);
    let l = tape.constant(Tensor { rows: 1, cols: 4, data: logits });
    let v = beam_loss(&mut tape, l, &Tensor { rows: 1, cols: 4, data: target }).unwrap();
    assert!(tape.value(v).item().unwrap().abs() < 1e-12);
}

#[test]
fn beam_loss_matches_naive_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let (t, n) = (3, 5);
    let logits: Vec<Vec<f64>> = (0..t).map(|_| (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    let mut targets: Vec<Vec<f64>> = (0..t).map(|_| random_dist(&mut rng, n)).collect();
    targets[1][2] = 0.0;
    let s: f64 = targets[1].iter().sum();
    targets[1].iter_mut().for_each(|x| *x /= s);

    let mut naive = 0.0;
    for (l, p) in logits.iter().zip(&targets) {
        let z: f64 = l.iter().map(|x| x.exp()).sum();
        for i in 0..n {
            if p[i] > 0.0 {
                naive += p[i] * (p[i] / (l[i].exp() / z)).ln();
            }
        }
    }
    naive /= t as f64;
    assert!((soft_kl(&logits, &targets).unwrap() - naive).abs() < 1e-12);

    let store = crate::nn::ParamStore::new();
    let mut tape = Tape::new(&store);
    let lv = tape.constant(Tensor { rows: t, cols: n, data: logits.concat() });
    let v = beam_loss(&mut tape, lv, &Tensor { rows: t, cols: n, data: targets.concat() }).unwrap();
    assert!((tape.value(v).item().unwrap() - naive).abs() < 1e-12);
}

#[test]
fn combined_loss_examples() {
    assert_eq!(combined_loss(1.0, 0.5, 10.0), 6.0);
    assert_eq!(combined_loss(1.25, 0.5, 0.0), 1.25);
}

#[test]
fn reported_loss_decomposes_exactly() {
    let cfg = tiny_config();
    let model = Model::new(cfg.clone()).unwrap();
    let s = synthetic_sample(&cfg, 5, 21);
    let mut tape = Tape::new(&model.store);
    let out = model.forward(&mut tape, &s.obs).unwrap();
    let terms = sequence_loss(&mut tape, &out, &s, 10.0).unwrap();
    let v = |x| tape.value(x).item().unwrap();
    let [a, b, c] = terms.beam.map(v);
    assert_eq!(v(terms.total), v(terms.trajectory) + 10.0 * (a + b + c));
    assert!(v(terms.total) > 0.0);
}

#[test]
fn training_is_deterministic_and_logs_every_epoch() {
    let cfg = tiny_config();
    let data: Vec<Sample> = (0..5).map(|i| synthetic_sample(&cfg, 6, 30 + i)).collect();
    let run = || {
        let out = train(&cfg, &data, &data[..2], TrainOptions { epochs: 3, eval_every: 1 }, |_| {}).unwrap();
        let mut buf = Vec::new();
        write_train_log(&out.log, &mut buf).unwrap();
        (buf, out)
    };
    let (a, out) = run();
    let (b, _) = run();
    assert_eq!(a, b);
    assert_eq!(out.log.len(), 3);
    assert!(out.log[0].l_traj > 0.0 && out.log[0].l_beam > 0.0);
    assert!((1..=3).contains(&out.best_epoch));
    assert_eq!(read_train_log(&a[..]).unwrap(), out.log);
    let header = String::from_utf8(a).unwrap();
    assert!(header.starts_with("epoch,l_traj,l_beam,val_mae,val_top1_joint,val_top5_joint\n"));
}

#[test]
fn training_rejects_empty_sets() {
    let cfg = tiny_config();
    let data = vec![synthetic_sample(&cfg, 4, 40)];
    assert!(train(&cfg, &[], &data, TrainOptions::default(), |_| {}).is_err());
    assert!(train(&cfg, &data, &[], TrainOptions::default(), |_| {}).is_err());
}

#[test]
fn training_reduces_loss() {
    let cfg = ModelConfig { lr: 3e-3, ..tiny_config() };
    let data: Vec<Sample> = (0..4).map(|i| synthetic_sample(&cfg, 6, 50 + i)).collect();
    let out = train(&cfg, &data, &data, TrainOptions { epochs: 40, eval_every: 10 }, |_| {}).unwrap();
    let first = out.log[0].l_traj + 10.0 * out.log[0].l_beam;
    let last = out.log[39].l_traj + 10.0 * out.log[39].l_beam;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn saved_model_reloads_with_f32_weights() {
    let cfg = tiny_config();
    let model = Model::new(cfg.clone()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_model(&model, dir.path()).unwrap();
    let back = load_model(dir.path()).unwrap();
    assert_eq!(back.cfg, cfg);
    let s = synthetic_sample(&cfg, 4, 60);
    let (a, b) = (predict(&model, &s.obs).unwrap(), predict(&back, &s.obs).unwrap());
    for (p, q) in a.trajectory.iter().zip(&b.trajectory) {
        for k in 0..3 {
            assert!((p[k] - q[k]).abs() < 1e-3);
        }
    }
    std::fs::write(dir.path().join(CONFIG_FILE), ModelConfig { d_model: 16, ..cfg }.to_json().unwrap()).unwrap();
    assert!(load_model(dir.path()).is_err());
}

#[test]
fn config_round_trips_and_validates() {
    let cfg = ModelConfig::default();
    assert_eq!(ModelConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);
    assert_eq!(cfg.lambda_loss, 10.0);
    assert!(Model::new(ModelConfig { heads: 3, ..cfg.clone() }).is_err());
    assert!(Model::new(ModelConfig { lambda_loss: -1.0, ..cfg.clone() }).is_err());
    assert!(Model::new(ModelConfig { t_pred: 0, ..cfg.clone() }).is_err());
    let bumped = cfg.to_json().unwrap().replace("\"version\": 1", "\"version\": 2");
    assert!(matches!(ModelConfig::from_json(&bumped), Err(crate::Error::BadVersion { .. })));
}

fn grid() -> CodebookGrid {
    CodebookGrid::new(CodebookDims { n: 20, s: 10 }, CoverageRanges::default()).unwrap()
}

#[test]
fn baseline_holds_stationary_track() {
    let gps = vec![[30.0, 5.0, 40.0]; 10];
    let b = baseline_cv_geometric(&gps, 10, &grid(), Vec3::new(0.0, 0.0, 20.0)).unwrap();
    assert!(b.trajectory.iter().all(|&p| p == gps[0]));
    assert!(b.beams.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn baseline_extrapolates_straight_line_exactly() {
    let at = |t: f64| [20.0 + 1.5 * t, -10.0 + 0.5 * t, 40.0 - 0.25 * t];
    let gps: Vec<_> = (0..10).map(|t| at(t as f64)).collect();
    let bs = Vec3::new(0.0, 0.0, 20.0);
    let g = grid();
    let b = baseline_cv_geometric(&gps, 10, &g, bs).unwrap();
    for (k, p) in b.trajectory.iter().enumerate() {
        let want = at((10 + k) as f64);
        for a in 0..3 {
            assert!((p[a] - want[a]).abs() < 1e-9);
        }
        let fp = FocalPoint::from_cartesian(Vec3::from(*p) - bs);
        assert_eq!(b.beams[k], g.nearest(&fp));
        let argmax = |l: &[f64]| (0..l.len()).fold(0, |m, i| if l[i] > l[m] { i } else { m });
        let [lt, lp, lr] = &b.logits[k];
        assert_eq!(BeamIndex3D::new(argmax(lt), argmax(lp), argmax(lr)), b.beams[k]);
    }
    assert!(baseline_cv_geometric(&gps[..1], 10, &g, bs).is_err());
}

#[test]
fn sample_from_record_splits_observed_and_future_slots() {
    use crate::dataset::{SequenceRecord, SlotLabel};
    let dims = CodebookDims { n: 2, s: 2 };
    let rec = SequenceRecord {
        id: 4,
        mode: 1,
        positions: (0..4).map(|t| [t as f32, 0.0, 0.0]).collect(),
        gps: (0..4).map(|t| [t as f32, 1.0, 0.0]).collect(),
        cloud: vec![[1.0, 2.0, 3.0]],
        labels: (0..4)
            .map(|t| SlotLabel { optimal: t, topk: vec![t], se: vec![1.0], soft: vec![1.0, 0.0, 0.5, 0.5, 0.0, 1.0] })
            .collect(),
    };
    let s = Sample::from_record(&rec, 2, 2, dims).unwrap();
    assert_eq!(s.obs.gps, vec![[0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]);
    assert_eq!(s.future, vec![[2.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
    assert_eq!(s.beams, vec![dims.unflatten(2).unwrap(), dims.unflatten(3).unwrap()]);
    assert_eq!(s.target_tensor(BeamDim::Phi).data, vec![0.5, 0.5, 0.5, 0.5]);
    assert!(Sample::from_record(&rec, 3, 2, dims).is_err());
}

proptest! {
    #[test]
    fn scaling_logits_keeps_per_dimension_topk(
        seed in 0u64..1000,
        scale in 0.01f64..100.0,
        k in 1usize..6,
    ) {
        let dims = CodebookDims { n: 6, s: 4 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l: Vec<Vec<f64>> = [6, 6, 4].iter().map(|&n| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let scaled: Vec<Vec<f64>> = l.iter().map(|v| v.iter().map(|x| x * scale).collect()).collect();
        let truth = BeamIndex3D::new(rng.random_range(0..6), rng.random_range(0..6), rng.random_range(0..4));
        let a = topk_accuracy([&l[0], &l[1], &l[2]], truth, k, dims).unwrap();
        let b = topk_accuracy([&scaled[0], &scaled[1], &scaled[2]], truth, k, dims).unwrap();
        prop_assert_eq!((a.theta, a.phi, a.r), (b.theta, b.phi, b.r));
    }

    #[test]
    fn canonical_cloud_is_order_free(seed in 0u64..500, n in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud: Vec<[f64; 3]> = (0..n).map(|_| [rng.random_range(0.0..3.0f64).round(), rng.random(), rng.random()]).collect();
        let mut shuffled = cloud.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut rng);
        prop_assert_eq!(canonical_cloud(&cloud), canonical_cloud(&shuffled));
    }
}
