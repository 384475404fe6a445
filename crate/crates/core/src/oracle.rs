//! Exhaustive-sweep beam labels and decoupled soft targets.
//!
//! Beams are ranked by spectral efficiency, ties broken toward the smaller
//! flat index. The ranking never depends on evaluation order, so parallel and
//! serial sweeps produce identical labels.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::channel::{spectral_efficiency, ChannelVector, LinkParams};
use crate::codebook::{
    antenna_positions, steering_into, ArrayConfig, BeamDim, BeamIndex3D, Codebook3D, CodebookDims, CodebookGrid,
};
use crate::error::{Error, Result};

/// A codeword with its spectral efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedBeam {
    pub index: BeamIndex3D,
    pub flat: usize,
    pub se: f64,
}

/// Optimal beam plus the ordered Top-K list (`topk[0]` is the optimum).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamLabel {
    pub optimal: BeamIndex3D,
    pub topk: Vec<RankedBeam>,
}

/// Per-dimension probability vectors over the decoupled beam indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftTarget {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub r: Vec<f64>,
}

impl SoftTarget {
    pub fn get(&self, dim: BeamDim) -> &[f64] {
        match dim {
            BeamDim::Theta => &self.theta,
            BeamDim::Phi => &self.phi,
            BeamDim::R => &self.r,
        }
    }
}

/// `(se desc, flat asc)`; `Less` means `a` ranks ahead of `b`.
fn rank_order(a: (f64, usize), b: (f64, usize)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

/// `sum_m conj(w_m) h_m` over split planes, fixed 4-lane accumulation order.
#[inline]
pub(crate) fn cdot_conj(wr: &[f64], wi: &[f64], hr: &[f64], hi: &[f64]) -> (f64, f64) {
    const L: usize = 4;
    let mut ar = [0.0f64; L];
    let mut ai = [0.0f64; L];
    let n = wr.len() / L * L;
    for (((a, b), c), d) in
        wr[..n].chunks_exact(L).zip(wi[..n].chunks_exact(L)).zip(hr[..n].chunks_exact(L)).zip(hi[..n].chunks_exact(L))
    {
        for l in 0..L {
            ar[l] += a[l] * c[l] + b[l] * d[l];
            ai[l] += a[l] * d[l] - b[l] * c[l];
        }
    }
    let mut re = (ar[0] + ar[1]) + (ar[2] + ar[3]);
    let mut im = (ai[0] + ai[1]) + (ai[2] + ai[3]);
    for m in n..wr.len() {
        re += wr[m] * hr[m] + wi[m] * hi[m];
        im += wr[m] * hi[m] - wi[m] * hr[m];
    }
    (re, im)
}

/// `|w^H h|^2` for every codeword (outer) and every channel (inner).
///
/// Each codeword is streamed once for the whole batch.
pub fn codeword_gains(codebook: &Codebook3D, channels: &[ChannelVector]) -> Result<Vec<Vec<f64>>> {
    let m = codebook.num_antennas();
    for h in channels {
        if h.len() != m {
            return Err(Error::Shape { op: "codeword_gains", lhs: vec![m], rhs: vec![h.len()] });
        }
    }
    let split: Vec<(Vec<f64>, Vec<f64>)> = channels.iter().map(ChannelVector::split).collect();
    let gains_for = |flat: usize| -> Vec<f64> {
        let (wr, wi) = codebook.codeword_parts(flat);
        split
            .iter()
            .map(|(hr, hi)| {
                let (re, im) = cdot_conj(wr, wi, hr, hi);
                re * re + im * im
            })
            .collect()
    };
    #[cfg(feature = "parallel")]
    let per_codeword: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        (0..codebook.len()).into_par_iter().map(gains_for).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let per_codeword: Vec<Vec<f64>> = (0..codebook.len()).map(gains_for).collect();

    Ok((0..channels.len()).map(|c| per_codeword.iter().map(|g| g[c]).collect()).collect())
}

/// Top-K selection over per-codeword gains.
fn select_topk(gains: &[f64], dims: CodebookDims, link: &LinkParams, k: usize) -> Result<BeamLabel> {
    if k == 0 || k > gains.len() {
        return Err(Error::Config(format!("K must lie in [1, {}], got {k}", gains.len())));
    }
    if gains.iter().all(|&g| g == 0.0) {
        return Err(Error::NoSignal);
    }
    let se: Vec<f64> = gains.iter().map(|&g| spectral_efficiency(link.p_r * g / link.sigma2)).collect::<Result<_>>()?;
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for (flat, &v) in se.iter().enumerate() {
        if best.len() == k && rank_order((v, flat), best[k - 1]) != Ordering::Less {
            continue;
        }
        let pos = best.binary_search_by(|probe| rank_order(*probe, (v, flat))).unwrap_or_else(|p| p);
        best.insert(pos, (v, flat));
        best.truncate(k);
    }
    let topk = best
        .into_iter()
        .map(|(se, flat)| Ok(RankedBeam { index: dims.unflatten(flat)?, flat, se }))
        .collect::<Result<Vec<_>>>()?;
    Ok(BeamLabel { optimal: topk[0].index, topk })
}

pub fn top_k_beams(h: &ChannelVector, codebook: &Codebook3D, link: &LinkParams, k: usize) -> Result<BeamLabel> {
    if h.is_zero() {
        return Err(Error::NoSignal);
    }
    let gains = codeword_gains(codebook, std::slice::from_ref(h))?.remove(0);
    select_topk(&gains, codebook.dims, link, k)
}

/// Argmax of spectral efficiency over the whole codebook.
pub fn sweep_optimal_beam(h: &ChannelVector, codebook: &Codebook3D, link: &LinkParams) -> Result<BeamIndex3D> {
    Ok(top_k_beams(h, codebook, link, 1)?.optimal)
}

/// Labels a batch of slots with one pass over the codebook.
///
/// Zero channels yield `Err(NoSignal)` in their slot rather than failing the batch.
pub fn label_slots(
    channels: &[ChannelVector],
    codebook: &Codebook3D,
    link: &LinkParams,
    k: usize,
) -> Result<Vec<Result<BeamLabel>>> {
    let gains = codeword_gains(codebook, channels)?;
    Ok(gains.iter().map(|g| select_topk(g, codebook.dims, link, k)).collect())
}

/// Sweep that synthesizes each steering vector on the fly instead of reading
/// a materialized codebook. Returns the optimal beam and its SE.
pub fn sweep_on_the_fly(
    cfg: &ArrayConfig,
    grid: &CodebookGrid,
    h: &ChannelVector,
    link: &LinkParams,
) -> Result<RankedBeam> {
    let m = cfg.num_antennas();
    if h.len() != m {
        return Err(Error::Shape { op: "sweep_on_the_fly", lhs: vec![m], rhs: vec![h.len()] });
    }
    if h.is_zero() {
        return Err(Error::NoSignal);
    }
    let antennas = antenna_positions(cfg);
    let k = cfg.wavenumber();
    let (hr, hi) = h.split();
    let dims = grid.dims;

    let eval = |flat: usize, wr: &mut Vec<f64>, wi: &mut Vec<f64>| -> (f64, usize) {
        let b = dims.unflatten(flat).expect("flat < len");
        steering_into(k, &antennas, grid.focal_point(b).to_cartesian(), wr, wi);
        let (re, im) = cdot_conj(wr, wi, &hr, &hi);
        (re * re + im * im, flat)
    };
    let better = |a: (f64, usize), b: (f64, usize)| if rank_order(a, b) == Ordering::Greater { b } else { a };

    #[cfg(feature = "parallel")]
    let (gain, flat) = {
        use rayon::prelude::*;
        (0..dims.len())
            .into_par_iter()
            .map_init(|| (vec![0.0; m], vec![0.0; m]), |(wr, wi), flat| eval(flat, wr, wi))
            .reduce(|| (f64::NEG_INFINITY, usize::MAX), better)
    };
    #[cfg(not(feature = "parallel"))]
    let (gain, flat) = {
        let (mut wr, mut wi) = (vec![0.0; m], vec![0.0; m]);
        (0..dims.len()).map(|flat| eval(flat, &mut wr, &mut wi)).fold((f64::NEG_INFINITY, usize::MAX), better)
    };
    Ok(RankedBeam { index: dims.unflatten(flat)?, flat, se: spectral_efficiency(link.p_r * gain / link.sigma2)? })
}

/// Decay-weighted decoupled targets: the rank-`k` beam adds `gamma^k` to its
/// index in each dimension, then each dimension is normalized.
pub fn soft_targets(label: &BeamLabel, gamma: f64, dims: CodebookDims) -> Result<SoftTarget> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Config(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    let mut t = SoftTarget { theta: vec![0.0; dims.n], phi: vec![0.0; dims.n], r: vec![0.0; dims.s] };
    let mut w = 1.0;
    for b in &label.topk {
        t.theta[b.index.i_theta] += w;
        t.phi[b.index.i_phi] += w;
        t.r[b.index.i_r] += w;
        w *= gamma;
    }
    for v in [&mut t.theta, &mut t.phi, &mut t.r] {
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
    }
    Ok(t)
}

/// Per-dimension and joint Top-K hit flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AccuracyFlags {
    pub theta: bool,
    pub phi: bool,
    pub r: bool,
    pub joint: bool,
}

fn in_top_k(logits: &[f64], target: usize, k: usize) -> bool {
    let t = logits[target];
    let ahead = logits.iter().enumerate().filter(|&(i, &v)| rank_order((v, i), (t, target)) == Ordering::Less).count();
    ahead < k
}

pub(crate) fn log_softmax(x: &[f64]) -> Vec<f64> {
    let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + x.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

/// Top-K hits of decoupled logits against the true beam.
///
/// The joint ranking orders every flat codeword by the product of its three
/// per-dimension softmax probabilities (ties toward the smaller flat index).
pub fn topk_accuracy(logits: [&[f64]; 3], truth: BeamIndex3D, k: usize, dims: CodebookDims) -> Result<AccuracyFlags> {
    for (d, l) in BeamDim::ALL.iter().zip(logits) {
        if l.len() != dims.size(*d) {
            return Err(Error::Shape { op: "topk_accuracy", lhs: vec![dims.size(*d)], rhs: vec![l.len()] });
        }
    }
    let true_flat = dims.flat_index(truth)?;
    let [lt, lp, lr] = [log_softmax(logits[0]), log_softmax(logits[1]), log_softmax(logits[2])];
    let score = |b: BeamIndex3D| lt[b.i_theta] + lp[b.i_phi] + lr[b.i_r];
    let true_score = score(truth);
    let mut ahead = 0usize;
    for flat in 0..dims.len() {
        let b = dims.unflatten(flat)?;
        if rank_order((score(b), flat), (true_score, true_flat)) == Ordering::Less {
            ahead += 1;
            if ahead >= k {
                break;
            }
        }
    }
    Ok(AccuracyFlags {
        theta: in_top_k(logits[0], truth.i_theta, k),
        phi: in_top_k(logits[1], truth.i_phi, k),
        r: in_top_k(logits[2], truth.i_r, k),
        joint: ahead < k,
    })
}

/// Axis-averaged L1 trajectory error: overall mean and per-step means.
pub fn trajectory_mae(pred: &[[f64; 3]], truth: &[[f64; 3]]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != truth.len() {
        return Err(Error::Shape { op: "trajectory_mae", lhs: vec![pred.len(), 3], rhs: vec![truth.len(), 3] });
    }
    let per_step: Vec<f64> =
        pred.iter().zip(truth).map(|(p, t)| (0..3).map(|a| (p[a] - t[a]).abs()).sum::<f64>() / 3.0).collect();
    let mean = if per_step.is_empty() { 0.0 } else { per_step.iter().sum::<f64>() / per_step.len() as f64 };
    Ok((mean, per_step))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::beamformed_snr;
    use crate::codebook::{build_codebook, steering_vector, CoverageRanges};
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_codebook() -> Codebook3D {
        let cfg = ArrayConfig::half_wavelength(8, 8, 7e9).unwrap();
        build_codebook(&cfg, CodebookDims::new(4, 2).unwrap(), CoverageRanges::default()).unwrap()
    }

    fn random_channel(rng: &mut ChaCha8Rng, m: usize) -> ChannelVector {
        ChannelVector {
            h: (0..m).map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect(),
        }
    }

    fn label(beams: &[(usize, usize, usize)]) -> BeamLabel {
        let topk: Vec<RankedBeam> = beams
            .iter()
            .enumerate()
            .map(|(i, &(a, b, c))| RankedBeam { index: BeamIndex3D::new(a, b, c), flat: 0, se: 10.0 - i as f64 })
            .collect();
        BeamLabel { optimal: topk[0].index, topk }
    }

    #[test]
    fn matched_codeword_wins() {
        let cb = small_codebook();
        let link = LinkParams::new(1.0, 1.0).unwrap();
        for flat in [0, 5, 17, 31] {
            let h = ChannelVector { h: cb.codeword(flat).iter().map(|x| x * 1e-3).collect() };
            assert_eq!(cb.dims.flat_index(sweep_optimal_beam(&h, &cb, &link).unwrap()).unwrap(), flat);
        }
    }

    #[test]
    fn scaled_sum_of_two_codewords() {
        let cb = small_codebook();
        let link = LinkParams::new(1.0, 1.0).unwrap();
        let (a, b) = (3usize, 20usize);
        let wa = cb.codeword(a);
        let wb = cb.codeword(b);
        let h = ChannelVector { h: wa.iter().zip(&wb).map(|(x, y)| x * 2.0 + y).collect() };
        // brute force
        let mut best = (f64::NEG_INFINITY, 0);
        for f in 0..cb.len() {
            let s = beamformed_snr(&cb.codeword(f), &h, &link).unwrap();
            if s > best.0 {
                best = (s, f);
            }
        }
        assert_eq!(best.1, a);
        assert_eq!(cb.dims.flat_index(sweep_optimal_beam(&h, &cb, &link).unwrap()).unwrap(), a);
    }

    #[test]
    fn zero_channel_is_no_signal() {
        let cb = small_codebook();
        let h = ChannelVector { h: vec![Complex64::new(0.0, 0.0); cb.num_antennas()] };
        assert!(matches!(sweep_optimal_beam(&h, &cb, &LinkParams::new(1.0, 1.0).unwrap()), Err(Error::NoSignal)));
    }

    #[test]
    fn topk_matches_full_sort() {
        let cb = small_codebook();
        let link = LinkParams::new(2.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let h = random_channel(&mut rng, cb.num_antennas());
            let mut all: Vec<(f64, usize)> = (0..cb.len())
                .map(|f| (spectral_efficiency(beamformed_snr(&cb.codeword(f), &h, &link).unwrap()).unwrap(), f))
                .collect();
            all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let full = top_k_beams(&h, &cb, &link, cb.len()).unwrap();
            let flats: Vec<usize> = full.topk.iter().map(|b| b.flat).collect();
            let expect: Vec<usize> = all.iter().map(|x| x.1).collect();
            assert_eq!(flats, expect);
            for (got, want) in full.topk.iter().zip(&all) {
                assert!((got.se - want.0).abs() <= 1e-9 * want.0.max(1.0));
            }
            let one = top_k_beams(&h, &cb, &link, 1).unwrap();
            assert_eq!(one.topk.len(), 1);
            assert_eq!(one.optimal, full.optimal);
        }
        let h = random_channel(&mut rng, cb.num_antennas());
        assert!(top_k_beams(&h, &cb, &link, 0).is_err());
        assert!(top_k_beams(&h, &cb, &link, cb.len() + 1).is_err());
    }

    #[test]
    fn ties_break_to_smallest_flat() {
        let dims = CodebookDims::new(2, 2).unwrap();
        let gains = vec![1.0, 3.0, 3.0, 0.5, 3.0, 0.0, 0.0, 0.0];
        let l = select_topk(&gains, dims, &LinkParams::new(1.0, 1.0).unwrap(), 3).unwrap();
        let flats: Vec<usize> = l.topk.iter().map(|b| b.flat).collect();
        assert_eq!(flats, vec![1, 2, 4]);
    }

    #[test]
    fn on_the_fly_matches_materialized() {
        let cb = small_codebook();
        let link = LinkParams::new(1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..4 {
            let h = random_channel(&mut rng, cb.num_antennas());
            let a = sweep_on_the_fly(&cb.array, &cb.grid(), &h, &link).unwrap();
            let b = top_k_beams(&h, &cb, &link, 1).unwrap();
            assert_eq!(a.flat, b.topk[0].flat);
            assert!((a.se - b.topk[0].se).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_labels_equal_single_labels() {
        let cb = small_codebook();
        let link = LinkParams::new(1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut hs: Vec<ChannelVector> = (0..3).map(|_| random_channel(&mut rng, cb.num_antennas())).collect();
        hs.push(ChannelVector { h: vec![Complex64::new(0.0, 0.0); cb.num_antennas()] });
        let batch = label_slots(&hs, &cb, &link, 3).unwrap();
        for (h, l) in hs.iter().zip(&batch).take(3) {
            assert_eq!(l.as_ref().unwrap(), &top_k_beams(h, &cb, &link, 3).unwrap());
        }
        assert!(matches!(batch[3], Err(Error::NoSignal)));
    }

    #[test]
    fn soft_target_examples() {
        let dims = CodebookDims::new(10, 10).unwrap();
        let one = soft_targets(&label(&[(1, 2, 3)]), 0.5, dims).unwrap();
        assert_eq!(one.theta[1], 1.0);
        assert_eq!(one.phi[2], 1.0);
        assert_eq!(one.r[3], 1.0);

        let t = soft_targets(&label(&[(5, 0, 2), (5, 1, 7), (5, 2, 4)]), 0.5, dims).unwrap();
        assert_eq!(t.theta[5], 1.0);
        assert!((t.r[2] - 4.0 / 7.0).abs() < 1e-15);
        assert!((t.r[7] - 2.0 / 7.0).abs() < 1e-15);
        assert!((t.r[4] - 1.0 / 7.0).abs() < 1e-15);
        assert!(soft_targets(&label(&[(0, 0, 0)]), 0.0, dims).is_err());
        assert!(soft_targets(&label(&[(0, 0, 0)]), 1.5, dims).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let dims = CodebookDims::new(4, 2).unwrap();
        let truth = BeamIndex3D::new(2, 1, 0);
        let onehot = |n: usize, i: usize| -> Vec<f64> { (0..n).map(|j| if j == i { 5.0 } else { 0.0 }).collect() };
        let (lt, lp, lr) = (onehot(4, 2), onehot(4, 1), onehot(2, 0));
        let f = topk_accuracy([&lt, &lp, &lr], truth, 1, dims).unwrap();
        assert!(f.theta && f.phi && f.r && f.joint);
        let lp_wrong = onehot(4, 3);
        let f = topk_accuracy([&lt, &lp_wrong, &lr], truth, 1, dims).unwrap();
        assert!(f.theta && !f.phi && f.r && !f.joint);
    }

    #[test]
    fn joint_topk_matches_product_enumeration() {
        let dims = CodebookDims::new(4, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let softmax = |x: &[f64]| -> Vec<f64> {
            let e: Vec<f64> = x.iter().map(|v| v.exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        };
        for _ in 0..200 {
            let lt: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let lp: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let lr: Vec<f64> = (0..2).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let truth = BeamIndex3D::new(rng.random_range(0..4), rng.random_range(0..4), rng.random_range(0..2));
            let (pt, pp, pr) = (softmax(&lt), softmax(&lp), softmax(&lr));
            let mut all: Vec<(f64, usize)> = Vec::new();
            for a in 0..4 {
                for b in 0..4 {
                    for c in 0..2 {
                        all.push((pt[a] * pp[b] * pr[c], dims.flat_index(BeamIndex3D::new(a, b, c)).unwrap()));
                    }
                }
            }
            all.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
            let tf = dims.flat_index(truth).unwrap();
            let expect = all.iter().take(5).any(|x| x.1 == tf);
            let got = topk_accuracy([&lt, &lp, &lr], truth, 5, dims).unwrap();
            assert_eq!(got.joint, expect);
        }
    }

    #[test]
    fn mae_examples() {
        let t = vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        assert_eq!(trajectory_mae(&t, &t).unwrap().0, 0.0);
        let p: Vec<[f64; 3]> = t.iter().map(|x| [x[0] + 1.0, x[1], x[2]]).collect();
        assert!((trajectory_mae(&p, &t).unwrap().0 - 1.0 / 3.0).abs() < 1e-15);
        // hand arithmetic: step errors (0.5+1+0)/3 = 0.5 and (3+0+1.5)/3 = 1.5
        let p = vec![[1.5, 3.0, 3.0], [1.0, 5.0, 7.5]];
        let (mean, steps) = trajectory_mae(&p, &t).unwrap();
        assert_eq!(steps, vec![0.5, 1.5]);
        assert_eq!(mean, 1.0);
        assert!(trajectory_mae(&p[..1], &t).is_err());
    }

    #[test]
    fn far_field_vector_loses_to_focused_codeword_at_short_range() {
        let cfg = ArrayConfig::half_wavelength(16, 16, 7e9).unwrap();
        let fp = crate::codebook::FocalPoint::new(0.3, 0.2, 3.0);
        let b = steering_vector(&cfg, &fp).unwrap();
        let h = ChannelVector { h: b.clone() };
        let link = LinkParams::new(1.0, 1.0).unwrap();
        let k = cfg.wavenumber();
        let u = fp.to_cartesian() * (1.0 / fp.r);
        let ff: Vec<Complex64> =
            antenna_positions(&cfg).iter().map(|a| Complex64::from_polar(1.0, -k * (fp.r - u.dot(*a)))).collect();
        assert!(beamformed_snr(&b, &h, &link).unwrap() > beamformed_snr(&ff, &h, &link).unwrap());
    }

    proptest! {
        #[test]
        fn soft_targets_are_distributions(k in 1usize..8, gamma in 0.01f64..=1.0, seed in any::<u64>()) {
            let dims = CodebookDims::new(5, 3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let beams: Vec<(usize, usize, usize)> = (0..k)
                .map(|_| (rng.random_range(0..5), rng.random_range(0..5), rng.random_range(0..3)))
                .collect();
            let t = soft_targets(&label(&beams), gamma, dims).unwrap();
            for d in BeamDim::ALL {
                let v = t.get(d);
                prop_assert!(v.iter().all(|&x| x >= 0.0));
                prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn label_invariant_to_positive_scaling(scale in 1e-6f64..1e6, seed in any::<u64>()) {
            let cb = small_codebook();
            let link = LinkParams::new(1.0, 1.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_channel(&mut rng, cb.num_antennas());
            let hs = ChannelVector { h: h.h.iter().map(|x| x * scale).collect() };
            prop_assert_eq!(sweep_optimal_beam(&h, &cb, &link).unwrap(), sweep_optimal_beam(&hs, &cb, &link).unwrap());
        }

        #[test]
        fn per_dim_topk_invariant_to_logit_scaling(scale in 0.01f64..100.0, seed in any::<u64>()) {
            let dims = CodebookDims::new(4, 2).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l: Vec<Vec<f64>> = [4, 4, 2].iter().map(|&n| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
            let ls: Vec<Vec<f64>> = l.iter().map(|v| v.iter().map(|x| x * scale).collect()).collect();
            let truth = BeamIndex3D::new(1, 2, 1);
            for k in 1..=3 {
                let a = topk_accuracy([&l[0], &l[1], &l[2]], truth, k, dims).unwrap();
                let b = topk_accuracy([&ls[0], &ls[1], &ls[2]], truth, k, dims).unwrap();
                prop_assert_eq!((a.theta, a.phi, a.r), (b.theta, b.phi, b.r));
            }
        }
    }
}
