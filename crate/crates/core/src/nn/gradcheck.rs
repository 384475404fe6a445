//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::param::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many randomly chosen coordinates per parameter.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
    /// Gradient magnitude below which a coordinate is also tallied as roundoff-limited.
    pub significance: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-5, max_coords_per_param: None, seed: 0, significance: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub coords_checked: usize,
    /// Max relative error over coordinates where `max(|a|, |n|) >= significance`.
    pub max_rel_error_significant: f64,
    /// Coordinates with `0 < max(|a|, |n|) < significance`.
    pub coords_below_significance: usize,
}

/// Relative error with denominator `max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let out = f(&mut tape)?;
    let t = tape.value(out);
    if t.len() != 1 {
        return Err(Error::Shape { op: "grad_check", lhs: t.shape(), rhs: vec![1, 1] });
    }
    Ok(t.data[0])
}

/// Compares analytic parameter gradients of the scalar graph `f` with central differences.
pub fn grad_check<F>(store: &mut ParamStore, opts: &GradCheckOptions, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let mut analytic: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.value.len()]).collect();
    {
        let mut tape = Tape::new(store);
        let out = f(&mut tape)?;
        let grads = tape.backward(out)?;
        for (id, g) in grads.params() {
            if let Some(g) = g {
                analytic[id.index()].copy_from_slice(g);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_index: 0,
        coords_checked: 0,
        max_rel_error_significant: 0.0,
        coords_below_significance: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).value.len();
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(m) if m < n => {
                let mut c = sample(&mut rng, n, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for i in coords {
            let x0 = store.get(id).value.data[i];
            store.get_mut(id).value.data[i] = x0 + opts.eps;
            let fp = eval(store, &f);
            store.get_mut(id).value.data[i] = x0 - opts.eps;
            let fm = eval(store, &f);
            store.get_mut(id).value.data[i] = x0;
            let numeric = (fp? - fm?) / (2.0 * opts.eps);
            let a = analytic[id.index()][i];
            let err = relative_error(a, numeric);
            report.coords_checked += 1;
            let scale = a.abs().max(numeric.abs());
            if scale >= opts.significance {
                report.max_rel_error_significant = report.max_rel_error_significant.max(err);
            } else if scale > 0.0 {
                report.coords_below_significance += 1;
            }
            if report.worst_param.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = Some(store.get(id).name.clone());
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
