//! WebAssembly bindings for the browser demo.
//!
//! Each exported function has a plain Rust twin returning `nfbeam::Result`, so
//! the logic is testable natively; the wrappers only convert errors and JSON.

use num_complex::Complex64;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use nfbeam::channel::{beamformed_snr, channel_vector, spectral_efficiency, LinkParams};
use nfbeam::codebook::{
    antenna_positions, rayleigh_distance, steering_vector, ArrayConfig, CodebookDims, CodebookGrid, CoverageRanges,
    FocalPoint,
};
use nfbeam::geometry::Vec3;
use nfbeam::oracle::sweep_on_the_fly;
use nfbeam::predictor::baseline_cv_geometric;
use nfbeam::scene::{enumerate_paths, Scene};
use nfbeam::trajectory::{add_gps_noise, generate_trajectory, MotionMode, TrajectoryConfig};
use nfbeam::{Error, Result};

const F_C: f64 = 7e9;
const BS: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 20.0 };
const FLOOR_DB: f64 = -40.0;

fn square_array(m: usize) -> Result<ArrayConfig> {
    ArrayConfig::half_wavelength(m, m, F_C)
}

/// Normalized beamforming gain, in dB, of the codeword focused at
/// `(theta_deg, phi_deg, r)` over the horizontal plane through its focus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    /// Row-major, `height` rows of `width`; row 0 is `y_range.0`.
    pub db: Vec<f64>,
    pub focus: [f64; 3],
    pub rayleigh_m: f64,
}

pub fn focus_heatmap(m: usize, theta_deg: f64, phi_deg: f64, r: f64, width: usize, height: usize) -> Result<Heatmap> {
    if width < 2 || height < 2 {
        return Err(Error::Config(format!("heatmap needs at least 2 x 2 cells, got {width} x {height}")));
    }
    let cfg = square_array(m)?;
    let fp = FocalPoint::new(theta_deg.to_radians(), phi_deg.to_radians(), r);
    let w = steering_vector(&cfg, &fp)?;
    let focus = fp.to_cartesian();
    let ants = antenna_positions(&cfg);
    let k = cfg.wavenumber();
    let n = ants.len() as f64;
    let x_range = (1.0, (2.0 * focus.x).max(20.0));
    let half = (1.5 * focus.x).max(20.0);
    let y_range = (focus.y - half, focus.y + half);
    let mut db = Vec::with_capacity(width * height);
    for iy in 0..height {
        let y = y_range.0 + (y_range.1 - y_range.0) * iy as f64 / (height - 1) as f64;
        for ix in 0..width {
            let x = x_range.0 + (x_range.1 - x_range.0) * ix as f64 / (width - 1) as f64;
            let p = Vec3::new(x, y, focus.z);
            let s: Complex64 =
                ants.iter().zip(&w).map(|(a, wm)| wm.conj() * Complex64::from_polar(1.0, -k * p.distance(*a))).sum();
            let g = s.norm_sqr() / (n * n);
            db.push((10.0 * g.log10()).max(FLOOR_DB));
        }
    }
    Ok(Heatmap { width, height, x_range, y_range, db, focus: focus.to_array(), rayleigh_m: rayleigh_distance(&cfg) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub i_theta: usize,
    pub i_phi: usize,
    pub i_r: usize,
    pub flat: usize,
    pub focal_deg: [f64; 3],
    pub se: f64,
    /// SE of the plane-wave codeword steered at the best beam's angles.
    pub far_field_se: f64,
    pub codewords: usize,
    pub antennas: usize,
}

/// Exhaustive sweep for a UAV at `offset` (meters, relative to the array) in free space.
pub fn sweep_at(m: usize, n: usize, s: usize, offset: [f64; 3]) -> Result<SweepReport> {
    let cfg = square_array(m)?;
    let grid = CodebookGrid::new(CodebookDims::new(n, s)?, CoverageRanges::default())?;
    let scene = Scene::empty(BS);
    let uav = BS + Vec3::from(offset);
    let h = channel_vector(&cfg, &enumerate_paths(&cfg, &scene, uav)?, &scene, uav);
    let link = LinkParams::calibrated(&cfg, 100.0, 20.0, 1.0)?;
    let best = sweep_on_the_fly(&cfg, &grid, &h, &link)?;
    let fp = grid.focal_point(best.index);
    let far = steering_vector(&cfg, &FocalPoint::new(fp.theta, fp.phi, 1e6))?;
    Ok(SweepReport {
        i_theta: best.index.i_theta,
        i_phi: best.index.i_phi,
        i_r: best.index.i_r,
        flat: best.flat,
        focal_deg: [fp.theta.to_degrees(), fp.phi.to_degrees(), fp.r],
        se: best.se,
        far_field_se: spectral_efficiency(beamformed_snr(&far, &h, &link)?)?,
        codewords: grid.dims.len(),
        antennas: cfg.num_antennas(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryDemo {
    pub mode: String,
    /// Positions relative to the array; the first `t_prev` are observed.
    pub truth: Vec<[f64; 3]>,
    pub gps: Vec<[f64; 3]>,
    pub baseline: Vec<[f64; 3]>,
    pub baseline_beams: Vec<[usize; 3]>,
    /// Axis-averaged absolute error per predicted step (m).
    pub step_mae: Vec<f64>,
}

/// A trajectory of motion mode `mode`, its noisy GPS, and the constant-velocity forecast.
pub fn trajectory_with_baseline(
    mode: usize,
    seed: u64,
    t_prev: usize,
    t_pred: usize,
    sigma_gps: f64,
) -> Result<TrajectoryDemo> {
    let mode = MotionMode::from_id(mode)?;
    let scene = Scene::empty(BS);
    let truth = generate_trajectory(&scene, mode, t_prev + t_pred, 0.1, seed, &TrajectoryConfig::default())?;
    let gps = add_gps_noise(&truth, sigma_gps, seed ^ 0x6795)?;
    let rel = |v: &[Vec3]| -> Vec<[f64; 3]> { v.iter().map(|&p| (p - BS).to_array()).collect() };
    let gps_abs: Vec<[f64; 3]> = gps[..t_prev].iter().map(|p| p.to_array()).collect();
    let grid = CodebookGrid::new(CodebookDims::new(20, 10)?, CoverageRanges::default())?;
    let b = baseline_cv_geometric(&gps_abs, t_pred, &grid, BS)?;
    let step_mae = b
        .trajectory
        .iter()
        .zip(&truth[t_prev..])
        .map(|(p, t)| (0..3).map(|a| (p[a] - t.axis(a)).abs()).sum::<f64>() / 3.0)
        .collect();
    Ok(TrajectoryDemo {
        mode: mode.description().into(),
        truth: rel(&truth),
        gps: rel(&gps),
        baseline: b.trajectory.iter().map(|&p| (Vec3::from(p) - BS).to_array()).collect(),
        baseline_beams: b.beams.iter().map(|x| [x.i_theta, x.i_phi, x.i_r]).collect(),
        step_mae,
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

/// JSON [`Heatmap`].
#[wasm_bindgen(js_name = focusHeatmap)]
pub fn focus_heatmap_js(
    m: usize,
    theta_deg: f64,
    phi_deg: f64,
    r: f64,
    width: usize,
    height: usize,
) -> std::result::Result<String, JsError> {
    to_js(focus_heatmap(m, theta_deg, phi_deg, r, width, height))
}

/// JSON [`SweepReport`].
#[wasm_bindgen(js_name = sweepAt)]
pub fn sweep_at_js(m: usize, n: usize, s: usize, x: f64, y: f64, z: f64) -> std::result::Result<String, JsError> {
    to_js(sweep_at(m, n, s, [x, y, z]))
}

/// JSON [`TrajectoryDemo`].
#[wasm_bindgen(js_name = trajectoryWithBaseline)]
pub fn trajectory_with_baseline_js(
    mode: usize,
    seed: u32,
    t_prev: usize,
    t_pred: usize,
    sigma_gps: f64,
) -> std::result::Result<String, JsError> {
    to_js(trajectory_with_baseline(mode, seed as u64, t_prev, t_pred, sigma_gps))
}
