//! Constant-velocity extrapolation with nearest-grid beam mapping.

use crate::codebook::{BeamDim, BeamIndex3D, CodebookGrid, FocalPoint};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct BaselinePrediction {
    pub trajectory: Vec<[f64; 3]>,
    pub beams: Vec<BeamIndex3D>,
    /// Per slot: `-((g_i - v) / spacing)^2` over each dimension's grid, so the
    /// per-dimension argmax is the nearest grid sample and farther samples rank lower.
    pub logits: Vec<[Vec<f64>; 3]>,
}

fn grid_logits(grid: &[f64], v: f64) -> Vec<f64> {
    let step = if grid.len() > 1 { (grid[1] - grid[0]).abs() } else { 1.0 };
    grid.iter().map(|g| -((g - v) / step).powi(2)).collect()
}

pub fn baseline_cv_geometric(
    gps: &[[f64; 3]],
    t_pred: usize,
    grid: &CodebookGrid,
    bs_position: Vec3,
) -> Result<BaselinePrediction> {
    if gps.len() < 2 {
        return Err(Error::Domain(format!("baseline needs at least 2 GPS points, got {}", gps.len())));
    }
    let last = Vec3::from(gps[gps.len() - 1]);
    let v = last - Vec3::from(gps[gps.len() - 2]);
    let mut out = BaselinePrediction { trajectory: Vec::new(), beams: Vec::new(), logits: Vec::new() };
    for t in 1..=t_pred {
        let p = last + v * t as f64;
        let fp = FocalPoint::from_cartesian(p - bs_position);
        let coords = [fp.theta, fp.phi, fp.r];
        out.trajectory.push(p.to_array());
        out.beams.push(grid.nearest(&fp));
        out.logits.push(BeamDim::ALL.map(|d| grid_logits(grid.grid(d), coords[d as usize])));
    }
    Ok(out)
}
