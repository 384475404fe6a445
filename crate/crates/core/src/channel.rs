//! Near-field multipath uplink channel and beamformed link quality.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::codebook::{antenna_positions, ArrayConfig};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scene::{free_space_amplitude, PathKind, PathSet, Scene};

/// Length-M complex uplink channel at one time slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVector {
    pub h: Vec<Complex64>,
}

impl ChannelVector {
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.h.iter().all(|c| c.re == 0.0 && c.im == 0.0)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.h.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Split into real and imaginary planes.
    pub fn split(&self) -> (Vec<f64>, Vec<f64>) {
        (self.h.iter().map(|c| c.re).collect(), self.h.iter().map(|c| c.im).collect())
    }
}

/// Transmit and noise power, both linear.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub p_r: f64,
    pub sigma2: f64,
}

impl LinkParams {
    pub fn new(p_r: f64, sigma2: f64) -> Result<Self> {
        if !(p_r > 0.0 && sigma2 > 0.0) {
            return Err(Error::Config(format!("p_r and sigma2 must be positive, got {p_r} and {sigma2}")));
        }
        Ok(Self { p_r, sigma2 })
    }

    /// Transmit power giving `target_snr_db` for a line-of-sight UAV at
    /// `distance` served by its exactly matched codeword.
    pub fn calibrated(cfg: &ArrayConfig, distance: f64, target_snr_db: f64, sigma2: f64) -> Result<Self> {
        if !(distance > 0.0) {
            return Err(Error::Domain(format!("calibration distance must be positive, got {distance}")));
        }
        // matched gain: |w^H h| = M * a
        let gain = cfg.num_antennas() as f64 * free_space_amplitude(cfg.wavelength(), distance);
        let snr = 10f64.powf(target_snr_db / 10.0);
        Self::new(snr * sigma2 / (gain * gain), sigma2)
    }
}

impl Default for LinkParams {
    /// Calibrated to 20 dB at 100 m for the default 64 x 64 array, unit noise.
    fn default() -> Self {
        Self::calibrated(&ArrayConfig::xl_default(), 100.0, 20.0, 1.0).expect("static config")
    }
}

/// `h_m = sum_l a_l exp(-j k r_{l,m})` with exact per-antenna path lengths.
pub fn channel_vector(cfg: &ArrayConfig, paths: &PathSet, scene: &Scene, uav: Vec3) -> ChannelVector {
    let antennas = antenna_positions(cfg);
    let k = cfg.wavenumber();
    let bs = scene.bs_position;
    let mut h = vec![Complex64::new(0.0, 0.0); antennas.len()];
    for path in &paths.paths {
        // last hop seen from the array, relative to its centroid, plus any fixed leg
        let (source, extra) = match path.kind {
            PathKind::LineOfSight => (uav - bs, 0.0),
            PathKind::SingleBounce { scatterer } => {
                let s = scene.scatterers[scatterer].position;
                (s - bs, s.distance(uav))
            }
        };
        for (hm, a) in h.iter_mut().zip(&antennas) {
            let r = source.distance(*a) + extra;
            *hm += path.amplitude * Complex64::from_polar(1.0, -k * r);
        }
    }
    ChannelVector { h }
}

/// `p_r |w^H h|^2 / sigma2`.
pub fn beamformed_snr(w: &[Complex64], h: &ChannelVector, link: &LinkParams) -> Result<f64> {
    if w.len() != h.len() {
        return Err(Error::Shape { op: "beamformed_snr", lhs: vec![w.len()], rhs: vec![h.len()] });
    }
    let g: Complex64 = w.iter().zip(&h.h).map(|(w, h)| w.conj() * h).sum();
    Ok(link.p_r * g.norm_sqr() / link.sigma2)
}

/// `log2(1 + snr)` in bits/s/Hz.
pub fn spectral_efficiency(snr: f64) -> Result<f64> {
    if snr < 0.0 || snr.is_nan() {
        return Err(Error::Domain(format!("SNR must be non-negative, got {snr}")));
    }
    Ok((1.0 + snr).log2())
}
