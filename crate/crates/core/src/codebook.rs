//! Uniform planar array geometry, near-field steering vectors, and the
//! 3D angle-distance codebook.
//!
//! Conventions (frozen, shared by every module):
//!
//! * The array lies in the local y-z plane with its centroid at the origin and
//!   broadside along +x.
//! * Antenna `m = iy * m_z + iz` sits at
//!   `(0, (iy - (m_y-1)/2) d_y, (iz - (m_z-1)/2) d_z)`.
//! * A focal point `(theta, phi, r)` maps to
//!   `x = r cos(phi) cos(theta)`, `y = r cos(phi) sin(theta)`, `z = r sin(phi)`.
//! * Codeword `flat = (i_theta * N + i_phi) * S + i_r`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// UPA geometry and carrier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub m_y: usize,
    pub m_z: usize,
    pub d_y: f64,
    pub d_z: f64,
    pub f_c: f64,
}

impl ArrayConfig {
    pub fn new(m_y: usize, m_z: usize, d_y: f64, d_z: f64, f_c: f64) -> Result<Self> {
        let cfg = Self { m_y, m_z, d_y, d_z, f_c };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Half-wavelength spacing on both axes.
    pub fn half_wavelength(m_y: usize, m_z: usize, f_c: f64) -> Result<Self> {
        if !(f_c > 0.0 && f_c.is_finite()) {
            return Err(Error::Config(format!("carrier frequency must be positive, got {f_c}")));
        }
        let d = 0.5 * SPEED_OF_LIGHT / f_c;
        Self::new(m_y, m_z, d, d, f_c)
    }

    /// The 64 x 64 array at 7 GHz with half-wavelength spacing.
    pub fn xl_default() -> Self {
        Self::half_wavelength(64, 64, 7e9).expect("static config")
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_y == 0 || self.m_z == 0 {
            return Err(Error::Config(format!("antenna counts must be >= 1, got {}x{}", self.m_y, self.m_z)));
        }
        if !(self.d_y > 0.0 && self.d_z > 0.0) {
            return Err(Error::Config(format!(
                "element spacing must be positive, got d_y={} d_z={}",
                self.d_y, self.d_z
            )));
        }
        if !(self.f_c > 0.0 && self.f_c.is_finite()) {
            return Err(Error::Config(format!("carrier frequency must be positive, got {}", self.f_c)));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.f_c
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength()
    }

    pub fn num_antennas(&self) -> usize {
        self.m_y * self.m_z
    }

    /// Diagonal of the rectangular aperture spanned by the element centres.
    pub fn aperture_diagonal(&self) -> f64 {
        let ly = (self.m_y - 1) as f64 * self.d_y;
        let lz = (self.m_z - 1) as f64 * self.d_z;
        ly.hypot(lz)
    }
}

/// Element positions in the array frame, row-major over (y, z).
pub fn antenna_positions(cfg: &ArrayConfig) -> Vec<Vec3> {
    let cy = (cfg.m_y - 1) as f64 / 2.0;
    let cz = (cfg.m_z - 1) as f64 / 2.0;
    let mut out = Vec::with_capacity(cfg.num_antennas());
    for iy in 0..cfg.m_y {
        for iz in 0..cfg.m_z {
            out.push(Vec3::new(0.0, (iy as f64 - cy) * cfg.d_y, (iz as f64 - cz) * cfg.d_z));
        }
    }
    out
}

/// `2 D^2 / lambda` with `D` the aperture diagonal.
pub fn rayleigh_distance(cfg: &ArrayConfig) -> f64 {
    let d = cfg.aperture_diagonal();
    2.0 * d * d / cfg.wavelength()
}

/// Spherical focal point relative to the array centroid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalPoint {
    pub theta: f64,
    pub phi: f64,
    pub r: f64,
}

impl FocalPoint {
    pub fn new(theta: f64, phi: f64, r: f64) -> Self {
        Self { theta, phi, r }
    }

    pub fn to_cartesian(&self) -> Vec3 {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        Vec3::new(self.r * cp * ct, self.r * cp * st, self.r * sp)
    }

    /// Inverse of [`FocalPoint::to_cartesian`]; `p` is relative to the centroid.
    pub fn from_cartesian(p: Vec3) -> Self {
        let r = p.norm();
        let phi = if r > 0.0 { (p.z / r).clamp(-1.0, 1.0).asin() } else { 0.0 };
        Self { theta: p.y.atan2(p.x), phi, r }
    }
}

/// Writes `exp(-j k |p - a_m|)` into split real/imaginary buffers.
pub(crate) fn steering_into(k: f64, antennas: &[Vec3], p: Vec3, re: &mut [f64], im: &mut [f64]) {
    for ((a, re), im) in antennas.iter().zip(re.iter_mut()).zip(im.iter_mut()) {
        let dx = p.x - a.x;
        let dy = p.y - a.y;
        let dz = p.z - a.z;
        let r = (dx * dx + dy * dy + dz * dz).sqrt();
        let (s, c) = (k * r).sin_cos();
        *re = c;
        *im = -s;
    }
}

/// Near-field steering vector `b(theta, phi, r)`; entry `m` is `exp(-j k r_m)`.
pub fn steering_vector(cfg: &ArrayConfig, fp: &FocalPoint) -> Result<Vec<Complex64>> {
    if !(fp.r > 0.0) {
        return Err(Error::Domain(format!("focal distance must be positive, got {}", fp.r)));
    }
    let k = cfg.wavenumber();
    let p = fp.to_cartesian();
    Ok(antenna_positions(cfg).into_iter().map(|a| Complex64::from_polar(1.0, -k * p.distance(a))).collect())
}

/// Angular and distance coverage of the codebook (radians, meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageRanges {
    pub theta_min: f64,
    pub theta_max: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for CoverageRanges {
    /// Azimuth [-60, 60] deg, elevation [-30, 60] deg, distance [10, 170] m.
    fn default() -> Self {
        Self {
            theta_min: (-60.0_f64).to_radians(),
            theta_max: 60.0_f64.to_radians(),
            phi_min: (-30.0_f64).to_radians(),
            phi_max: 60.0_f64.to_radians(),
            r_min: 10.0,
            r_max: 170.0,
        }
    }
}

impl CoverageRanges {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_min > 0.0) {
            return Err(Error::Domain(format!("r_min must be positive, got {}", self.r_min)));
        }
        for (name, lo, hi) in [
            ("theta", self.theta_min, self.theta_max),
            ("phi", self.phi_min, self.phi_max),
            ("r", self.r_min, self.r_max),
        ] {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!("{name} range must satisfy min < max, got [{lo}, {hi}]")));
            }
        }
        if self.phi_min < -std::f64::consts::FRAC_PI_2 || self.phi_max > std::f64::consts::FRAC_PI_2 {
            return Err(Error::Config("elevation range must lie within [-90, 90] deg".into()));
        }
        Ok(())
    }

    pub fn contains(&self, fp: &FocalPoint) -> bool {
        (self.theta_min..=self.theta_max).contains(&fp.theta)
            && (self.phi_min..=self.phi_max).contains(&fp.phi)
            && (self.r_min..=self.r_max).contains(&fp.r)
    }
}

/// Endpoint-inclusive uniform grid; a single sample sits at the midpoint.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n).map(|i| if i == n - 1 { hi } else { lo + step * i as f64 }).collect()
        }
    }
}

/// Index triple of a codeword.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BeamIndex3D {
    pub i_theta: usize,
    pub i_phi: usize,
    pub i_r: usize,
}

impl BeamIndex3D {
    pub fn new(i_theta: usize, i_phi: usize, i_r: usize) -> Self {
        Self { i_theta, i_phi, i_r }
    }

    pub fn component(&self, dim: BeamDim) -> usize {
        match dim {
            BeamDim::Theta => self.i_theta,
            BeamDim::Phi => self.i_phi,
            BeamDim::R => self.i_r,
        }
    }
}

/// One of the three decoupled beam dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BeamDim {
    Theta,
    Phi,
    R,
}

impl BeamDim {
    pub const ALL: [BeamDim; 3] = [BeamDim::Theta, BeamDim::Phi, BeamDim::R];

    pub fn name(self) -> &'static str {
        match self {
            BeamDim::Theta => "theta",
            BeamDim::Phi => "phi",
            BeamDim::R => "r",
        }
    }
}

/// Grid sizes of the codebook: `N` angular samples per angle, `S` distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodebookDims {
    pub n: usize,
    pub s: usize,
}

impl CodebookDims {
    pub fn new(n: usize, s: usize) -> Result<Self> {
        if n == 0 || s == 0 {
            return Err(Error::Config(format!("codebook dims must be >= 1, got N={n} S={s}")));
        }
        Ok(Self { n, s })
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.s
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn size(&self, dim: BeamDim) -> usize {
        match dim {
            BeamDim::Theta | BeamDim::Phi => self.n,
            BeamDim::R => self.s,
        }
    }

    pub fn flat_index(&self, b: BeamIndex3D) -> Result<usize> {
        for (what, i, len) in [("i_theta", b.i_theta, self.n), ("i_phi", b.i_phi, self.n), ("i_r", b.i_r, self.s)] {
            if i >= len {
                return Err(Error::Index { what, index: i, len });
            }
        }
        Ok((b.i_theta * self.n + b.i_phi) * self.s + b.i_r)
    }

    pub fn unflatten(&self, flat: usize) -> Result<BeamIndex3D> {
        if flat >= self.len() {
            return Err(Error::Index { what: "flat beam index", index: flat, len: self.len() });
        }
        let i_r = flat % self.s;
        let rest = flat / self.s;
        Ok(BeamIndex3D { i_theta: rest / self.n, i_phi: rest % self.n, i_r })
    }
}

/// Materialized 3D angle-distance codebook.
///
/// Codewords are stored un-normalized (norm `sqrt(M)`) as split real and
/// imaginary planes, codeword-major.
#[derive(Debug, Clone)]
pub struct Codebook3D {
    pub array: ArrayConfig,
    pub dims: CodebookDims,
    pub ranges: CoverageRanges,
    pub theta_grid: Vec<f64>,
    pub phi_grid: Vec<f64>,
    pub r_grid: Vec<f64>,
    antennas: Vec<Vec3>,
    re: Vec<f64>,
    im: Vec<f64>,
}

/// Grid-only description of a codebook, without materialized vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookGrid {
    pub dims: CodebookDims,
    pub ranges: CoverageRanges,
    pub theta_grid: Vec<f64>,
    pub phi_grid: Vec<f64>,
    pub r_grid: Vec<f64>,
}

impl CodebookGrid {
    pub fn new(dims: CodebookDims, ranges: CoverageRanges) -> Result<Self> {
        ranges.validate()?;
        Ok(Self {
            dims,
            ranges,
            theta_grid: linspace(ranges.theta_min, ranges.theta_max, dims.n),
            phi_grid: linspace(ranges.phi_min, ranges.phi_max, dims.n),
            r_grid: linspace(ranges.r_min, ranges.r_max, dims.s),
        })
    }

    pub fn focal_point(&self, b: BeamIndex3D) -> FocalPoint {
        FocalPoint::new(self.theta_grid[b.i_theta], self.phi_grid[b.i_phi], self.r_grid[b.i_r])
    }

    pub fn grid(&self, dim: BeamDim) -> &[f64] {
        match dim {
            BeamDim::Theta => &self.theta_grid,
            BeamDim::Phi => &self.phi_grid,
            BeamDim::R => &self.r_grid,
        }
    }

    /// Nearest grid sample in each dimension independently.
    pub fn nearest(&self, fp: &FocalPoint) -> BeamIndex3D {
        BeamIndex3D {
            i_theta: nearest_index(&self.theta_grid, fp.theta),
            i_phi: nearest_index(&self.phi_grid, fp.phi),
            i_r: nearest_index(&self.r_grid, fp.r),
        }
    }
}

/// Index of the grid sample closest to `v`; ties go to the lower index.
pub fn nearest_index(grid: &[f64], v: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, g) in grid.iter().enumerate() {
        let d = (g - v).abs();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

impl Codebook3D {
    pub fn grid(&self) -> CodebookGrid {
        CodebookGrid {
            dims: self.dims,
            ranges: self.ranges,
            theta_grid: self.theta_grid.clone(),
            phi_grid: self.phi_grid.clone(),
            r_grid: self.r_grid.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_antennas(&self) -> usize {
        self.antennas.len()
    }

    pub fn antennas(&self) -> &[Vec3] {
        &self.antennas
    }

    pub fn focal_point(&self, b: BeamIndex3D) -> FocalPoint {
        FocalPoint::new(self.theta_grid[b.i_theta], self.phi_grid[b.i_phi], self.r_grid[b.i_r])
    }

    pub fn focal_point_flat(&self, flat: usize) -> Result<FocalPoint> {
        Ok(self.focal_point(self.dims.unflatten(flat)?))
    }

    /// Real and imaginary planes of one codeword.
    pub fn codeword_parts(&self, flat: usize) -> (&[f64], &[f64]) {
        let m = self.antennas.len();
        let span = flat * m..(flat + 1) * m;
        (&self.re[span.clone()], &self.im[span])
    }

    pub fn codeword(&self, flat: usize) -> Vec<Complex64> {
        let (re, im) = self.codeword_parts(flat);
        re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)).collect()
    }
}

/// Builds the `N x N x S` codebook over uniformly sampled, endpoint-inclusive grids.
pub fn build_codebook(cfg: &ArrayConfig, dims: CodebookDims, ranges: CoverageRanges) -> Result<Codebook3D> {
    cfg.validate()?;
    let grid = CodebookGrid::new(dims, ranges)?;
    let antennas = antenna_positions(cfg);
    let m = antennas.len();
    let k = cfg.wavenumber();
    let mut re = vec![0.0; dims.len() * m];
    let mut im = vec![0.0; dims.len() * m];

    let fill = |flat: usize, re: &mut [f64], im: &mut [f64]| {
        let b = dims.unflatten(flat).expect("flat < len");
        steering_into(k, &antennas, grid.focal_point(b).to_cartesian(), re, im);
    };

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        re.par_chunks_mut(m).zip(im.par_chunks_mut(m)).enumerate().for_each(|(flat, (re, im))| fill(flat, re, im));
    }
    #[cfg(not(feature = "parallel"))]
    for (flat, (re, im)) in re.chunks_mut(m).zip(im.chunks_mut(m)).enumerate() {
        fill(flat, re, im);
    }

    Ok(Codebook3D {
        array: *cfg,
        dims,
        ranges,
        theta_grid: grid.theta_grid,
        phi_grid: grid.phi_grid,
        r_grid: grid.r_grid,
        antennas,
        re,
        im,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_element_at_origin() {
        let cfg = ArrayConfig::half_wavelength(1, 1, 7e9).unwrap();
        assert_eq!(antenna_positions(&cfg), vec![Vec3::ZERO]);
        assert_eq!(rayleigh_distance(&cfg), 0.0);
    }

    #[test]
    fn two_elements_symmetric() {
        let cfg = ArrayConfig::half_wavelength(2, 1, 7e9).unwrap();
        let lam = cfg.wavelength();
        let pos = antenna_positions(&cfg);
        assert_eq!(pos.len(), 2);
        assert!((pos[0].y + 0.25 * lam).abs() < 1e-15);
        assert!((pos[1].y - 0.25 * lam).abs() < 1e-15);
        assert!(pos.iter().all(|p| p.x == 0.0 && p.z == 0.0));
        assert!((rayleigh_distance(&cfg) - 0.5 * lam).abs() < 1e-15);
    }

    #[test]
    fn row_major_layout_and_spacing() {
        let cfg = ArrayConfig::new(3, 4, 0.1, 0.2, 1e9).unwrap();
        let pos = antenna_positions(&cfg);
        // m = iy * m_z + iz
        assert!((pos[1].z - pos[0].z - 0.2).abs() < 1e-15);
        assert!((pos[4].y - pos[0].y - 0.1).abs() < 1e-15);
        let c = pos.iter().fold(Vec3::ZERO, |a, &p| a + p) * (1.0 / pos.len() as f64);
        assert!(c.norm() < 1e-15);
    }

    #[test]
    fn xl_aperture_side() {
        let cfg = ArrayConfig::xl_default();
        let pos = antenna_positions(&cfg);
        let side = pos.last().unwrap().y - pos[0].y;
        let expect = 63.0 * 0.5 * (SPEED_OF_LIGHT / 7e9);
        assert!((side - expect).abs() < 1e-12);
        assert!((side - 1.349).abs() < 1e-3);
    }

    #[test]
    fn steering_rejects_non_positive_range() {
        let cfg = ArrayConfig::xl_default();
        assert!(matches!(steering_vector(&cfg, &FocalPoint::new(0.0, 0.0, 0.0)), Err(Error::Domain(_))));
        assert!(steering_vector(&cfg, &FocalPoint::new(0.0, 0.0, -1.0)).is_err());
    }

    #[test]
    fn single_antenna_steering() {
        let cfg = ArrayConfig::half_wavelength(1, 1, 7e9).unwrap();
        let b = steering_vector(&cfg, &FocalPoint::new(0.3, 0.1, 12.5)).unwrap();
        let expect = Complex64::from_polar(1.0, -cfg.wavenumber() * 12.5);
        assert!((b[0] - expect).norm() < 1e-12);
    }

    #[test]
    fn broadside_pair_equal_entries() {
        let cfg = ArrayConfig::half_wavelength(2, 1, 7e9).unwrap();
        let b = steering_vector(&cfg, &FocalPoint::new(0.0, 0.0, 20.0)).unwrap();
        assert_eq!(b[0], b[1]);
    }

    #[test]
    fn codebook_grids() {
        let cfg = ArrayConfig::half_wavelength(2, 2, 7e9).unwrap();
        let cb = build_codebook(&cfg, CodebookDims::new(3, 2).unwrap(), CoverageRanges::default()).unwrap();
        assert_eq!(cb.len(), 18);
        let deg: Vec<f64> = cb.theta_grid.iter().map(|t| t.to_degrees()).collect();
        assert!((deg[0] + 60.0).abs() < 1e-12 && deg[1].abs() < 1e-12 && (deg[2] - 60.0).abs() < 1e-12);
        assert_eq!(cb.r_grid, vec![10.0, 170.0]);

        let one = build_codebook(&cfg, CodebookDims::new(1, 1).unwrap(), CoverageRanges::default()).unwrap();
        assert_eq!(one.len(), 1);
        assert!((one.theta_grid[0]).abs() < 1e-15);
        assert!((one.phi_grid[0] - 15.0_f64.to_radians()).abs() < 1e-12);
        assert_eq!(one.r_grid[0], 90.0);
    }

    #[test]
    fn codebook_rejects_bad_ranges() {
        let cfg = ArrayConfig::half_wavelength(2, 2, 7e9).unwrap();
        let dims = CodebookDims::new(2, 2).unwrap();
        let bad = CoverageRanges { r_min: 0.0, ..Default::default() };
        assert!(matches!(build_codebook(&cfg, dims, bad), Err(Error::Domain(_))));
        let bad = CoverageRanges { theta_min: 1.0, theta_max: 0.5, ..Default::default() };
        assert!(build_codebook(&cfg, dims, bad).is_err());
        assert!(CodebookDims::new(0, 3).is_err());
    }

    #[test]
    fn flat_index_examples() {
        let d = CodebookDims::new(20, 10).unwrap();
        assert_eq!(d.flat_index(BeamIndex3D::new(0, 0, 0)).unwrap(), 0);
        assert_eq!(d.flat_index(BeamIndex3D::new(19, 19, 9)).unwrap(), 3999);
        assert_eq!(d.flat_index(BeamIndex3D::new(1, 0, 0)).unwrap(), 200);
        assert!(d.flat_index(BeamIndex3D::new(20, 0, 0)).is_err());
        assert!(d.unflatten(4000).is_err());
    }

    #[test]
    fn codebook_matches_steering_vector() {
        let cfg = ArrayConfig::half_wavelength(4, 3, 7e9).unwrap();
        let cb = build_codebook(&cfg, CodebookDims::new(3, 2).unwrap(), CoverageRanges::default()).unwrap();
        for flat in 0..cb.len() {
            let fp = cb.focal_point_flat(flat).unwrap();
            let b = steering_vector(&cfg, &fp).unwrap();
            let w = cb.codeword(flat);
            for (x, y) in b.iter().zip(&w) {
                assert!((x - y).norm() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn unflatten_inverts_flat(n in 1usize..12, s in 1usize..8, seed in any::<u64>()) {
            let d = CodebookDims::new(n, s).unwrap();
            let flat = (seed as usize) % d.len();
            let b = d.unflatten(flat).unwrap();
            prop_assert_eq!(d.flat_index(b).unwrap(), flat);
        }

        #[test]
        fn cartesian_round_trip(theta in -1.5f64..1.5, phi in -1.5f64..1.5, r in 0.1f64..1e4) {
            let fp = FocalPoint::new(theta, phi, r);
            let back = FocalPoint::from_cartesian(fp.to_cartesian());
            prop_assert!((back.theta - theta).abs() < 1e-9);
            prop_assert!((back.phi - phi).abs() < 1e-9);
            prop_assert!((back.r - r).abs() < 1e-9 * r);
        }

        #[test]
        fn azimuth_mirror_symmetry(theta in -1.0f64..1.0, phi in -0.5f64..1.0, r in 5.0f64..200.0) {
            let cfg = ArrayConfig::half_wavelength(6, 5, 7e9).unwrap();
            let b = steering_vector(&cfg, &FocalPoint::new(theta, phi, r)).unwrap();
            let bm = steering_vector(&cfg, &FocalPoint::new(-theta, phi, r)).unwrap();
            for iy in 0..cfg.m_y {
                for iz in 0..cfg.m_z {
                    let m = iy * cfg.m_z + iz;
                    let mirrored = (cfg.m_y - 1 - iy) * cfg.m_z + iz;
                    prop_assert_eq!(b[m], bm[mirrored]);
                }
            }
        }
    }
}
