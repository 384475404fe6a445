//! Geometric urban scene: box-shaped buildings, face scatterers, and
//! line-of-sight / single-bounce path enumeration with blockage.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::ArrayConfig;
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Face, Vec3};

pub const SCENE_SCHEMA_VERSION: u32 = 1;

/// Point scatterer on a building face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub position: Vec3,
    pub reflection_coefficient: f64,
    /// Index of the host building in [`Scene::buildings`].
    pub building: usize,
    pub face: Face,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub schema_version: u32,
    pub bs_position: Vec3,
    pub buildings: Vec<Aabb>,
    pub scatterers: Vec<Scatterer>,
    pub seed: u64,
}

/// Parameters of the random city-block generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub building_count: usize,
    pub bs_position: Vec3,
    /// Ground-plane region `[x_min, x_max] x [y_min, y_max]` that footprints must lie in.
    pub region_x: (f64, f64),
    pub region_y: (f64, f64),
    pub footprint: (f64, f64),
    pub height: (f64, f64),
    /// Minimum horizontal gap between footprints, and between a footprint and the BS.
    pub clearance: f64,
    pub scatterers_per_building: usize,
    pub reflection: (f64, f64),
    pub max_retries: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            building_count: 5,
            bs_position: Vec3::new(0.0, 0.0, 20.0),
            region_x: (25.0, 150.0),
            region_y: (-120.0, 120.0),
            footprint: (8.0, 20.0),
            height: (10.0, 35.0),
            clearance: 6.0,
            scatterers_per_building: 4,
            reflection: (0.3, 0.7),
            max_retries: 1000,
        }
    }
}

impl Scene {
    /// A scene without buildings (line of sight everywhere).
    pub fn empty(bs_position: Vec3) -> Self {
        Self {
            schema_version: SCENE_SCHEMA_VERSION,
            bs_position,
            buildings: Vec::new(),
            scatterers: Vec::new(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCENE_SCHEMA_VERSION {
            return Err(Error::BadVersion { found: self.schema_version, supported: SCENE_SCHEMA_VERSION });
        }
        for (i, b) in self.buildings.iter().enumerate() {
            if !b.has_positive_extent() {
                return Err(Error::Inconsistent(format!("building {i} has non-positive extent")));
            }
            if b.contains_closed(self.bs_position, 0.0) {
                return Err(Error::Inconsistent(format!("base station lies inside building {i}")));
            }
        }
        for (i, s) in self.scatterers.iter().enumerate() {
            let host = self.buildings.get(s.building).ok_or_else(|| {
                Error::Inconsistent(format!("scatterer {i} references missing building {}", s.building))
            })?;
            if !host.on_surface(s.position, 1e-9) {
                return Err(Error::Inconsistent(format!("scatterer {i} is not on its host surface")));
            }
            if !(s.reflection_coefficient > 0.0 && s.reflection_coefficient <= 1.0) {
                return Err(Error::Inconsistent(format!(
                    "scatterer {i} reflection coefficient {} outside (0, 1]",
                    s.reflection_coefficient
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let scene: Scene = serde_json::from_str(s)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn inside_building(&self, p: Vec3) -> Option<usize> {
        self.buildings.iter().position(|b| b.contains(p))
    }

    fn blocked(&self, a: Vec3, b: Vec3, skip: Option<usize>) -> bool {
        self.buildings.iter().enumerate().any(|(i, bx)| Some(i) != skip && bx.segment_intersects(a, b))
    }

    /// Faces of `building` whose outward side faces the BS (the bottom face is never used).
    pub fn visible_faces(&self, building: usize) -> Vec<Face> {
        let b = &self.buildings[building];
        Face::ALL
            .iter()
            .copied()
            .filter(|f| !(f.axis == 2 && !f.upper))
            .filter(|f| b.face_visible_from(*f, self.bs_position))
            .collect()
    }
}

/// Places non-overlapping buildings and their BS-visible face scatterers.
pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<Scene> {
    let (fx0, fx1) = cfg.footprint;
    let (h0, h1) = cfg.height;
    if !(fx0 > 0.0 && fx0 <= fx1 && h0 > 0.0 && h0 <= h1) {
        return Err(Error::Config("footprint and height ranges must be positive and ordered".into()));
    }
    if !(cfg.region_x.0 < cfg.region_x.1 && cfg.region_y.0 < cfg.region_y.1) {
        return Err(Error::Config("region bounds must satisfy min < max".into()));
    }
    let (g0, g1) = cfg.reflection;
    if !(g0 > 0.0 && g0 <= g1 && g1 <= 1.0) {
        return Err(Error::Config("reflection range must lie in (0, 1]".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bs = cfg.bs_position;
    let mut buildings: Vec<Aabb> = Vec::with_capacity(cfg.building_count);
    for i in 0..cfg.building_count {
        let mut placed = None;
        for _ in 0..cfg.max_retries {
            let wx = rng.random_range(fx0..=fx1);
            let wy = rng.random_range(fx0..=fx1);
            let h = rng.random_range(h0..=h1);
            if cfg.region_x.1 - cfg.region_x.0 < wx || cfg.region_y.1 - cfg.region_y.0 < wy {
                break;
            }
            let x0 = rng.random_range(cfg.region_x.0..=cfg.region_x.1 - wx);
            let y0 = rng.random_range(cfg.region_y.0..=cfg.region_y.1 - wy);
            let cand = Aabb::new(Vec3::new(x0, y0, 0.0), Vec3::new(x0 + wx, y0 + wy, h));
            let c = cfg.clearance;
            let grown = Aabb::new(cand.min - Vec3::new(c, c, 1.0), cand.max + Vec3::new(c, c, 1.0));
            let bs_column = Vec3::new(bs.x, bs.y, 0.5 * h);
            if grown.contains(bs_column) || grown.contains(bs) {
                continue;
            }
            if buildings.iter().any(|b| b.overlaps(&grown)) {
                continue;
            }
            placed = Some(cand);
            break;
        }
        match placed {
            Some(b) => buildings.push(b),
            None => {
                return Err(Error::Generation(format!(
                    "could not place building {i} after {} attempts",
                    cfg.max_retries
                )))
            }
        }
    }

    let mut scene =
        Scene { schema_version: SCENE_SCHEMA_VERSION, bs_position: bs, buildings, scatterers: Vec::new(), seed };

    for bi in 0..scene.buildings.len() {
        let faces = scene.visible_faces(bi);
        let b = scene.buildings[bi];
        for j in 0..cfg.scatterers_per_building {
            let face = faces[j % faces.len()];
            // first pass: face centres; further scatterers land inside the central 80% of a face
            let position = if j < faces.len() {
                b.face_center(face)
            } else {
                let mut p = b.face_center(face).to_array();
                for (axis, lo, hi) in b.face_extent(face) {
                    let pad = 0.1 * (hi - lo);
                    p[axis] = rng.random_range(lo + pad..=hi - pad);
                }
                p.into()
            };
            let reflection_coefficient = rng.random_range(g0..=g1);
            scene.scatterers.push(Scatterer { position, reflection_coefficient, building: bi, face });
        }
    }
    Ok(scene)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathKind {
    LineOfSight,
    SingleBounce { scatterer: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub kind: PathKind,
    /// Centroid-to-UAV path length (via the scatterer for bounces).
    pub r_ref: f64,
    pub amplitude: Complex64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub paths: Vec<Path>,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn has_los(&self) -> bool {
        self.paths.iter().any(|p| p.kind == PathKind::LineOfSight)
    }
}

/// Free-space amplitude `lambda / (4 pi d)`.
pub fn free_space_amplitude(wavelength: f64, distance: f64) -> f64 {
    wavelength / (4.0 * std::f64::consts::PI * distance)
}

/// Visible propagation paths between the BS array centroid and a UAV.
pub fn enumerate_paths(cfg: &ArrayConfig, scene: &Scene, uav: Vec3) -> Result<PathSet> {
    if let Some(i) = scene.inside_building(uav) {
        return Err(Error::Domain(format!("UAV position {:?} lies inside building {i}", uav.to_array())));
    }
    let lam = cfg.wavelength();
    let bs = scene.bs_position;
    let mut paths = Vec::new();

    if !scene.blocked(bs, uav, None) {
        let r = bs.distance(uav);
        paths.push(Path {
            kind: PathKind::LineOfSight,
            r_ref: r,
            amplitude: Complex64::new(free_space_amplitude(lam, r), 0.0),
        });
    }

    for (si, s) in scene.scatterers.iter().enumerate() {
        let n = s.face.normal();
        // a segment leaving a convex face stays outside its host iff it heads outward
        if (bs - s.position).dot(n) <= 0.0 || (uav - s.position).dot(n) <= 0.0 {
            continue;
        }
        if scene.blocked(bs, s.position, Some(s.building)) || scene.blocked(s.position, uav, Some(s.building)) {
            continue;
        }
        let r = bs.distance(s.position) + s.position.distance(uav);
        paths.push(Path {
            kind: PathKind::SingleBounce { scatterer: si },
            r_ref: r,
            amplitude: Complex64::new(s.reflection_coefficient * free_space_amplitude(lam, r), 0.0),
        });
    }
    Ok(PathSet { paths })
}
