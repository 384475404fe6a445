//! UAV trajectories, noisy GPS, scene point clouds, and task-mode labels.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::codebook::{CoverageRanges, FocalPoint};
use crate::error::{Error, Result};
use crate::geometry::{Face, Vec3};
use crate::scene::Scene;

pub const TASK_MODE_COUNT: usize = 10;

/// The ten motion modes; the discriminant is the task-mode id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum MotionMode {
    SteadyCruise = 0,
    FastCruise = 1,
    LeftTurn = 2,
    RightTurn = 3,
    Ascend = 4,
    Descend = 5,
    Hover = 6,
    AcceleratingCruise = 7,
    DeceleratingCruise = 8,
    ClimbingTurn = 9,
}

impl MotionMode {
    pub const ALL: [MotionMode; TASK_MODE_COUNT] = [
        MotionMode::SteadyCruise,
        MotionMode::FastCruise,
        MotionMode::LeftTurn,
        MotionMode::RightTurn,
        MotionMode::Ascend,
        MotionMode::Descend,
        MotionMode::Hover,
        MotionMode::AcceleratingCruise,
        MotionMode::DeceleratingCruise,
        MotionMode::ClimbingTurn,
    ];

    pub fn from_id(id: usize) -> Result<Self> {
        Self::ALL.get(id).copied().ok_or(Error::Index { what: "task mode", index: id, len: TASK_MODE_COUNT })
    }

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn description(self) -> &'static str {
        match self {
            MotionMode::SteadyCruise => "steady cruising flight through an urban corridor",
            MotionMode::FastCruise => "fast straight transit above the street canyon",
            MotionMode::LeftTurn => "coordinated left turn at constant speed",
            MotionMode::RightTurn => "coordinated right turn at constant speed",
            MotionMode::Ascend => "climbing while moving forward",
            MotionMode::Descend => "descending while moving forward",
            MotionMode::Hover => "hovering in place",
            MotionMode::AcceleratingCruise => "accelerating along a straight path",
            MotionMode::DeceleratingCruise => "decelerating along a straight path",
            MotionMode::ClimbingTurn => "climbing turn",
        }
    }

    /// Parameter ranges sampled per trajectory.
    pub fn params(self) -> ModeParams {
        let base = ModeParams {
            speed: (0.0, 0.0),
            accel: (0.0, 0.0),
            yaw_rate: (0.0, 0.0),
            climb: (0.0, 0.0),
            random_turn_sign: false,
            speed_cap: 15.0,
        };
        match self {
            MotionMode::SteadyCruise => ModeParams { speed: (3.0, 8.0), ..base },
            MotionMode::FastCruise => ModeParams { speed: (8.0, 15.0), ..base },
            MotionMode::LeftTurn => ModeParams { speed: (4.0, 10.0), yaw_rate: (0.15, 0.4), ..base },
            MotionMode::RightTurn => ModeParams { speed: (4.0, 10.0), yaw_rate: (-0.4, -0.15), ..base },
            MotionMode::Ascend => ModeParams { speed: (1.0, 5.0), climb: (1.0, 3.0), ..base },
            MotionMode::Descend => ModeParams { speed: (1.0, 5.0), climb: (-3.0, -1.0), ..base },
            MotionMode::Hover => base,
            MotionMode::AcceleratingCruise => ModeParams { speed: (2.0, 5.0), accel: (1.0, 3.0), ..base },
            MotionMode::DeceleratingCruise => ModeParams { speed: (10.0, 15.0), accel: (-3.0, -1.0), ..base },
            MotionMode::ClimbingTurn => ModeParams {
                speed: (4.0, 8.0),
                yaw_rate: (0.15, 0.4),
                climb: (0.5, 2.0),
                random_turn_sign: true,
                ..base
            },
        }
    }
}

/// Sampling ranges of one motion mode (m/s, m/s^2, rad/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeParams {
    pub speed: (f64, f64),
    pub accel: (f64, f64),
    pub yaw_rate: (f64, f64),
    pub climb: (f64, f64),
    pub random_turn_sign: bool,
    pub speed_cap: f64,
}

impl ModeParams {
    /// Upper bound on 3D speed over any trajectory of this mode.
    pub fn max_speed(&self) -> f64 {
        let horizontal = if self.accel.1 > 0.0 { self.speed_cap } else { self.speed.1.min(self.speed_cap) };
        let vertical = self.climb.0.abs().max(self.climb.1.abs());
        horizontal.hypot(vertical)
    }

    fn draw(range: (f64, f64), rng: &mut ChaCha8Rng) -> f64 {
        if range.0 == range.1 {
            range.0
        } else {
            rng.random_range(range.0..=range.1)
        }
    }
}

/// Closed-form kinematics: horizontal motion along a heading with optional
/// constant acceleration (speed clamped to `[0, speed_cap]`) or a constant
/// yaw rate, plus a constant vertical rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub start: Vec3,
    pub heading: f64,
    pub speed: f64,
    pub accel: f64,
    pub yaw_rate: f64,
    pub climb: f64,
    pub speed_cap: f64,
}

impl Kinematics {
    fn path_length(&self, t: f64) -> f64 {
        if self.accel == 0.0 {
            return self.speed * t;
        }
        let bound = if self.accel > 0.0 { self.speed_cap } else { 0.0 };
        let t_b = ((bound - self.speed) / self.accel).max(0.0);
        if t <= t_b {
            self.speed * t + 0.5 * self.accel * t * t
        } else {
            self.speed * t_b + 0.5 * self.accel * t_b * t_b + bound * (t - t_b)
        }
    }

    pub fn position(&self, t: f64) -> Vec3 {
        let horizontal = if self.yaw_rate == 0.0 {
            let s = self.path_length(t);
            Vec3::new(s * self.heading.cos(), s * self.heading.sin(), 0.0)
        } else {
            let rad = self.speed / self.yaw_rate;
            let h1 = self.heading + self.yaw_rate * t;
            Vec3::new(rad * (h1.sin() - self.heading.sin()), -rad * (h1.cos() - self.heading.cos()), 0.0)
        };
        self.start + horizontal + Vec3::new(0.0, 0.0, self.climb * t)
    }

    pub fn sample(&self, t: usize, dt: f64) -> Vec<Vec3> {
        (0..t).map(|i| self.position(i as f64 * dt)).collect()
    }
}

/// Flight envelope constraints applied while generating trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub coverage: CoverageRanges,
    /// Absolute altitude band (m above ground).
    pub min_altitude: f64,
    pub max_altitude: f64,
    /// Half-width of the uniform per-axis hover jitter (m).
    pub hover_jitter: f64,
    pub max_retries: usize,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            coverage: CoverageRanges::default(),
            min_altitude: 8.0,
            max_altitude: 120.0,
            hover_jitter: 0.05,
            max_retries: 2000,
        }
    }
}

impl TrajectoryConfig {
    /// Whether a position is flyable: inside coverage, altitude band, and outside buildings.
    pub fn admissible(&self, scene: &Scene, p: Vec3) -> bool {
        let fp = FocalPoint::from_cartesian(p - scene.bs_position);
        p.z >= self.min_altitude
            && p.z <= self.max_altitude
            && self.coverage.contains(&fp)
            && scene.inside_building(p).is_none()
    }
}

/// Samples a collision-free trajectory of `t` slots for one motion mode.
pub fn generate_trajectory(
    scene: &Scene,
    mode: MotionMode,
    t: usize,
    dt: f64,
    seed: u64,
    cfg: &TrajectoryConfig,
) -> Result<Vec<Vec3>> {
    if t < 2 {
        return Err(Error::Config(format!("trajectory needs at least 2 slots, got {t}")));
    }
    if !(dt > 0.0) {
        return Err(Error::Config(format!("slot interval must be positive, got {dt}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cov = cfg.coverage;
    let params = mode.params();
    for _ in 0..cfg.max_retries {
        let fp = FocalPoint::new(
            rng.random_range(cov.theta_min..=cov.theta_max),
            rng.random_range(cov.phi_min..=cov.phi_max),
            rng.random_range(cov.r_min..=cov.r_max),
        );
        let start = scene.bs_position + fp.to_cartesian();
        let mut yaw = ModeParams::draw(params.yaw_rate, &mut rng);
        if params.random_turn_sign && rng.random_bool(0.5) {
            yaw = -yaw;
        }
        let kin = Kinematics {
            start,
            heading: rng.random_range(0.0..std::f64::consts::TAU),
            speed: ModeParams::draw(params.speed, &mut rng),
            accel: ModeParams::draw(params.accel, &mut rng),
            yaw_rate: yaw,
            climb: ModeParams::draw(params.climb, &mut rng),
            speed_cap: params.speed_cap,
        };
        let mut positions = kin.sample(t, dt);
        if mode == MotionMode::Hover && cfg.hover_jitter > 0.0 {
            let j = cfg.hover_jitter;
            for p in positions.iter_mut() {
                *p = *p + Vec3::new(rng.random_range(-j..=j), rng.random_range(-j..=j), rng.random_range(-j..=j));
            }
        }
        if positions.iter().all(|&p| cfg.admissible(scene, p)) {
            return Ok(positions);
        }
    }
    Err(Error::Generation(format!("no admissible {mode:?} trajectory after {} attempts", cfg.max_retries)))
}

/// Worst-case speed bound for a mode, including hover jitter.
pub fn mode_speed_bound(mode: MotionMode, dt: f64, cfg: &TrajectoryConfig) -> f64 {
    let jitter = if mode == MotionMode::Hover { 2.0 * 3f64.sqrt() * cfg.hover_jitter / dt } else { 0.0 };
    mode.params().max_speed() + jitter
}

/// Adds i.i.d. zero-mean Gaussian noise with standard deviation `sigma` per axis.
pub fn add_gps_noise(positions: &[Vec3], sigma: f64, seed: u64) -> Result<Vec<Vec3>> {
    if !(sigma >= 0.0) {
        return Err(Error::Config(format!("GPS sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(positions.to_vec());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(positions
        .iter()
        .map(|&p| p + Vec3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect())
}

/// Ground rectangle used when no building face is visible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundRegion {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Default for GroundRegion {
    fn default() -> Self {
        Self { x: (0.0, 170.0), y: (-150.0, 150.0) }
    }
}

/// `p` points sampled uniformly (by area) over BS-visible building faces, or
/// over the ground plane `z = 0` when the scene has none.
pub fn sample_point_cloud(scene: &Scene, p: usize, seed: u64, ground: &GroundRegion) -> Result<Vec<Vec3>> {
    if p == 0 {
        return Err(Error::Config("point cloud needs at least one point".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let faces: Vec<(usize, Face)> =
        (0..scene.buildings.len()).flat_map(|b| scene.visible_faces(b).into_iter().map(move |f| (b, f))).collect();
    if faces.is_empty() {
        return Ok((0..p)
            .map(|_| {
                Vec3::new(rng.random_range(ground.x.0..=ground.x.1), rng.random_range(ground.y.0..=ground.y.1), 0.0)
            })
            .collect());
    }
    let areas: Vec<f64> = faces.iter().map(|(b, f)| scene.buildings[*b].face_area(*f)).collect();
    let pick = WeightedIndex::new(&areas).map_err(|e| Error::Generation(e.to_string()))?;
    Ok((0..p)
        .map(|_| {
            let (b, f) = faces[pick.sample(&mut rng)];
            let bx = &scene.buildings[b];
            let mut q = bx.face_center(f).to_array();
            for (axis, lo, hi) in bx.face_extent(f) {
                q[axis] = rng.random_range(lo..=hi);
            }
            Vec3::from(q)
        })
        .collect())
}

/// Row of the learnable task embedding for a motion mode.
pub fn task_mode_label(mode: usize) -> Result<usize> {
    MotionMode::from_id(mode).map(MotionMode::id)
}
