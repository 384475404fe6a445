//! Small 3D vector and axis-aligned box helpers.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn axis(self, i: usize) -> f64 {
        match i {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Axis-aligned box given by its min and max corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

/// One of the six faces of an [`Aabb`], identified by axis and side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Face {
    pub axis: u8,
    /// `true` for the face at `max` along `axis`.
    pub upper: bool,
}

impl Face {
    pub const ALL: [Face; 6] = [
        Face { axis: 0, upper: false },
        Face { axis: 0, upper: true },
        Face { axis: 1, upper: false },
        Face { axis: 1, upper: true },
        Face { axis: 2, upper: false },
        Face { axis: 2, upper: true },
    ];

    pub fn normal(self) -> Vec3 {
        let s = if self.upper { 1.0 } else { -1.0 };
        match self.axis {
            0 => Vec3::new(s, 0.0, 0.0),
            1 => Vec3::new(0.0, s, 0.0),
            _ => Vec3::new(0.0, 0.0, s),
        }
    }
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn has_positive_extent(&self) -> bool {
        self.max.x > self.min.x && self.max.y > self.min.y && self.max.z > self.min.z
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    /// Strict interior containment.
    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|i| p.axis(i) > self.min.axis(i) && p.axis(i) < self.max.axis(i))
    }

    /// Closed containment with tolerance.
    pub fn contains_closed(&self, p: Vec3, tol: f64) -> bool {
        (0..3).all(|i| p.axis(i) >= self.min.axis(i) - tol && p.axis(i) <= self.max.axis(i) + tol)
    }

    pub fn overlaps(&self, o: &Aabb) -> bool {
        (0..3).all(|i| self.min.axis(i) < o.max.axis(i) && o.min.axis(i) < self.max.axis(i))
    }

    pub fn face_center(&self, f: Face) -> Vec3 {
        let mut c = self.center().to_array();
        let a = f.axis as usize;
        c[a] = if f.upper { self.max.axis(a) } else { self.min.axis(a) };
        c.into()
    }

    /// The two in-plane axes of a face and their extents.
    pub fn face_extent(&self, f: Face) -> [(usize, f64, f64); 2] {
        let a = f.axis as usize;
        let mut out = [(0, 0.0, 0.0); 2];
        let mut k = 0;
        for i in 0..3 {
            if i != a {
                out[k] = (i, self.min.axis(i), self.max.axis(i));
                k += 1;
            }
        }
        out
    }

    pub fn face_area(&self, f: Face) -> f64 {
        let [(_, a0, a1), (_, b0, b1)] = self.face_extent(f);
        (a1 - a0) * (b1 - b0)
    }

    /// Whether a face's outward side looks toward `viewer`.
    pub fn face_visible_from(&self, f: Face, viewer: Vec3) -> bool {
        (viewer - self.face_center(f)).dot(f.normal()) > 0.0
    }

    /// Whether a point lies on the closed surface of the box within `tol`.
    pub fn on_surface(&self, p: Vec3, tol: f64) -> bool {
        if !self.contains_closed(p, tol) {
            return false;
        }
        (0..3).any(|i| (p.axis(i) - self.min.axis(i)).abs() <= tol || (p.axis(i) - self.max.axis(i)).abs() <= tol)
    }

    /// Slab test: does the segment `a -> b` pass through the open interior of the box?
    ///
    /// Grazing contacts (segments running along a face or touching an edge) do not count.
    pub fn segment_intersects(&self, a: Vec3, b: Vec3) -> bool {
        let d = b - a;
        let mut t0 = 0.0_f64;
        let mut t1 = 1.0_f64;
        for i in 0..3 {
            let (o, di, lo, hi) = (a.axis(i), d.axis(i), self.min.axis(i), self.max.axis(i));
            if di == 0.0 {
                if o <= lo || o >= hi {
                    return false;
                }
                continue;
            }
            let mut ta = (lo - o) / di;
            let mut tb = (hi - o) / di;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 >= t1 {
                return false;
            }
        }
        true
    }
}
