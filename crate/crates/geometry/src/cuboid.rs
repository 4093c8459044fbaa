use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::polygon::Point2;
use crate::{Camera, GeometryError, Vec3};

/// Number of detectable object classes.
pub const NUM_CLASSES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Vehicle,
    Human,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; NUM_CLASSES] = [ObjectClass::Vehicle, ObjectClass::Human];

    pub fn index(self) -> usize {
        match self {
            ObjectClass::Vehicle => 0,
            ObjectClass::Human => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Vehicle => "VEHICLE",
            ObjectClass::Human => "HUMAN",
        }
    }
}

/// Maps any angle to (−π, π].
pub fn normalize_yaw(yaw: f64) -> f64 {
    let y = yaw.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

/// Oriented 3D box: yaw about +z, extents as (length along heading, width, height).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CuboidSpec", into = "CuboidSpec")]
pub struct Cuboid {
    center: [f64; 3],
    extents: [f64; 3],
    yaw: f64,
    class: ObjectClass,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CuboidSpec {
    center: [f64; 3],
    extents: [f64; 3],
    yaw: f64,
    class: ObjectClass,
}

impl TryFrom<CuboidSpec> for Cuboid {
    type Error = GeometryError;

    fn try_from(s: CuboidSpec) -> Result<Self, Self::Error> {
        Cuboid::new(s.center, s.extents, s.yaw, s.class)
    }
}

impl From<Cuboid> for CuboidSpec {
    fn from(c: Cuboid) -> Self {
        CuboidSpec {
            center: c.center,
            extents: c.extents,
            yaw: c.yaw,
            class: c.class,
        }
    }
}

/// First intersection of a ray with a cuboid surface.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub t: f64,
    /// Outward face normal, world frame.
    pub normal: Vec3,
}

impl Cuboid {
    pub fn new(center: [f64; 3], extents: [f64; 3], yaw: f64, class: ObjectClass) -> Result<Self, GeometryError> {
        if !extents.iter().all(|e| *e > 0.0 && e.is_finite()) {
            return Err(GeometryError::Cuboid(format!("extents must be positive, got {extents:?}")));
        }
        if !center.iter().all(|c| c.is_finite()) || !yaw.is_finite() {
            return Err(GeometryError::Cuboid("non-finite center or yaw".into()));
        }
        Ok(Self {
            center,
            extents,
            yaw: normalize_yaw(yaw),
            class,
        })
    }

    pub fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    pub fn center_array(&self) -> [f64; 3] {
        self.center
    }

    /// (length, width, height)
    pub fn extents(&self) -> [f64; 3] {
        self.extents
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn class(&self) -> ObjectClass {
        self.class
    }

    pub fn bev_center(&self) -> Point2 {
        [self.center[0], self.center[1]]
    }

    fn local_to_world(&self, l: [f64; 3]) -> Vec3 {
        let (s, c) = self.yaw.sin_cos();
        Vec3::new(
            self.center[0] + c * l[0] - s * l[1],
            self.center[1] + s * l[0] + c * l[1],
            self.center[2] + l[2],
        )
    }

    fn world_dir_to_local(&self, d: &Vec3) -> Vec3 {
        let (s, c) = self.yaw.sin_cos();
        Vec3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let [l, w, h] = self.extents.map(|e| 0.5 * e);
        let mut out = [Vec3::zeros(); 8];
        let mut k = 0;
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    out[k] = self.local_to_world([sx * l, sy * w, sz * h]);
                    k += 1;
                }
            }
        }
        out
    }

    /// Footprint rectangle, counter-clockwise.
    pub fn bev_polygon(&self) -> [Point2; 4] {
        let [l, w, _] = self.extents.map(|e| 0.5 * e);
        [[l, -w], [l, w], [-l, w], [-l, -w]].map(|[x, y]| {
            let p = self.local_to_world([x, y, 0.0]);
            [p.x, p.y]
        })
    }

    /// Nearest entry point of a ray starting outside the box. Rays starting
    /// inside never hit.
    pub fn intersect_ray(&self, origin: &Vec3, dir: &Vec3) -> Option<RayHit> {
        let o = self.world_dir_to_local(&(origin - self.center()));
        let d = self.world_dir_to_local(dir);
        let half = self.extents.map(|e| 0.5 * e);
        let mut t_enter = f64::NEG_INFINITY;
        let mut t_exit = f64::INFINITY;
        let mut enter_axis = 0;
        for a in 0..3 {
            if d[a].abs() < 1e-15 {
                if o[a].abs() > half[a] {
                    return None;
                }
                continue;
            }
            let t1 = (-half[a] - o[a]) / d[a];
            let t2 = (half[a] - o[a]) / d[a];
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            if lo > t_enter {
                t_enter = lo;
                enter_axis = a;
            }
            t_exit = t_exit.min(hi);
        }
        if t_enter > t_exit || t_enter <= 0.0 {
            return None;
        }
        let mut n_local = [0.0; 3];
        n_local[enter_axis] = -d[enter_axis].signum();
        let (s, c) = self.yaw.sin_cos();
        let normal = Vec3::new(c * n_local[0] - s * n_local[1], s * n_local[0] + c * n_local[1], n_local[2]);
        Some(RayHit { t: t_enter, normal })
    }

    /// Distance from `p` to the nearest face of the box surface (zero on it).
    pub fn surface_distance(&self, p: &Vec3) -> f64 {
        let q = self.world_dir_to_local(&(p - self.center()));
        let half = self.extents.map(|e| 0.5 * e);
        let outside = Vec3::new(
            (q.x.abs() - half[0]).max(0.0),
            (q.y.abs() - half[1]).max(0.0),
            (q.z.abs() - half[2]).max(0.0),
        )
        .norm();
        if outside > 0.0 {
            return outside;
        }
        (0..3)
            .map(|a| half[a] - q[a].abs())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Axis-aligned 2D box in pixels with a class and objectness score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Box2DSpec", into = "Box2DSpec")]
pub struct Box2D {
    u: f64,
    v: f64,
    width: f64,
    height: f64,
    class: ObjectClass,
    score: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Box2DSpec {
    u: f64,
    v: f64,
    width: f64,
    height: f64,
    class: ObjectClass,
    score: f64,
}

impl TryFrom<Box2DSpec> for Box2D {
    type Error = GeometryError;

    fn try_from(s: Box2DSpec) -> Result<Self, Self::Error> {
        Box2D::new([s.u, s.v], [s.width, s.height], s.class, s.score)
    }
}

impl From<Box2D> for Box2DSpec {
    fn from(b: Box2D) -> Self {
        Box2DSpec {
            u: b.u,
            v: b.v,
            width: b.width,
            height: b.height,
            class: b.class,
            score: b.score,
        }
    }
}

impl Box2D {
    pub fn new(center: [f64; 2], size: [f64; 2], class: ObjectClass, score: f64) -> Result<Self, GeometryError> {
        if !(size[0] > 0.0 && size[1] > 0.0) {
            return Err(GeometryError::Box2D(format!("size must be positive, got {size:?}")));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(GeometryError::Box2D(format!("score {score} outside [0, 1]")));
        }
        if !center.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::Box2D("non-finite centre".into()));
        }
        Ok(Self {
            u: center[0],
            v: center[1],
            width: size[0],
            height: size[1],
            class,
            score,
        })
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64, class: ObjectClass, score: f64) -> Result<Self, GeometryError> {
        Self::new([0.5 * (x0 + x1), 0.5 * (y0 + y1)], [x1 - x0, y1 - y0], class, score)
    }

    pub fn center(&self) -> [f64; 2] {
        [self.u, self.v]
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn class(&self) -> ObjectClass {
        self.class
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    /// `[x0, y0, x1, y1]`
    pub fn corners(&self) -> [f64; 4] {
        let (hw, hh) = (0.5 * self.width, 0.5 * self.height);
        [self.u - hw, self.v - hh, self.u + hw, self.v + hh]
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        let [x0, y0, x1, y1] = self.corners();
        u >= x0 && u <= x1 && v >= y0 && v <= y1
    }

    pub fn with_score(mut self, score: f64) -> Result<Self, GeometryError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(GeometryError::Box2D(format!("score {score} outside [0, 1]")));
        }
        self.score = score;
        Ok(self)
    }
}

/// Bounding box of the projected corners that lie in front of the camera,
/// clipped to the image. `None` when no corner has positive depth or the
/// clipped box is empty. The score is 1.
pub fn project_cuboid_to_box2d(camera: &Camera, cuboid: &Cuboid) -> Option<Box2D> {
    let mut bounds = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    let mut any = false;
    for c in cuboid.corners() {
        let pc = camera.world_to_camera(&c);
        if pc.z <= 1e-6 {
            continue;
        }
        any = true;
        let u = camera.fx() * pc.x / pc.z + camera.cx();
        let v = camera.fy() * pc.y / pc.z + camera.cy();
        bounds = [bounds[0].min(u), bounds[1].min(v), bounds[2].max(u), bounds[3].max(v)];
    }
    if !any {
        return None;
    }
    let (w, h) = (camera.width() as f64, camera.height() as f64);
    let x0 = bounds[0].clamp(0.0, w);
    let y0 = bounds[1].clamp(0.0, h);
    let x1 = bounds[2].clamp(0.0, w);
    let y1 = bounds[3].clamp(0.0, h);
    if x1 - x0 <= 0.0 || y1 - y0 <= 0.0 {
        return None;
    }
    Box2D::from_corners(x0, y0, x1, y1, cuboid.class(), 1.0).ok()
}

/// Euclidean distance between BEV (x, y) centres.
pub fn centroid_distance_bev(a: &Cuboid, b: &Cuboid) -> f64 {
    let (pa, pb) = (a.bev_center(), b.bev_center());
    (pa[0] - pb[0]).hypot(pa[1] - pb[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cub(x: f64, y: f64, l: f64, w: f64, yaw: f64) -> Cuboid {
        Cuboid::new([x, y, 0.8], [l, w, 1.6], yaw, ObjectClass::Vehicle).unwrap()
    }

    #[test]
    fn footprint_axis_aligned() {
        let p = cub(0.0, 0.0, 2.0, 1.0, 0.0).bev_polygon();
        assert_eq!(p, [[1.0, -0.5], [1.0, 0.5], [-1.0, 0.5], [-1.0, -0.5]]);
    }

    #[test]
    fn quarter_turn_swaps_axes() {
        let p = cub(0.0, 0.0, 2.0, 1.0, PI / 2.0).bev_polygon();
        let xs: Vec<f64> = p.iter().map(|q| q[0].abs()).collect();
        let ys: Vec<f64> = p.iter().map(|q| q[1].abs()).collect();
        assert!(xs.iter().all(|x| (x - 0.5).abs() < 1e-12));
        assert!(ys.iter().all(|y| (y - 1.0).abs() < 1e-12));
    }

    #[test]
    fn yaw_is_normalized() {
        let c = cub(0.0, 0.0, 2.0, 1.0, 3.0 * PI);
        assert!((c.yaw() - PI).abs() < 1e-12);
        let c = cub(0.0, 0.0, 2.0, 1.0, -PI);
        assert!((c.yaw() - PI).abs() < 1e-12);
        assert!(Cuboid::new([0.0; 3], [1.0, 0.0, 1.0], 0.0, ObjectClass::Human).is_err());
    }

    #[test]
    fn centroid_distance_examples() {
        let a = cub(0.0, 0.0, 2.0, 1.0, 0.0);
        let b = cub(3.0, 4.0, 2.0, 1.0, 1.0);
        assert_eq!(centroid_distance_bev(&a, &a), 0.0);
        assert_eq!(centroid_distance_bev(&a, &b), 5.0);
        assert_eq!(centroid_distance_bev(&b, &a), 5.0);
    }

    #[test]
    fn ray_hits_near_face() {
        let c = cub(10.0, 0.0, 2.0, 2.0, 0.0);
        let hit = c
            .intersect_ray(&Vec3::new(0.0, 0.0, 0.8), &Vec3::new(1.0, 0.0, 0.0))
            .unwrap();
        assert!((hit.t - 9.0).abs() < 1e-12);
        assert!((hit.normal - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
        assert!(c
            .intersect_ray(&Vec3::new(0.0, 0.0, 0.8), &Vec3::new(-1.0, 0.0, 0.0))
            .is_none());
    }

    #[test]
    fn box_validation() {
        assert!(Box2D::new([1.0, 1.0], [0.0, 2.0], ObjectClass::Human, 0.5).is_err());
        assert!(Box2D::new([1.0, 1.0], [1.0, 2.0], ObjectClass::Human, 1.5).is_err());
    }
}
