use serde::{Deserialize, Serialize};

use crate::{GeometryError, Mat3, Vec3};

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Pinhole camera with world-to-camera extrinsics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraSpec", into = "CameraSpec")]
pub struct Camera {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    rotation: Mat3,
    translation: Vec3,
    width: usize,
    height: usize,
}

/// Serialized form: row-major rotation.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct CameraSpec {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    width: usize,
    height: usize,
}

impl TryFrom<CameraSpec> for Camera {
    type Error = GeometryError;

    fn try_from(s: CameraSpec) -> Result<Self, Self::Error> {
        let r = s.rotation;
        Camera::new(
            [s.fx, s.fy, s.cx, s.cy],
            Mat3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            Vec3::from(s.translation),
            (s.width, s.height),
        )
    }
}

impl From<Camera> for CameraSpec {
    fn from(c: Camera) -> Self {
        let r = c.rotation;
        CameraSpec {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: c.translation.into(),
            width: c.width,
            height: c.height,
        }
    }
}

/// Result of projecting a world point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    /// Camera-frame z in meters.
    pub depth: f64,
    /// Positive depth and inside the image.
    pub valid: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    direction: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Result<Self, GeometryError> {
        let n = direction.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(GeometryError::Ray(format!("direction {direction:?} has no length")));
        }
        Ok(Self {
            origin,
            direction: direction / n,
        })
    }

    /// Unit direction.
    pub fn direction(&self) -> Vec3 {
        self.direction
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// How sample spacing along a back-projected ray is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthMode {
    /// Euclidean distance from the camera centre.
    #[default]
    RayLength,
    /// Camera-frame z.
    CameraZ,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RaySampling {
    pub interval: f64,
    pub max_range: f64,
    pub mode: DepthMode,
}

impl Default for RaySampling {
    fn default() -> Self {
        Self {
            interval: 5.0,
            max_range: 50.0,
            mode: DepthMode::RayLength,
        }
    }
}

fn sample_count(interval: f64, max_range: f64) -> Result<usize, GeometryError> {
    if !(interval > 0.0) {
        return Err(GeometryError::Ray(format!("sampling interval {interval} must be positive")));
    }
    if max_range < interval {
        return Ok(0);
    }
    Ok((max_range / interval + 1e-9).floor() as usize)
}

/// Points at distances `interval, 2·interval, …, ≤ max_range` along `ray`.
/// Empty when `max_range < interval`.
pub fn sample_ray(ray: &Ray, interval: f64, max_range: f64) -> Result<Vec<Vec3>, GeometryError> {
    let n = sample_count(interval, max_range)?;
    Ok((1..=n).map(|k| ray.at(k as f64 * interval)).collect())
}

/// Samples the ray through pixel `(u, v)` of `camera` according to `sampling`.
pub fn sample_camera_ray(
    camera: &Camera,
    u: f64,
    v: f64,
    sampling: &RaySampling,
) -> Result<Vec<Vec3>, GeometryError> {
    let ray = camera.unproject(u, v);
    match sampling.mode {
        DepthMode::RayLength => sample_ray(&ray, sampling.interval, sampling.max_range),
        DepthMode::CameraZ => {
            let n = sample_count(sampling.interval, sampling.max_range)?;
            let cos = ray.direction().dot(&camera.forward());
            if cos <= 0.0 {
                return Ok(Vec::new());
            }
            Ok((1..=n)
                .map(|k| ray.at(k as f64 * sampling.interval / cos))
                .collect())
        }
    }
}

impl Camera {
    /// `intrinsics` is `[fx, fy, cx, cy]`, `size` is `(width, height)` in pixels.
    pub fn new(
        intrinsics: [f64; 4],
        rotation: Mat3,
        translation: Vec3,
        size: (usize, usize),
    ) -> Result<Self, GeometryError> {
        let [fx, fy, cx, cy] = intrinsics;
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::Camera(format!("focal lengths must be positive, got {fx}, {fy}")));
        }
        if size.0 == 0 || size.1 == 0 {
            return Err(GeometryError::Camera("empty image".into()));
        }
        let ortho_err = (rotation.transpose() * rotation - Mat3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho_err > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(GeometryError::Camera(format!(
                "rotation not proper orthonormal (|RᵀR - I| = {ortho_err:e}, det = {det})"
            )));
        }
        if !translation.iter().all(|t| t.is_finite()) {
            return Err(GeometryError::Camera("non-finite translation".into()));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width: size.0,
            height: size.1,
        })
    }

    /// Level camera at `position` looking along world heading `yaw` with the
    /// given horizontal field of view; principal point at the image centre.
    pub fn mounted(position: Vec3, yaw: f64, hfov_deg: f64, size: (usize, usize)) -> Result<Self, GeometryError> {
        let f = 0.5 * size.0 as f64 / (0.5 * hfov_deg.to_radians()).tan();
        let (s, c) = yaw.sin_cos();
        // rows: camera x (right), y (down), z (forward) in world coordinates
        let rotation = Mat3::new(s, -c, 0.0, 0.0, 0.0, -1.0, c, s, 0.0);
        let translation = -(rotation * position);
        Self::new(
            [f, f, 0.5 * size.0 as f64, 0.5 * size.1 as f64],
            rotation,
            translation,
            size,
        )
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }

    pub fn fy(&self) -> f64 {
        self.fy
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotation.row(2).transpose()
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn in_image(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    pub fn project(&self, p: &Vec3) -> Projection {
        let c = self.world_to_camera(p);
        if c.z <= 0.0 {
            return Projection {
                u: f64::NAN,
                v: f64::NAN,
                depth: c.z,
                valid: false,
            };
        }
        let u = self.fx * c.x / c.z + self.cx;
        let v = self.fy * c.y / c.z + self.cy;
        Projection {
            u,
            v,
            depth: c.z,
            valid: self.in_image(u, v),
        }
    }

    /// Ray from the camera centre through pixel `(u, v)`; pixels outside the
    /// image are allowed.
    pub fn unproject(&self, u: f64, v: f64) -> Ray {
        let dc = Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        let dw = self.rotation.transpose() * dc;
        Ray::new(self.center(), dw).expect("back-projected direction has unit z component")
    }

    /// Point on the ray through `(u, v)` at camera-frame depth `z`.
    pub fn unproject_depth(&self, u: f64, v: f64, z: f64) -> Vec3 {
        let dc = Vec3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z);
        self.rotation.transpose() * (dc - self.translation)
    }
}
