use serde::{Deserialize, Serialize};

use crate::SceneError;

/// Inclusive `[min, max]` range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn check(&self, what: &str, allow_zero: bool) -> Result<(), SceneError> {
        let lower_ok = if allow_zero { self.min >= 0.0 } else { self.min > 0.0 };
        if !(lower_ok && self.max >= self.min && self.max.is_finite()) {
            return Err(SceneError::Config(format!("{what}: bad range [{}, {}]", self.min, self.max)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassLayout {
    /// Object count per scene, inclusive.
    pub count: [usize; 2],
    pub length: Range,
    pub width: Range,
    pub height: Range,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigConfig {
    pub num_cameras: usize,
    pub hfov_deg: f64,
    pub width: usize,
    pub height: usize,
    pub mount_height: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            num_cameras: 6,
            hfov_deg: 90.0,
            width: 160,
            height: 96,
            mount_height: 1.6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub vehicle: ClassLayout,
    pub human: ClassLayout,
    /// BEV distance of object centres from the rig origin.
    pub placement_radius: Range,
    /// Gap kept between footprint bounding circles.
    pub min_separation: f64,
    pub max_placement_attempts: usize,
    pub rig: RigConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            vehicle: ClassLayout {
                count: [3, 7],
                length: Range::new(3.5, 5.5),
                width: Range::new(1.6, 2.2),
                height: Range::new(1.4, 2.0),
            },
            human: ClassLayout {
                count: [2, 5],
                length: Range::new(0.4, 0.8),
                width: Range::new(0.4, 0.8),
                height: Range::new(1.5, 1.9),
            },
            placement_radius: Range::new(5.0, 48.0),
            min_separation: 0.5,
            max_placement_attempts: 200,
            rig: RigConfig::default(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        for (name, c) in [("vehicle", &self.vehicle), ("human", &self.human)] {
            c.length.check(name, false)?;
            c.width.check(name, false)?;
            c.height.check(name, false)?;
            if c.count[0] > c.count[1] {
                return Err(SceneError::Config(format!("{name}: count range reversed")));
            }
        }
        self.placement_radius.check("placement_radius", true)?;
        if self.placement_radius.max > 50.0 {
            return Err(SceneError::Config("objects must be placed within 50 m".into()));
        }
        if self.min_separation < 0.0 {
            return Err(SceneError::Config("negative separation".into()));
        }
        let r = &self.rig;
        if r.num_cameras == 0 || r.width == 0 || r.height == 0 || !(r.hfov_deg > 0.0 && r.hfov_deg < 180.0) {
            return Err(SceneError::Config("degenerate camera rig".into()));
        }
        Ok(())
    }
}

/// Degradations applied to ground-truth 2D outputs to mimic an imperfect
/// image backbone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorNoiseConfig {
    /// Std. dev. of the box-centre jitter per axis, pixels.
    pub center_sigma_px: f64,
    /// Std. dev. of the relative box-size jitter.
    pub size_sigma_rel: f64,
    /// Score drawn uniformly from this range for surviving true boxes.
    pub true_score: Range,
    pub false_negative_prob: f64,
    /// Expected background false positives per view.
    pub false_positive_rate: f64,
    pub false_positive_score: Range,
    pub semantic_blur_radius: usize,
    pub semantic_noise: f64,
    pub depth_blur_radius: usize,
    pub depth_noise: f64,
}

impl PriorNoiseConfig {
    /// Leaves every prior untouched.
    pub fn none() -> Self {
        Self {
            center_sigma_px: 0.0,
            size_sigma_rel: 0.0,
            true_score: Range::new(1.0, 1.0),
            false_negative_prob: 0.0,
            false_positive_rate: 0.0,
            false_positive_score: Range::new(0.0, 0.0),
            semantic_blur_radius: 0,
            semantic_noise: 0.0,
            depth_blur_radius: 0,
            depth_noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let probs_ok = (0.0..=1.0).contains(&self.false_negative_prob)
            && self.true_score.min >= 0.0
            && self.true_score.max <= 1.0
            && self.true_score.min <= self.true_score.max
            && self.false_positive_score.min >= 0.0
            && self.false_positive_score.max <= 1.0
            && self.false_positive_score.min <= self.false_positive_score.max;
        let sigmas_ok = self.center_sigma_px >= 0.0
            && self.size_sigma_rel >= 0.0
            && self.false_positive_rate >= 0.0
            && self.semantic_noise >= 0.0
            && self.depth_noise >= 0.0;
        if !(probs_ok && sigmas_ok) {
            return Err(SceneError::Config(format!("invalid prior noise {self:?}")));
        }
        Ok(())
    }
}

impl Default for PriorNoiseConfig {
    fn default() -> Self {
        Self {
            center_sigma_px: 2.0,
            size_sigma_rel: 0.1,
            true_score: Range::new(0.5, 1.0),
            false_negative_prob: 0.1,
            false_positive_rate: 0.5,
            false_positive_score: Range::new(0.05, 0.6),
            semantic_blur_radius: 1,
            semantic_noise: 0.05,
            depth_blur_radius: 1,
            depth_noise: 0.02,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LidarConfig {
    /// Elevation rows.
    pub n_beams: usize,
    pub azimuth_steps: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub mount_height: f64,
    pub max_range: f64,
    /// Fraction of returns kept, chosen evenly over the scan order.
    pub subsample_rate: f64,
}

impl LidarConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let ok = self.n_beams > 0
            && self.azimuth_steps > 0
            && self.subsample_rate > 0.0
            && self.subsample_rate <= 1.0
            && self.max_range > 0.0
            && self.mount_height > 0.0
            && self.elevation_min_deg <= self.elevation_max_deg
            && self.elevation_min_deg > -90.0
            && self.elevation_max_deg < 90.0;
        if !ok {
            return Err(SceneError::Config(format!("invalid lidar config {self:?}")));
        }
        Ok(())
    }
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            n_beams: 16,
            azimuth_steps: 720,
            elevation_min_deg: -15.0,
            elevation_max_deg: 2.0,
            mount_height: 1.8,
            max_range: 50.0,
            subsample_rate: 0.05,
        }
    }
}
