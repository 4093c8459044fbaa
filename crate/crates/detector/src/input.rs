use prior3d_geometry::{Box2D, Camera};
use prior3d_scene::{SceneRecord, SEMANTIC_CHANNELS};
use prior3d_tensor::{PinholeParams, Tensor};

use crate::DetectorError;

/// One camera's inputs: the image and the 2D priors produced for it.
#[derive(Clone, Debug)]
pub struct ViewInput<'a> {
    pub camera: &'a Camera,
    /// H×W×3, row-major.
    pub image: &'a [f32],
    /// H×W×C.
    pub semantic: &'a [f32],
    /// H×W.
    pub depth: &'a [f32],
    pub boxes: Vec<Box2D>,
}

impl ViewInput<'_> {
    pub fn width(&self) -> usize {
        self.camera.width()
    }

    pub fn height(&self) -> usize {
        self.camera.height()
    }

    pub fn pinhole(&self) -> PinholeParams {
        pinhole_params(self.camera)
    }

    pub(crate) fn image_tensor(&self) -> Tensor {
        let data = self.image.iter().map(|&x| x as f64).collect();
        Tensor::new([self.height(), self.width(), 3], data).expect("checked by FrameInput::validate")
    }

    /// Semantic channels followed by depth, H×W×(C+1).
    pub(crate) fn prior_tensor(&self) -> Tensor {
        let n = self.width() * self.height();
        let mut data = Vec::with_capacity(n * (SEMANTIC_CHANNELS + 1));
        for p in 0..n {
            data.extend(self.semantic[p * SEMANTIC_CHANNELS..(p + 1) * SEMANTIC_CHANNELS].iter().map(|&x| x as f64));
            data.push(self.depth[p] as f64);
        }
        Tensor::new([self.height(), self.width(), SEMANTIC_CHANNELS + 1], data).expect("checked by FrameInput::validate")
    }
}

pub fn pinhole_params(camera: &Camera) -> PinholeParams {
    let r = camera.rotation();
    let t = camera.translation();
    PinholeParams {
        rotation: [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
        ],
        translation: [t.x, t.y, t.z],
        fx: camera.fx(),
        fy: camera.fy(),
        cx: camera.cx(),
        cy: camera.cy(),
    }
}

/// Everything the detector sees for one frame.
#[derive(Clone, Debug)]
pub struct FrameInput<'a> {
    pub views: Vec<ViewInput<'a>>,
    /// Subsampled lidar returns, world frame.
    pub lidar: Vec<[f64; 3]>,
}

impl<'a> FrameInput<'a> {
    /// Uses the degraded prior boxes stored with the scene.
    pub fn from_record(record: &'a SceneRecord) -> Self {
        Self::with_boxes(record, |v| v.prior_boxes.iter().map(|b| b.bbox).collect())
    }

    /// Like [`FrameInput::from_record`] but with boxes chosen per view.
    pub fn with_boxes(record: &'a SceneRecord, boxes: impl Fn(&prior3d_scene::ViewRecord) -> Vec<Box2D>) -> Self {
        let views = record
            .scene
            .cameras
            .iter()
            .zip(&record.views)
            .map(|(camera, v)| ViewInput {
                camera,
                image: &v.image,
                semantic: &v.semantic,
                depth: &v.depth,
                boxes: boxes(v),
            })
            .collect();
        Self { views, lidar: record.lidar.points.clone() }
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        let first = self.views.first().ok_or_else(|| DetectorError::Input("frame has no cameras".into()))?;
        let (w, h) = (first.width(), first.height());
        if w % 8 != 0 || h % 8 != 0 {
            return Err(DetectorError::Input(format!("image size {w}×{h} must be divisible by 8")));
        }
        for (i, v) in self.views.iter().enumerate() {
            if v.width() != w || v.height() != h {
                return Err(DetectorError::Input(format!(
                    "camera {i} is {}×{}, camera 0 is {w}×{h}",
                    v.width(),
                    v.height()
                )));
            }
            let n = w * h;
            if v.image.len() != 3 * n || v.semantic.len() != SEMANTIC_CHANNELS * n || v.depth.len() != n {
                return Err(DetectorError::Input(format!("camera {i}: map sizes do not match {w}×{h}")));
            }
        }
        Ok(())
    }
}
