use prior3d_scene::SEMANTIC_CHANNELS;
use prior3d_tensor::{ParamStore, Tape, Var};
use rand_chacha::ChaCha8Rng;

use crate::input::FrameInput;
use crate::layers::{Linear, ParamVars, RELU_GAIN};
use crate::DetectorError;

/// Output strides of the two feature levels.
pub const STRIDES: [usize; 2] = [4, 8];

#[derive(Clone, Copy, Debug)]
pub struct LevelMap {
    /// h×w×F.
    pub map: Var,
    pub stride: usize,
    pub height: usize,
    pub width: usize,
}

/// Per camera, per level feature maps, plus the prior maps pooled to each
/// level (values only) for the query-prior crops.
pub struct BackboneFeatures {
    pub levels: Vec<Vec<LevelMap>>,
    /// `[camera][level]`: h×w×(C+1) pooled semantic + depth.
    pub pooled_priors: Vec<Vec<Vec<f64>>>,
}

/// Patch-embedding stack: a 4×4 patch projection for level 1 and a 2×2
/// patch projection of the level-1 hidden map for level 2. With the feature
/// prior on, the pooled semantic and depth maps join each level right
/// before its output projection.
#[derive(Clone, Copy, Debug)]
pub struct Backbone {
    embed: [Linear; 2],
    project: [Linear; 2],
    feat_prior: bool,
    channels: usize,
}

impl Backbone {
    pub fn new(store: &mut ParamStore, channels: usize, feat_prior: bool, rng: &mut ChaCha8Rng) -> Self {
        let extra = if feat_prior { SEMANTIC_CHANNELS + 1 } else { 0 };
        let embed = [
            Linear::new(store, "backbone.l1.embed", 4 * 4 * 3, channels, RELU_GAIN, true, rng),
            Linear::new(store, "backbone.l2.embed", 2 * 2 * channels, channels, RELU_GAIN, true, rng),
        ];
        let project = [
            Linear::new(store, "backbone.l1.proj", channels + extra, channels, 1.0, true, rng),
            Linear::new(store, "backbone.l2.proj", channels + extra, channels, 1.0, true, rng),
        ];
        Self { embed, project, feat_prior, channels }
    }

    /// Channels entering each level's output projection.
    pub fn projection_inputs(&self) -> usize {
        self.channels + if self.feat_prior { SEMANTIC_CHANNELS + 1 } else { 0 }
    }

    pub fn forward(&self, t: &mut Tape, pv: &ParamVars, frame: &FrameInput) -> Result<BackboneFeatures, DetectorError> {
        frame.validate()?;
        let f = self.channels;
        let mut levels = Vec::with_capacity(frame.views.len());
        let mut pooled_priors = Vec::with_capacity(frame.views.len());
        for view in &frame.views {
            let (w, h) = (view.width(), view.height());
            let image = t.constant(view.image_tensor());
            let priors = t.constant(view.prior_tensor());
            let mut maps = Vec::with_capacity(2);
            let mut pooled = Vec::with_capacity(2);

            let mut input = t.patchify(image, STRIDES[0])?;
            let mut hidden_dims = (h / STRIDES[0], w / STRIDES[0]);
            for level in 0..2 {
                let (lh, lw) = hidden_dims;
                let hidden = self.embed[level].forward(t, pv, input)?;
                let hidden = t.relu(hidden);
                let prior = t.avg_pool(priors, STRIDES[level])?;
                pooled.push(t.value(prior).data().to_vec());
                let pre = if self.feat_prior {
                    let prior_rows = t.reshape(prior, &[lh * lw, SEMANTIC_CHANNELS + 1])?;
                    t.concat(&[hidden, prior_rows], 1)?
                } else {
                    hidden
                };
                let out = self.project[level].forward(t, pv, pre)?;
                let map = t.reshape(out, &[lh, lw, f])?;
                maps.push(LevelMap { map, stride: STRIDES[level], height: lh, width: lw });
                if level == 0 {
                    let grid = t.reshape(hidden, &[lh, lw, f])?;
                    input = t.patchify(grid, 2)?;
                    hidden_dims = (lh / 2, lw / 2);
                }
            }
            levels.push(maps);
            pooled_priors.push(pooled);
        }
        Ok(BackboneFeatures { levels, pooled_priors })
    }
}
