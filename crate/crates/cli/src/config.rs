use std::path::Path;

use anyhow::{bail, Context, Result};
use prior3d_detector::DecoderConfig;
use prior3d_eval::EvalConfig;
use prior3d_scene::{GenerationConfig, LidarConfig, PriorNoiseConfig, SceneConfig};
use prior3d_train::TrainConfig;
use serde::{Deserialize, Serialize};

/// Everything a run depends on. Loaded from TOML, overridden by flags, and
/// echoed verbatim next to every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Scene counts for train, val and test.
    pub splits: [usize; 3],
    pub scene: SceneConfig,
    pub noise: PriorNoiseConfig,
    pub lidar: LidarConfig,
    pub model: DecoderConfig,
    pub training: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            splits: [2000, 200, 200],
            scene: SceneConfig::default(),
            noise: PriorNoiseConfig::default(),
            lidar: LidarConfig::default(),
            model: DecoderConfig::default(),
            training: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn generation(&self) -> GenerationConfig {
        GenerationConfig { scene: self.scene, noise: self.noise, lidar: self.lidar }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.noise.validate()?;
        self.lidar.validate()?;
        self.model.validate()?;
        self.training.validate()?;
        self.eval.validate()?;
        if self.splits[0] == 0 {
            bail!("the train split needs at least one scene");
        }
        Ok(())
    }

    /// Splits `total` scenes in the configured train:val:test proportions
    /// (largest remainder), keeping at least one train scene.
    pub fn scaled_splits(&self, total: usize) -> Result<[usize; 3]> {
        let sum: usize = self.splits.iter().sum();
        if total == 0 || sum == 0 {
            bail!("cannot split {total} scenes");
        }
        let exact: Vec<f64> = self.splits.iter().map(|&s| s as f64 * total as f64 / sum as f64).collect();
        let mut out = [0usize; 3];
        for (o, e) in out.iter_mut().zip(&exact) {
            *o = e.floor() as usize;
        }
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        let mut left = total - out.iter().sum::<usize>();
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            out[i] += 1;
            left -= 1;
        }
        if out[0] == 0 {
            let donor = if out[1] >= out[2] { 1 } else { 2 };
            out[donor] -= 1;
            out[0] += 1;
        }
        Ok(out)
    }
}
