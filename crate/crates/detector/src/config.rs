use prior3d_geometry::{DepthMode, RaySampling};
use serde::{Deserialize, Serialize};

use crate::DetectorError;

/// Where reference points come from when the location prior is on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocSource {
    #[default]
    Ray,
    Lidar,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorFlags {
    /// Semantic and depth maps concatenated into the backbone levels.
    pub feat: bool,
    /// Reference points from 2D boxes (or lidar) instead of learned ones.
    pub loc: bool,
    /// Query features pooled from the box crops.
    pub query: bool,
    pub loc_source: LocSource,
}

impl PriorFlags {
    pub const VANILLA: PriorFlags = PriorFlags { feat: false, loc: false, query: false, loc_source: LocSource::Ray };

    /// Parses `none` or a comma list drawn from `feat`, `loc`, `query`.
    pub fn parse(list: &str, loc_source: LocSource) -> Result<Self, DetectorError> {
        let mut flags = PriorFlags { loc_source, ..Self::VANILLA };
        let list = list.trim();
        if list != "none" {
            for item in list.split(',').map(str::trim) {
                match item {
                    "feat" => flags.feat = true,
                    "loc" => flags.loc = true,
                    "query" => flags.query = true,
                    other => return Err(DetectorError::Config(format!("unknown prior {other:?}"))),
                }
            }
        }
        flags.validate()?;
        Ok(flags)
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.query && !self.loc {
            return Err(DetectorError::Config(
                "query priors need the location prior: query features are pooled from the 2D box each ray starts at".into(),
            ));
        }
        if self.query && self.loc_source == LocSource::Lidar {
            return Err(DetectorError::Config(
                "query priors need 2D boxes, so they cannot be combined with lidar reference points".into(),
            ));
        }
        Ok(())
    }

    /// Short label such as `vanilla`, `feat`, `feat,loc`, `feat,lidar`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.feat {
            parts.push("feat");
        }
        if self.loc {
            parts.push(match self.loc_source {
                LocSource::Ray => "loc",
                LocSource::Lidar => "lidar",
            });
        }
        if self.query {
            parts.push("query");
        }
        if parts.is_empty() {
            "vanilla".into()
        } else {
            parts.join(",")
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    /// Embedding width.
    pub d: usize,
    pub heads: usize,
    pub blocks: usize,
    /// Backbone channels per level.
    pub feature_channels: usize,
    pub ffn_hidden: usize,
    pub vanilla_queries: usize,
    pub priors: PriorFlags,
    /// Move each reference point to the block's predicted centre before the next block.
    pub refine: bool,
    pub ray_sampling: RaySampling,
    /// Boxes below this score do not spawn rays.
    pub box_score_threshold: f64,
    pub query_budget: usize,
    /// Frequencies of the sinusoidal encoding of reference points.
    pub pos_frequencies: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            d: 64,
            heads: 4,
            blocks: 6,
            feature_channels: 32,
            ffn_hidden: 128,
            vanilla_queries: 100,
            priors: PriorFlags::VANILLA,
            refine: true,
            ray_sampling: RaySampling { interval: 5.0, max_range: 50.0, mode: DepthMode::RayLength },
            box_score_threshold: 0.3,
            query_budget: 600,
            pos_frequencies: 4,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        self.priors.validate()?;
        let bad = |m: &str| Err(DetectorError::Config(m.to_string()));
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return bad("d must be a positive multiple of heads");
        }
        if self.blocks == 0 {
            return bad("need at least one decoder block");
        }
        if self.feature_channels == 0 || self.ffn_hidden == 0 || self.vanilla_queries == 0 || self.query_budget == 0 {
            return bad("widths and query counts must be positive");
        }
        if !(0.0..=1.0).contains(&self.box_score_threshold) {
            return bad("box score threshold outside [0, 1]");
        }
        if !(self.ray_sampling.interval > 0.0 && self.ray_sampling.max_range > 0.0) {
            return bad("ray sampling interval and range must be positive");
        }
        Ok(())
    }
}
