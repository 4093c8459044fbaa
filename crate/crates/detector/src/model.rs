use std::path::Path;

use prior3d_geometry::{normalize_yaw, ObjectClass, NUM_CLASSES};
use prior3d_tensor::{checkpoint, sigmoid_scalar, ParamId, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, STRIDES};
use crate::config::DecoderConfig;
use crate::decoder::{BlockOutput, DecoderBlock, Head};
use crate::input::{pinhole_params, FrameInput};
use crate::layers::{Mlp, ParamVars};
use crate::queries::{
    encode_positions, plan_queries, pooled_ray_vectors, pooled_vector_len, position_encoding_width, Provenance,
    QueryKind, QueryPlan,
};
use crate::DetectorError;

type Result<T> = std::result::Result<T, DetectorError>;

/// Bounds of the volume vanilla reference points are squashed into.
pub const SCENE_MIN: [f64; 3] = [-50.0, -50.0, -3.0];
pub const SCENE_MAX: [f64; 3] = [50.0, 50.0, 5.0];

/// What a checkpoint needs to rebuild the network it came from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub config: DecoderConfig,
    pub num_cameras: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug)]
struct Network {
    backbone: Backbone,
    vanilla_pos: ParamId,
    vanilla_feat: ParamId,
    ref_mlp: Mlp,
    pos_mlp: Mlp,
    prior_mlp: Option<Mlp>,
    head: Head,
}

pub struct Detector {
    pub spec: ModelSpec,
    pub store: ParamStore,
    net: Network,
    blocks: Vec<DecoderBlock>,
}

/// One decoded query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub center: [f64; 3],
    pub extents: [f64; 3],
    pub yaw: f64,
    pub class_probs: [f64; NUM_CLASSES],
    pub ref_point: [f64; 3],
    pub provenance: Provenance,
}

impl Prediction {
    pub fn best_class(&self) -> (ObjectClass, f64) {
        let (i, p) = self
            .class_probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
        (ObjectClass::from_index(i).expect("class index in range"), p)
    }
}

/// Heading from the doubled-angle pair; a box is symmetric under a half turn
/// so only ψ mod π is meaningful.
pub fn yaw_from_pair(sin2: f64, cos2: f64) -> f64 {
    let norm = sin2.hypot(cos2);
    if norm == 0.0 {
        return 0.0;
    }
    normalize_yaw(0.5 * (sin2 / norm).atan2(cos2 / norm))
}

pub fn yaw_to_pair(yaw: f64) -> [f64; 2] {
    let (s, c) = (2.0 * yaw).sin_cos();
    [s, c]
}

pub struct ForwardOutput {
    pub blocks: Vec<BlockOutput>,
    pub plan: QueryPlan,
}

impl Detector {
    pub fn new(config: DecoderConfig, num_cameras: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if num_cameras == 0 {
            return Err(DetectorError::Config("need at least one camera".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.d;
        let f = config.feature_channels;
        let backbone = Backbone::new(&mut store, f, config.priors.feat, &mut rng);
        let embed_std = 1.0 / (d as f64).sqrt();
        let vanilla_pos = store.insert_normal("queries.vanilla.pos", &[config.vanilla_queries, d], embed_std, &mut rng);
        let vanilla_feat = store.insert_normal("queries.vanilla.feat", &[config.vanilla_queries, d], embed_std, &mut rng);
        let ref_mlp = Mlp::new(&mut store, "queries.ref_mlp", [d, d, 3], &mut rng);
        let pos_mlp = Mlp::new(&mut store, "queries.pos_mlp", [position_encoding_width(config.pos_frequencies), d, d], &mut rng);
        let prior_mlp = config
            .priors
            .query
            .then(|| Mlp::new(&mut store, "queries.prior_mlp", [pooled_vector_len(f, STRIDES.len()), d, d], &mut rng));
        let groups = num_cameras * STRIDES.len();
        let blocks = (0..config.blocks)
            .map(|b| DecoderBlock::new(&mut store, &format!("decoder.{b}"), d, config.heads, config.ffn_hidden, f, groups, &mut rng))
            .collect();
        let head = Head::new(&mut store, d, NUM_CLASSES, &mut rng);
        Ok(Self {
            spec: ModelSpec { config, num_cameras, seed },
            store,
            net: Network { backbone, vanilla_pos, vanilla_feat, ref_mlp, pos_mlp, prior_mlp, head },
            blocks,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.spec.config
    }

    pub fn backbone(&self) -> &Backbone {
        &self.net.backbone
    }

    pub fn plan(&self, frame: &FrameInput) -> Result<QueryPlan> {
        plan_queries(frame, self.config())
    }

    /// Vanilla reference points: MLP of the position embedding, squashed into
    /// the scene volume.
    fn vanilla_refs(&self, t: &mut Tape, pv: &ParamVars, pos: Var) -> Result<Var> {
        let raw = self.net.ref_mlp.forward(t, pv, pos)?;
        let unit = t.sigmoid(raw);
        let span = t.constant(Tensor::vector((0..3).map(|a| SCENE_MAX[a] - SCENE_MIN[a]).collect()));
        let lo = t.constant(Tensor::vector(SCENE_MIN.to_vec()));
        let scaled = t.mul_row(unit, span)?;
        Ok(t.add_row(scaled, lo)?)
    }

    /// Initial (content q_feat, position q_pos, reference point) of every query.
    pub fn initial_queries(
        &self,
        t: &mut Tape,
        pv: &ParamVars,
        frame: &FrameInput,
        plan: &QueryPlan,
        features: &crate::BackboneFeatures,
    ) -> Result<(Var, Var, Var)> {
        let d = self.config().d;
        let n = plan.len();
        if n == 0 {
            return Err(DetectorError::Input("empty query set".into()));
        }
        match plan.kind {
            QueryKind::Vanilla => {
                if n != self.config().vanilla_queries {
                    return Err(DetectorError::Input(format!("vanilla plan has {n} queries, model has {}", self.config().vanilla_queries)));
                }
                let pos = pv.get(self.net.vanilla_pos);
                let feat = pv.get(self.net.vanilla_feat);
                let refs = self.vanilla_refs(t, pv, pos)?;
                Ok((feat, pos, refs))
            }
            QueryKind::Ray | QueryKind::Lidar => {
                let flat: Vec<f64> = plan.ref_points.iter().flatten().copied().collect();
                let refs = t.constant(Tensor::new([n, 3], flat)?);
                let enc = t.constant(encode_positions(&plan.ref_points, self.config().pos_frequencies));
                let pos = self.net.pos_mlp.forward(t, pv, enc)?;
                let feat = match (&self.net.prior_mlp, plan.kind) {
                    (Some(mlp), QueryKind::Ray) => {
                        let pooled = pooled_ray_vectors(t, plan, frame, features)?;
                        let per_ray = mlp.forward(t, pv, pooled)?;
                        let idx: Vec<usize> = plan
                            .provenance
                            .iter()
                            .map(|p| match p {
                                Provenance::Ray { ray, .. } => *ray,
                                _ => unreachable!("ray plans only hold ray queries"),
                            })
                            .collect();
                        t.gather_rows(per_ray, &idx)?
                    }
                    _ => t.constant(Tensor::zeros([n, d])),
                };
                Ok((feat, pos, refs))
            }
        }
    }

    /// Full forward pass recording onto `t`; returns every block's output.
    pub fn forward(&self, t: &mut Tape, frame: &FrameInput, plan: &QueryPlan) -> Result<Vec<BlockOutput>> {
        let pv = ParamVars::load(t, &self.store);
        let features = self.net.backbone.forward(t, &pv, frame)?;
        if features.levels.len() != self.spec.num_cameras {
            return Err(DetectorError::Input(format!(
                "frame has {} cameras, model was built for {}",
                features.levels.len(),
                self.spec.num_cameras
            )));
        }
        let cameras: Vec<_> = frame.views.iter().map(|v| pinhole_params(v.camera)).collect();
        let (mut x, pos, mut refs) = self.initial_queries(t, &pv, frame, plan, &features)?;
        let mut outputs = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (nx, invisible) = block.forward(t, &pv, x, pos, refs, &features, &cameras)?;
            x = nx;
            let (logits, centers, extents, yaw, offsets) = self.net.head.forward(t, &pv, x, refs)?;
            let ref_points = t.value(refs).data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
            outputs.push(BlockOutput { logits, centers, extents, yaw, offsets, ref_points, invisible });
            if self.config().refine {
                refs = t.detach(centers);
            }
        }
        Ok(outputs)
    }

    /// Plans queries and runs the network, discarding gradients.
    pub fn run(&self, frame: &FrameInput) -> Result<(Tape, ForwardOutput)> {
        let plan = self.plan(frame)?;
        let mut tape = Tape::new();
        let blocks = self.forward(&mut tape, frame, &plan)?;
        Ok((tape, ForwardOutput { blocks, plan }))
    }

    /// Decoded predictions of the final block.
    pub fn predict(&self, frame: &FrameInput) -> Result<Vec<Prediction>> {
        let (tape, out) = self.run(frame)?;
        let last = out.blocks.last().expect("at least one block");
        Ok(decode_block(&tape, last, &out.plan))
    }

    pub fn save(&self, dir: &Path, extra: serde_json::Value) -> Result<()> {
        let meta = serde_json::json!({ "model": self.spec, "extra": extra });
        checkpoint::save(dir, &self.store, meta)?;
        Ok(())
    }

    /// Rebuilds the model described by a checkpoint and loads its weights.
    pub fn load(dir: &Path) -> Result<(Self, serde_json::Value)> {
        let manifest = checkpoint::read_manifest(dir)?;
        let spec: ModelSpec = serde_json::from_value(manifest.meta.get("model").cloned().unwrap_or_default())
            .map_err(|e| DetectorError::Config(format!("checkpoint model description: {e}")))?;
        let mut model = Self::new(spec.config, spec.num_cameras, spec.seed)?;
        checkpoint::load_into(dir, &mut model.store)?;
        Ok((model, manifest.meta.get("extra").cloned().unwrap_or_default()))
    }
}

/// Reads a block's predictions off the tape.
pub fn decode_block(t: &Tape, block: &BlockOutput, plan: &QueryPlan) -> Vec<Prediction> {
    let logits = t.value(block.logits).data();
    let centers = t.value(block.centers).data();
    let extents = t.value(block.extents).data();
    let yaw = t.value(block.yaw).data();
    (0..block.ref_points.len())
        .map(|i| {
            let mut class_probs = [0.0; NUM_CLASSES];
            for (c, p) in class_probs.iter_mut().enumerate() {
                *p = sigmoid_scalar(logits[i * NUM_CLASSES + c]);
            }
            Prediction {
                center: [centers[3 * i], centers[3 * i + 1], centers[3 * i + 2]],
                extents: [0, 1, 2].map(|a| extents[3 * i + a].max(1e-6)),
                yaw: yaw_from_pair(yaw[2 * i], yaw[2 * i + 1]),
                class_probs,
                ref_point: block.ref_points[i],
                provenance: plan.provenance[i],
            }
        })
        .collect()
}
