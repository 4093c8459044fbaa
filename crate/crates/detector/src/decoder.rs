use prior3d_tensor::{PinholeParams, ParamStore, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use crate::backbone::BackboneFeatures;
use crate::layers::{LayerNorm, Linear, Mlp, ParamVars};
use crate::DetectorError;

type Result<T> = std::result::Result<T, DetectorError>;

/// Regression outputs per query: Δx Δy Δz, three raw extents, sin 2ψ, cos 2ψ.
pub const REG_OUTPUTS: usize = 8;

#[derive(Clone, Copy, Debug)]
pub struct SelfAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl SelfAttention {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut lin = |n: &str| Linear::new(store, &format!("{name}.{n}"), d, d, 1.0, true, rng);
        Self { q: lin("q"), k: lin("k"), v: lin("v"), o: lin("o"), heads }
    }

    /// Multi-head attention with queries and keys from `qk`, values from `v`.
    pub fn forward(&self, t: &mut Tape, pv: &ParamVars, qk: Var, v: Var) -> Result<Var> {
        let d = t.shape(qk)[1];
        let dh = d / self.heads;
        let q = self.q.forward(t, pv, qk)?;
        let k = self.k.forward(t, pv, qk)?;
        let v = self.v.forward(t, pv, v)?;
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = t.slice_cols(q, h * dh, dh)?;
            let kh = t.slice_cols(k, h * dh, dh)?;
            let vh = t.slice_cols(v, h * dh, dh)?;
            let s = t.matmul_nt(qh, kh)?;
            let s = t.scale(s, 1.0 / (dh as f64).sqrt());
            let a = t.softmax(s, 1)?;
            heads.push(t.matmul(a, vh)?);
        }
        let cat = t.concat(&heads, 1)?;
        self.o.forward(t, pv, cat)
    }
}

/// Feature lookup at each query's projected reference point in every camera
/// and level, blended by weights predicted from the query.
#[derive(Clone, Copy, Debug)]
pub struct CrossAttention {
    weights: Linear,
    out: Linear,
}

pub struct CrossAttentionOutput {
    /// N×d update; zero for rows with no valid sample.
    pub update: Var,
    /// Per query: at least one camera/level sample was valid.
    pub visible: Vec<bool>,
}

impl CrossAttention {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, channels: usize, groups: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weights: Linear::new(store, &format!("{name}.weights"), d, groups, 1.0, true, rng),
            // no bias: a query that sees nothing gets no update
            out: Linear::new(store, &format!("{name}.out"), channels, d, 1.0, false, rng),
        }
    }

    pub fn forward(
        &self,
        t: &mut Tape,
        pv: &ParamVars,
        query: Var,
        ref_points: Var,
        features: &BackboneFeatures,
        cameras: &[PinholeParams],
    ) -> Result<CrossAttentionOutput> {
        let n = t.shape(query)[0];
        let mut samples = Vec::new();
        let mut valid_cols: Vec<Vec<bool>> = Vec::new();
        for (cam, levels) in cameras.iter().zip(&features.levels) {
            let proj = t.pinhole_project(ref_points, cam)?;
            let uv = t.slice_cols(proj, 0, 2)?;
            for level in levels {
                // pixel i covers [i, i+1) in image space; feature cell centres sit at stride·(j + ½)
                let scaled = t.scale(uv, 1.0 / level.stride as f64);
                let grid = t.add_scalar(scaled, -0.5);
                let (s, valid) = t.bilinear_sample(level.map, grid)?;
                samples.push(s);
                valid_cols.push(valid);
            }
        }
        let groups = samples.len();
        let mut mask = vec![false; n * groups];
        for (g, col) in valid_cols.iter().enumerate() {
            for (i, &ok) in col.iter().enumerate() {
                mask[i * groups + g] = ok;
            }
        }
        let visible: Vec<bool> = (0..n).map(|i| mask[i * groups..(i + 1) * groups].iter().any(|&m| m)).collect();
        let logits = self.weights.forward(t, pv, query)?;
        let w = t.masked_softmax_rows(logits, &mask)?;
        let stacked = t.concat(&samples, 1)?;
        let agg = t.group_weighted_sum(w, stacked)?;
        let update = self.out.forward(t, pv, agg)?;
        Ok(CrossAttentionOutput { update, visible })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderBlock {
    self_attn: SelfAttention,
    norm1: LayerNorm,
    cross: CrossAttention,
    norm2: LayerNorm,
    ffn: Mlp,
    norm3: LayerNorm,
}

impl DecoderBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        ffn_hidden: usize,
        channels: usize,
        groups: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            self_attn: SelfAttention::new(store, &format!("{name}.self_attn"), d, heads, rng),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d),
            cross: CrossAttention::new(store, &format!("{name}.cross"), d, channels, groups, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d),
            ffn: Mlp::new(store, &format!("{name}.ffn"), [d, ffn_hidden, d], rng),
            norm3: LayerNorm::new(store, &format!("{name}.norm3"), d),
        }
    }

    /// Post-norm block: self-attention, local cross-attention, feed-forward.
    /// Rows that see nothing skip the cross-attention residual entirely.
    /// Returns the new content and the number of invisible queries.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        t: &mut Tape,
        pv: &ParamVars,
        x: Var,
        pos: Var,
        ref_points: Var,
        features: &BackboneFeatures,
        cameras: &[PinholeParams],
    ) -> Result<(Var, usize)> {
        let xp = t.add(x, pos)?;
        let a = self.self_attn.forward(t, pv, xp, x)?;
        let r = t.add(x, a)?;
        let x = self.norm1.forward(t, pv, r)?;

        let xp = t.add(x, pos)?;
        let ca = self.cross.forward(t, pv, xp, ref_points, features, cameras)?;
        let r = t.add(x, ca.update)?;
        let normed = self.norm2.forward(t, pv, r)?;
        let invisible = ca.visible.iter().filter(|v| !**v).count();
        let x = if invisible == 0 {
            normed
        } else {
            let d = t.shape(x)[1];
            let keep: Vec<f64> = ca.visible.iter().flat_map(|&v| std::iter::repeat_n(if v { 1.0 } else { 0.0 }, d)).collect();
            let keep = t.constant(Tensor::new([ca.visible.len(), d], keep)?);
            let diff = t.sub(normed, x)?;
            let gated = t.mul(diff, keep)?;
            t.add(x, gated)?
        };

        let f = self.ffn.forward(t, pv, x)?;
        let r = t.add(x, f)?;
        Ok((self.norm3.forward(t, pv, r)?, invisible))
    }
}

/// Classification and box regression MLPs shared by all blocks.
#[derive(Clone, Copy, Debug)]
pub struct Head {
    cls: Mlp,
    reg: Mlp,
}

/// Tape handles of one block's predictions.
#[derive(Clone, Debug)]
pub struct BlockOutput {
    /// N×classes, pre-sigmoid.
    pub logits: Var,
    /// N×3: reference point plus predicted offset.
    pub centers: Var,
    /// N×3 softplus extents (l, w, h).
    pub extents: Var,
    /// N×2 raw (sin 2ψ, cos 2ψ).
    pub yaw: Var,
    /// N×3 offsets.
    pub offsets: Var,
    pub ref_points: Vec<[f64; 3]>,
    pub invisible: usize,
}

impl Head {
    pub fn new(store: &mut ParamStore, d: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let cls = Mlp::new(store, "head.cls", [d, d, classes], rng);
        let reg = Mlp::new(store, "head.reg", [d, d, REG_OUTPUTS], rng);
        // rare-positive prior on the logits, ~2 m initial extents
        let prior_logit = -((1.0 - 0.01) / 0.01f64).ln();
        store.value_mut(cls.l2.b.expect("bias")).data_mut().iter_mut().for_each(|b| *b = prior_logit);
        let two_m = (2.0f64.exp() - 1.0).ln();
        store.value_mut(reg.l2.b.expect("bias")).data_mut()[3..6].iter_mut().for_each(|b| *b = two_m);
        Self { cls, reg }
    }

    pub fn forward(&self, t: &mut Tape, pv: &ParamVars, x: Var, ref_points: Var) -> Result<(Var, Var, Var, Var, Var)> {
        let logits = self.cls.forward(t, pv, x)?;
        let reg = self.reg.forward(t, pv, x)?;
        let offsets = t.slice_cols(reg, 0, 3)?;
        let centers = t.add(ref_points, offsets)?;
        let raw = t.slice_cols(reg, 3, 3)?;
        let extents = t.softplus(raw);
        let yaw = t.slice_cols(reg, 6, 2)?;
        Ok((logits, centers, extents, yaw, offsets))
    }
}
