//! Reverse-mode differentiation over a linear record of executed operations.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Nodes are
//! appended in execution order, so walking the record backwards is already a
//! valid reverse topological order and each node is visited exactly once.

use crate::error::{invalid, shape_err, Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pinhole camera constants for [`Tape::pinhole_project`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PinholeParams {
    /// World-to-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Camera-frame depth below which a projection is treated as behind the camera.
pub const MIN_PROJECTION_DEPTH: f64 = 1e-6;
/// Pixel coordinate written for points behind the camera.
pub const BEHIND_CAMERA_UV: f64 = -1e9;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Tanh(Var),
    Exp(Var),
    Abs(Var),
    Softmax { x: Var, outer: usize, len: usize, inner: usize },
    MaskedSoftmaxRows(Var),
    LayerNormRows { x: Var, inv_std: Vec<f64> },
    Concat { parts: Vec<Var>, outer: usize, inner: usize },
    SliceCols { x: Var, start: usize },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    GatherRows { x: Var, idx: Vec<usize> },
    RegionPool { x: Var, region: Region, weights: Option<Vec<f64>> },
    AvgPool { x: Var, k: usize },
    Patchify { x: Var, k: usize },
    Bilinear { map: Var, uv: Var },
    Pinhole { points: Var, cam: PinholeParams },
    GroupWeightedSum { w: Var, s: Var },
    SigmoidFocal { logits: Var, targets: Vec<f64>, alpha: f64, gamma: f64 },
}

/// Half-open pixel window `[y0, y1) × [x0, x1)` of an `H×W×C` map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl Region {
    pub fn area(&self) -> usize {
        (self.y1 - self.y0) * (self.x1 - self.x0)
    }
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(Var, ParamId)>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(Var, ParamId)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of every parameter leaf into `store`.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(var, id) in &self.params {
            if let Some(g) = self.wrt(var) {
                let dst = store.grad_mut(id).data_mut();
                for (d, s) in dst.iter_mut().zip(g) {
                    *d += s;
                }
            }
        }
    }
}

fn matmul_into(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices covering the full strided extents of
    // m×k, k×n and m×n row-major matrices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// Per-element focal term and its derivative w.r.t. the logit.
fn focal_term(x: f64, t: f64, alpha: f64, gamma: f64) -> (f64, f64) {
    let s = if t > 0.5 { 1.0 } else { -1.0 };
    let alpha_t = if t > 0.5 { alpha } else { 1.0 - alpha };
    let pt = sigmoid(s * x);
    let log_pt = log_sigmoid(s * x);
    let one_m = 1.0 - pt;
    let mod_pow = if gamma == 0.0 { 1.0 } else { one_m.powf(gamma) };
    let loss = -alpha_t * mod_pow * log_pt;
    let dloss = -alpha_t * s * mod_pow * (one_m - gamma * pt * log_pt);
    (loss, dloss)
}

struct BilinearTap {
    offsets: [Option<usize>; 4],
    weights: [f64; 4],
    /// d weight / du and d weight / dv for each tap.
    du: [f64; 4],
    dv: [f64; 4],
}

/// Bilinear taps for a point in pixel-centre coordinates. `None` when the
/// point lies fully outside the map.
fn bilinear_taps(h: usize, w: usize, c: usize, u: f64, v: f64) -> Option<BilinearTap> {
    if !(u > -1.0 && u < w as f64 && v > -1.0 && v < h as f64) {
        return None;
    }
    let x0 = u.floor();
    let y0 = v.floor();
    let fx = u - x0;
    let fy = v - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let coords = [(x0, y0), (x0 + 1, y0), (x0, y0 + 1), (x0 + 1, y0 + 1)];
    let weights = [
        (1.0 - fx) * (1.0 - fy),
        fx * (1.0 - fy),
        (1.0 - fx) * fy,
        fx * fy,
    ];
    let du = [-(1.0 - fy), 1.0 - fy, -fy, fy];
    let dv = [-(1.0 - fx), -fx, 1.0 - fx, fx];
    let mut offsets = [None; 4];
    for (o, &(x, y)) in offsets.iter_mut().zip(&coords) {
        if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
            *o = Some((y as usize * w + x as usize) * c);
        }
    }
    Some(BilinearTap {
        offsets,
        weights,
        du,
        dv,
    })
}

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(shape_err(op, format!("expected a matrix, got {s:?}"))),
    }
}

fn dims3(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [h, w, c] => Ok((*h, *w, *c)),
        s => Err(shape_err(op, format!("expected an H×W×C map, got {s:?}"))),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn t(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Untracked input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Tracked leaf that is not part of a [`ParamStore`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Copies a parameter onto the tape as a tracked leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push(store.value(id).clone(), Op::Param, true);
        self.params.push((v, id));
        v
    }

    /// Untracked copy of an existing node's value (stops gradients).
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a), "matmul")?;
        let (k2, n) = dims2(self.value(b), "matmul")?;
        if k != k2 {
            return Err(shape_err(
                "matmul",
                format!("inner dimensions differ: [{m}×{k}] · [{k2}×{n}]"),
            ));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(
            m,
            k,
            n,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (n as isize, 1),
            &mut out,
            0.0,
        );
        let tracked = self.t(a) || self.t(b);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMul(a, b), tracked))
    }

    /// `a · bᵀ` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a), "matmul_nt")?;
        let (n, k2) = dims2(self.value(b), "matmul_nt")?;
        if k != k2 {
            return Err(shape_err(
                "matmul_nt",
                format!("inner dimensions differ: [{m}×{k}] · [{n}×{k2}]ᵀ"),
            ));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(
            m,
            k,
            n,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (1, k as isize),
            &mut out,
            0.0,
        );
        let tracked = self.t(a) || self.t(b);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMulNT(a, b), tracked))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "transpose")?;
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let tracked = self.t(x);
        Ok(self.push(Tensor::new([c, r], out)?, Op::Transpose(x), tracked))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let tracked = self.t(a) || self.t(b);
        self.push(value, op, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_map(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_map(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_map(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    fn row_broadcast(&self, a: Var, row: Var, op: &'static str) -> Result<usize> {
        let w = self.value(a).row_len();
        if self.value(row).numel() != w || self.shape(a).len() < 2 {
            return Err(shape_err(
                op,
                format!("cannot broadcast {:?} over rows of {:?}", self.shape(row), self.shape(a)),
            ));
        }
        Ok(w)
    }

    /// Adds a row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let w = self.row_broadcast(a, row, "add_row")?;
        let r = self.value(row).data();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(w) {
            chunk.iter_mut().zip(r).for_each(|(x, b)| *x += b);
        }
        let tracked = self.t(a) || self.t(row);
        Ok(self.push(out, Op::AddRow(a, row), tracked))
    }

    /// Multiplies every row of `a` elementwise by a row vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let w = self.row_broadcast(a, row, "mul_row")?;
        let r = self.value(row).data();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(w) {
            chunk.iter_mut().zip(r).for_each(|(x, b)| *x *= b);
        }
        let tracked = self.t(a) || self.t(row);
        Ok(self.push(out, Op::MulRow(a, row), tracked))
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| f(a)).collect();
        let value = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let tracked = self.t(x);
        self.push(value, op, tracked)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.map(x, Op::Scale(x, s), |a| a * s)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.map(x, Op::AddScalar(x), |a| a + s)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu(x), |a| a.max(0.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.map(x, Op::Softplus(x), softplus)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, Op::Tanh(x), f64::tanh)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, Op::Exp(x), f64::exp)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.map(x, Op::Abs(x), f64::abs)
    }

    /// Max-stabilised softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(invalid("softmax", format!("axis {axis} for shape {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| src[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..len {
                    let e = (src[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[idx(k)] /= total;
                }
            }
        }
        let tracked = self.t(x);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Softmax { x, outer, len, inner },
            tracked,
        ))
    }

    /// Row softmax restricted to entries where `mask` is true. Masked entries
    /// get weight zero; a fully masked row is all zeros.
    pub fn masked_softmax_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "masked_softmax_rows")?;
        if mask.len() != r * c {
            return Err(shape_err(
                "masked_softmax_rows",
                format!("mask has {} entries for [{r}×{c}]", mask.len()),
            ));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let m = &mask[i * c..(i + 1) * c];
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &k)| k)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let dst = &mut out[i * c..(i + 1) * c];
            let mut total = 0.0;
            for j in 0..c {
                if m[j] {
                    dst[j] = (row[j] - max).exp();
                    total += dst[j];
                }
            }
            dst.iter_mut().for_each(|v| *v /= total);
        }
        let tracked = self.t(x);
        Ok(self.push(Tensor::new([r, c], out)?, Op::MaskedSoftmaxRows(x), tracked))
    }

    /// Normalises each row to zero mean and unit variance (no affine part).
    pub fn layer_norm_rows(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "layer_norm_rows")?;
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + eps).sqrt();
            for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = (v - mean) * s;
            }
            inv_std.push(s);
        }
        let tracked = self.t(x);
        Ok(self.push(
            Tensor::new([r, c], out)?,
            Op::LayerNormRows { x, inv_std },
            tracked,
        ))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or_else(|| invalid("concat", "no inputs"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(invalid("concat", format!("axis {axis} for shape {first:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err(
                    "concat",
                    format!("{s:?} does not match {first:?} outside axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let block = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let tracked = parts.iter().any(|&p| self.t(p));
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                outer,
                inner,
            },
            tracked,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "slice_cols")?;
        if len == 0 || start + len > c {
            return Err(shape_err(
                "slice_cols",
                format!("columns {start}..{} of {c}", start + len),
            ));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let tracked = self.t(x);
        Ok(self.push(Tensor::new([r, len], out)?, Op::SliceCols { x, start }, tracked))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        let tracked = self.t(x);
        Ok(self.push(value, Op::Reshape(x), tracked))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let tracked = self.t(x);
        self.push(Tensor::scalar(s), Op::Sum(x), tracked)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        let tracked = self.t(x);
        self.push(Tensor::scalar(s), Op::Mean(x), tracked)
    }

    /// Selects rows (leading index) of `x`; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let rows = v.rows();
        let w = v.row_len();
        if idx.is_empty() || idx.iter().any(|&i| i >= rows) {
            return Err(invalid("gather_rows", format!("indices {idx:?} for {rows} rows")));
        }
        let mut out = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            out.extend_from_slice(v.row(i));
        }
        let mut shape = v.shape().to_vec();
        shape[0] = idx.len();
        let tracked = self.t(x);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            tracked,
        ))
    }

    /// Channel-wise mean over all pixels of an `H×W×C` map.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (h, w, _) = dims3(self.value(x), "global_avg_pool")?;
        self.region_pool(x, Region { y0: 0, y1: h, x0: 0, x1: w }, None)
    }

    /// Channel-wise mean of `weight · map` over a pixel window. `weights`,
    /// when given, holds one value per window pixel in row-major order.
    pub fn region_pool(&mut self, x: Var, region: Region, weights: Option<Vec<f64>>) -> Result<Var> {
        let (h, w, c) = dims3(self.value(x), "region_pool")?;
        if region.y0 >= region.y1 || region.x0 >= region.x1 || region.y1 > h || region.x1 > w {
            return Err(invalid("region_pool", format!("{region:?} outside {h}×{w}")));
        }
        if let Some(ws) = &weights {
            if ws.len() != region.area() {
                return Err(shape_err(
                    "region_pool",
                    format!("{} weights for {} pixels", ws.len(), region.area()),
                ));
            }
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; c];
        let rw = region.x1 - region.x0;
        for y in region.y0..region.y1 {
            for xx in region.x0..region.x1 {
                let wgt = weights
                    .as_ref()
                    .map_or(1.0, |ws| ws[(y - region.y0) * rw + (xx - region.x0)]);
                let base = (y * w + xx) * c;
                for (o, v) in out.iter_mut().zip(&src[base..base + c]) {
                    *o += wgt * v;
                }
            }
        }
        let n = region.area() as f64;
        out.iter_mut().for_each(|v| *v /= n);
        let tracked = self.t(x);
        Ok(self.push(
            Tensor::vector(out),
            Op::RegionPool { x, region, weights },
            tracked,
        ))
    }

    /// Non-overlapping `k×k` average pooling of an `H×W×C` map.
    pub fn avg_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let (h, w, c) = dims3(self.value(x), "avg_pool")?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(shape_err("avg_pool", format!("{h}×{w} not divisible by {k}")));
        }
        let (oh, ow) = (h / k, w / k);
        let src = self.value(x).data();
        let mut out = vec![0.0; oh * ow * c];
        let norm = 1.0 / (k * k) as f64;
        for y in 0..h {
            for xx in 0..w {
                let dst = ((y / k) * ow + xx / k) * c;
                let s = (y * w + xx) * c;
                for ch in 0..c {
                    out[dst + ch] += src[s + ch] * norm;
                }
            }
        }
        let tracked = self.t(x);
        Ok(self.push(Tensor::new([oh, ow, c], out)?, Op::AvgPool { x, k }, tracked))
    }

    /// Rearranges non-overlapping `k×k` patches of an `H×W×C` map into rows of
    /// a `(H/k·W/k) × (k·k·C)` matrix, patch-major in raster order.
    pub fn patchify(&mut self, x: Var, k: usize) -> Result<Var> {
        let (h, w, c) = dims3(self.value(x), "patchify")?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(shape_err("patchify", format!("{h}×{w} not divisible by {k}")));
        }
        let (oh, ow) = (h / k, w / k);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(h * w * c);
        for py in 0..oh {
            for px in 0..ow {
                for dy in 0..k {
                    let s = ((py * k + dy) * w + px * k) * c;
                    out.extend_from_slice(&src[s..s + k * c]);
                }
            }
        }
        let tracked = self.t(x);
        Ok(self.push(
            Tensor::new([oh * ow, k * k * c], out)?,
            Op::Patchify { x, k },
            tracked,
        ))
    }

    /// Bilinear lookup of an `H×W×C` map at `N` continuous pixel positions
    /// (`uv` is `N×2` as column, row; integers are pixel centres), giving an
    /// `N×C` result and a validity flag per point. Points entirely outside
    /// the map return zeros and `false`; partially outside taps read zero.
    /// A bare length-2 `uv` is accepted as a single point.
    pub fn bilinear_sample(&mut self, map: Var, uv: Var) -> Result<(Var, Vec<bool>)> {
        let (h, w, c) = dims3(self.value(map), "bilinear_sample")?;
        let uvt = self.value(uv);
        if !uvt.numel().is_multiple_of(2) || !(uvt.shape() == [2] || uvt.shape().len() == 2 && uvt.shape()[1] == 2) {
            return Err(shape_err(
                "bilinear_sample",
                format!("uv must be N×2, got {:?}", uvt.shape()),
            ));
        }
        let n = uvt.numel() / 2;
        let single = uvt.shape() == [2];
        let m = self.value(map).data();
        let mut out = vec![0.0; n * c];
        let mut valid = vec![false; n];
        for i in 0..n {
            let (u, v) = (uvt.data()[2 * i], uvt.data()[2 * i + 1]);
            if let Some(tap) = bilinear_taps(h, w, c, u, v) {
                valid[i] = true;
                let dst = &mut out[i * c..(i + 1) * c];
                for (off, wt) in tap.offsets.iter().zip(tap.weights) {
                    if let Some(off) = off {
                        for (o, s) in dst.iter_mut().zip(&m[*off..*off + c]) {
                            *o += wt * s;
                        }
                    }
                }
            }
        }
        let shape = if single { vec![c] } else { vec![n, c] };
        let tracked = self.t(map) || self.t(uv);
        let var = self.push(Tensor::new(shape, out)?, Op::Bilinear { map, uv }, tracked);
        Ok((var, valid))
    }

    /// Projects `N×3` world points through a pinhole camera, giving `N×3`
    /// rows of (u, v, camera depth). Points with depth below
    /// [`MIN_PROJECTION_DEPTH`] get u = v = [`BEHIND_CAMERA_UV`] and no
    /// gradient through u, v.
    pub fn pinhole_project(&mut self, points: Var, cam: &PinholeParams) -> Result<Var> {
        let (n, k) = dims2(self.value(points), "pinhole_project")?;
        if k != 3 {
            return Err(shape_err("pinhole_project", format!("points must be N×3, got N×{k}")));
        }
        let p = self.value(points).data();
        let mut out = Vec::with_capacity(n * 3);
        for i in 0..n {
            let c = camera_coords(cam, &p[3 * i..3 * i + 3]);
            if c[2] < MIN_PROJECTION_DEPTH {
                out.extend_from_slice(&[BEHIND_CAMERA_UV, BEHIND_CAMERA_UV, c[2]]);
            } else {
                out.push(cam.fx * c[0] / c[2] + cam.cx);
                out.push(cam.fy * c[1] / c[2] + cam.cy);
                out.push(c[2]);
            }
        }
        let tracked = self.t(points);
        Ok(self.push(
            Tensor::new([n, 3], out)?,
            Op::Pinhole { points, cam: *cam },
            tracked,
        ))
    }

    /// Per-row weighted sum of `K` groups: `w` is `N×K`, `s` is `N×(K·F)` and
    /// the result is `N×F` with `out[n] = Σ_k w[n,k] · s[n, kF..(k+1)F]`.
    pub fn group_weighted_sum(&mut self, w: Var, s: Var) -> Result<Var> {
        let (n, k) = dims2(self.value(w), "group_weighted_sum")?;
        let (n2, kf) = dims2(self.value(s), "group_weighted_sum")?;
        if n != n2 || kf % k != 0 {
            return Err(shape_err(
                "group_weighted_sum",
                format!("weights [{n}×{k}] vs samples [{n2}×{kf}]"),
            ));
        }
        let f = kf / k;
        let (wv, sv) = (self.value(w).data(), self.value(s).data());
        let mut out = vec![0.0; n * f];
        for i in 0..n {
            let dst = &mut out[i * f..(i + 1) * f];
            for g in 0..k {
                let wt = wv[i * k + g];
                if wt == 0.0 {
                    continue;
                }
                let src = &sv[i * kf + g * f..i * kf + (g + 1) * f];
                dst.iter_mut().zip(src).for_each(|(o, x)| *o += wt * x);
            }
        }
        let tracked = self.t(w) || self.t(s);
        Ok(self.push(Tensor::new([n, f], out)?, Op::GroupWeightedSum { w, s }, tracked))
    }

    /// Summed sigmoid focal loss over all logits against binary targets.
    pub fn sigmoid_focal_loss(&mut self, logits: Var, targets: &[f64], alpha: f64, gamma: f64) -> Result<Var> {
        let v = self.value(logits);
        if v.numel() != targets.len() {
            return Err(shape_err(
                "sigmoid_focal_loss",
                format!("{} logits vs {} targets", v.numel(), targets.len()),
            ));
        }
        let total = v
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &t)| focal_term(x, t, alpha, gamma).0)
            .sum();
        let tracked = self.t(logits);
        Ok(self.push(
            Tensor::scalar(total),
            Op::SigmoidFocal {
                logits,
                targets: targets.to_vec(),
                alpha,
                gamma,
            },
            tracked,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.tracked {
                self.backprop_node(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        // Gradient buffer for an input, allocated on first use. Untracked
        // inputs are skipped.
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                if nodes[v.0].tracked {
                    Some(grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]))
                } else {
                    None
                }
            }};
        }
        let val = |v: Var| nodes[v.0].value.data();
        let out = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                let n = nodes[b.0].value.shape()[1];
                if let Some(ga) = acc!(*a) {
                    // dA = G · Bᵀ
                    matmul_into(m, n, k, g, (n as isize, 1), val(*b), (1, n as isize), ga, 1.0);
                }
                if let Some(gb) = acc!(*b) {
                    // dB = Aᵀ · G
                    matmul_into(k, m, n, val(*a), (1, k as isize), g, (n as isize, 1), gb, 1.0);
                }
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                let n = nodes[b.0].value.shape()[0];
                if let Some(ga) = acc!(*a) {
                    // dA = G · B
                    matmul_into(m, n, k, g, (n as isize, 1), val(*b), (k as isize, 1), ga, 1.0);
                }
                if let Some(gb) = acc!(*b) {
                    // dB = Gᵀ · A
                    matmul_into(n, m, k, g, (1, n as isize), val(*a), (k as isize, 1), gb, 1.0);
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (nodes[x.0].value.shape()[0], nodes[x.0].value.shape()[1]);
                if let Some(gx) = acc!(*x) {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = acc!(*a) {
                    ga.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
                if let Some(gb) = acc!(*b) {
                    gb.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = acc!(*a) {
                    ga.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
                if let Some(gb) = acc!(*b) {
                    gb.iter_mut().zip(g).for_each(|(d, s)| *d -= s);
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = acc!(*a) {
                    for ((d, s), y) in ga.iter_mut().zip(g).zip(val(*b)) {
                        *d += s * y;
                    }
                }
                if let Some(gb) = acc!(*b) {
                    for ((d, s), x) in gb.iter_mut().zip(g).zip(val(*a)) {
                        *d += s * x;
                    }
                }
            }
            Op::AddRow(a, row) => {
                let w = nodes[row.0].value.numel();
                if let Some(ga) = acc!(*a) {
                    ga.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
                if let Some(gr) = acc!(*row) {
                    for chunk in g.chunks(w) {
                        gr.iter_mut().zip(chunk).for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::MulRow(a, row) => {
                let w = nodes[row.0].value.numel();
                let r = val(*row);
                if let Some(ga) = acc!(*a) {
                    for (dchunk, gchunk) in ga.chunks_mut(w).zip(g.chunks(w)) {
                        for ((d, s), y) in dchunk.iter_mut().zip(gchunk).zip(r) {
                            *d += s * y;
                        }
                    }
                }
                if let Some(gr) = acc!(*row) {
                    for (gchunk, xchunk) in g.chunks(w).zip(val(*a).chunks(w)) {
                        for ((d, s), x) in gr.iter_mut().zip(gchunk).zip(xchunk) {
                            *d += s * x;
                        }
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(gx) = acc!(*x) {
                    gx.iter_mut().zip(g).for_each(|(d, v)| *d += v * s);
                }
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                if let Some(gx) = acc!(*x) {
                    gx.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
            }
            Op::Relu(x) => {
                if let Some(gx) = acc!(*x) {
                    for ((d, v), a) in gx.iter_mut().zip(g).zip(val(*x)) {
                        if *a > 0.0 {
                            *d += v;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = acc!(*x) {
                    for ((d, v), y) in gx.iter_mut().zip(g).zip(out) {
                        *d += v * y * (1.0 - y);
                    }
                }
            }
            Op::Softplus(x) => {
                if let Some(gx) = acc!(*x) {
                    for ((d, v), a) in gx.iter_mut().zip(g).zip(val(*x)) {
                        *d += v * sigmoid(*a);
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(gx) = acc!(*x) {
                    for ((d, v), y) in gx.iter_mut().zip(g).zip(out) {
                        *d += v * (1.0 - y * y);
                    }
                }
            }
            Op::Exp(x) => {
                if let Some(gx) = acc!(*x) {
                    for ((d, v), y) in gx.iter_mut().zip(g).zip(out) {
                        *d += v * y;
                    }
                }
            }
            Op::Abs(x) => {
                if let Some(gx) = acc!(*x) {
                    for ((d, v), a) in gx.iter_mut().zip(g).zip(val(*x)) {
                        *d += v * if *a > 0.0 {
                            1.0
                        } else if *a < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                    }
                }
            }
            Op::Softmax { x, outer, len, inner } => {
                if let Some(gx) = acc!(*x) {
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let idx = |k: usize| (o * len + k) * inner + i;
                            let dot: f64 = (0..*len).map(|k| g[idx(k)] * out[idx(k)]).sum();
                            for k in 0..*len {
                                gx[idx(k)] += out[idx(k)] * (g[idx(k)] - dot);
                            }
                        }
                    }
                }
            }
            Op::MaskedSoftmaxRows(x) => {
                let c = node.value.shape()[1];
                if let Some(gx) = acc!(*x) {
                    for ((drow, grow), yrow) in gx.chunks_mut(c).zip(g.chunks(c)).zip(out.chunks(c)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((d, gv), y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += y * (gv - dot);
                        }
                    }
                }
            }
            Op::LayerNormRows { x, inv_std } => {
                let c = node.value.shape()[1];
                if let Some(gx) = acc!(*x) {
                    for (i, s) in inv_std.iter().enumerate() {
                        let gr = &g[i * c..(i + 1) * c];
                        let yr = &out[i * c..(i + 1) * c];
                        let mg = gr.iter().sum::<f64>() / c as f64;
                        let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for j in 0..c {
                            gx[i * c + j] += s * (gr[j] - mg - yr[j] * mgy);
                        }
                    }
                }
            }
            Op::Concat { parts, outer, inner } => {
                let axis_total: usize = g.len() / (outer * inner);
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p.0].value.numel() / (outer * inner);
                    let block = len * inner;
                    if let Some(gp) = acc!(p) {
                        for o in 0..*outer {
                            let src = &g[o * axis_total * inner + offset * inner..][..block];
                            gp[o * block..(o + 1) * block]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, s)| *d += s);
                        }
                    }
                    offset += len;
                }
            }
            Op::SliceCols { x, start } => {
                let c = nodes[x.0].value.shape()[1];
                let len = node.value.shape()[1];
                if let Some(gx) = acc!(*x) {
                    for (i, gr) in g.chunks(len).enumerate() {
                        gx[i * c + start..i * c + start + len]
                            .iter_mut()
                            .zip(gr)
                            .for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = acc!(*x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = acc!(*x) {
                    let n = gx.len() as f64;
                    gx.iter_mut().for_each(|d| *d += g[0] / n);
                }
            }
            Op::GatherRows { x, idx } => {
                let w = nodes[x.0].value.row_len();
                if let Some(gx) = acc!(*x) {
                    for (k, &i) in idx.iter().enumerate() {
                        gx[i * w..(i + 1) * w]
                            .iter_mut()
                            .zip(&g[k * w..(k + 1) * w])
                            .for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::RegionPool { x, region, weights } => {
                let shape = nodes[x.0].value.shape();
                let (w, c) = (shape[1], shape[2]);
                let n = region.area() as f64;
                let rw = region.x1 - region.x0;
                if let Some(gx) = acc!(*x) {
                    for y in region.y0..region.y1 {
                        for xx in region.x0..region.x1 {
                            let wgt = weights
                                .as_ref()
                                .map_or(1.0, |ws| ws[(y - region.y0) * rw + (xx - region.x0)]);
                            let base = (y * w + xx) * c;
                            for ch in 0..c {
                                gx[base + ch] += g[ch] * wgt / n;
                            }
                        }
                    }
                }
            }
            Op::AvgPool { x, k } => {
                let shape = nodes[x.0].value.shape();
                let (h, w, c) = (shape[0], shape[1], shape[2]);
                let ow = w / k;
                let norm = 1.0 / (k * k) as f64;
                if let Some(gx) = acc!(*x) {
                    for y in 0..h {
                        for xx in 0..w {
                            let src = ((y / k) * ow + xx / k) * c;
                            let dst = (y * w + xx) * c;
                            for ch in 0..c {
                                gx[dst + ch] += g[src + ch] * norm;
                            }
                        }
                    }
                }
            }
            Op::Patchify { x, k } => {
                let shape = nodes[x.0].value.shape();
                let (h, w, c) = (shape[0], shape[1], shape[2]);
                let (oh, ow) = (h / k, w / k);
                if let Some(gx) = acc!(*x) {
                    let mut pos = 0;
                    for py in 0..oh {
                        for px in 0..ow {
                            for dy in 0..*k {
                                let s = ((py * k + dy) * w + px * k) * c;
                                gx[s..s + k * c]
                                    .iter_mut()
                                    .zip(&g[pos..pos + k * c])
                                    .for_each(|(d, v)| *d += v);
                                pos += k * c;
                            }
                        }
                    }
                }
            }
            Op::Bilinear { map, uv } => {
                let shape = nodes[map.0].value.shape();
                let (h, w, c) = (shape[0], shape[1], shape[2]);
                let uvs = val(*uv);
                let n = uvs.len() / 2;
                let m = val(*map);
                let map_tracked = nodes[map.0].tracked;
                let uv_tracked = nodes[uv.0].tracked;
                if map_tracked {
                    let gm = grads[map.0].get_or_insert_with(|| vec![0.0; m.len()]);
                    for i in 0..n {
                        if let Some(tap) = bilinear_taps(h, w, c, uvs[2 * i], uvs[2 * i + 1]) {
                            let gi = &g[i * c..(i + 1) * c];
                            for (off, wt) in tap.offsets.iter().zip(tap.weights) {
                                if let Some(off) = off {
                                    gm[*off..*off + c]
                                        .iter_mut()
                                        .zip(gi)
                                        .for_each(|(d, s)| *d += wt * s);
                                }
                            }
                        }
                    }
                }
                if uv_tracked {
                    let gu = grads[uv.0].get_or_insert_with(|| vec![0.0; uvs.len()]);
                    for i in 0..n {
                        if let Some(tap) = bilinear_taps(h, w, c, uvs[2 * i], uvs[2 * i + 1]) {
                            let gi = &g[i * c..(i + 1) * c];
                            for t in 0..4 {
                                if let Some(off) = tap.offsets[t] {
                                    let dot: f64 =
                                        gi.iter().zip(&m[off..off + c]).map(|(a, b)| a * b).sum();
                                    gu[2 * i] += tap.du[t] * dot;
                                    gu[2 * i + 1] += tap.dv[t] * dot;
                                }
                            }
                        }
                    }
                }
            }
            Op::Pinhole { points, cam } => {
                if let Some(gp) = acc!(*points) {
                    let p = val(*points);
                    for i in 0..p.len() / 3 {
                        let c = camera_coords(cam, &p[3 * i..3 * i + 3]);
                        let gi = &g[3 * i..3 * i + 3];
                        let mut dc = [0.0, 0.0, gi[2]];
                        if c[2] >= MIN_PROJECTION_DEPTH {
                            let z = c[2];
                            dc[0] += gi[0] * cam.fx / z;
                            dc[1] += gi[1] * cam.fy / z;
                            dc[2] -= gi[0] * cam.fx * c[0] / (z * z) + gi[1] * cam.fy * c[1] / (z * z);
                        }
                        // dp = Rᵀ dc
                        for (a, dst) in gp[3 * i..3 * i + 3].iter_mut().enumerate() {
                            *dst += (0..3).map(|r| cam.rotation[r][a] * dc[r]).sum::<f64>();
                        }
                    }
                }
            }
            Op::GroupWeightedSum { w, s } => {
                let k = nodes[w.0].value.shape()[1];
                let kf = nodes[s.0].value.shape()[1];
                let f = kf / k;
                let n = nodes[w.0].value.shape()[0];
                let (wv, sv) = (val(*w), val(*s));
                if let Some(gw) = acc!(*w) {
                    for i in 0..n {
                        let gi = &g[i * f..(i + 1) * f];
                        for grp in 0..k {
                            let src = &sv[i * kf + grp * f..i * kf + (grp + 1) * f];
                            gw[i * k + grp] += gi.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
                if let Some(gs) = acc!(*s) {
                    for i in 0..n {
                        let gi = &g[i * f..(i + 1) * f];
                        for grp in 0..k {
                            let wt = wv[i * k + grp];
                            gs[i * kf + grp * f..i * kf + (grp + 1) * f]
                                .iter_mut()
                                .zip(gi)
                                .for_each(|(d, v)| *d += wt * v);
                        }
                    }
                }
            }
            Op::SigmoidFocal {
                logits,
                targets,
                alpha,
                gamma,
            } => {
                if let Some(gl) = acc!(*logits) {
                    for ((d, x), t) in gl.iter_mut().zip(val(*logits)).zip(targets) {
                        *d += g[0] * focal_term(*x, *t, *alpha, *gamma).1;
                    }
                }
            }
        }
    }
}

fn camera_coords(cam: &PinholeParams, p: &[f64]) -> [f64; 3] {
    let r = &cam.rotation;
    let mut c = [0.0; 3];
    for (i, ci) in c.iter_mut().enumerate() {
        *ci = r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + cam.translation[i];
    }
    c
}

/// Stable logistic function.
pub fn sigmoid_scalar(x: f64) -> f64 {
    sigmoid(x)
}

/// Stable `ln(1 + eˣ)`.
pub fn softplus_scalar(x: f64) -> f64 {
    softplus(x)
}
