use prior3d_tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use crate::DetectorError;

type Result<T> = std::result::Result<T, DetectorError>;

/// Every parameter of a store copied onto a tape once, indexed by id.
pub struct ParamVars(Vec<Var>);

impl ParamVars {
    pub fn load(tape: &mut Tape, store: &ParamStore) -> Self {
        Self(store.ids().map(|id| tape.param(store, id)).collect())
    }

    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.index()]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    /// Weights N(0, gain²/fan_in), zero bias.
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, gain: f64, bias: bool, rng: &mut ChaCha8Rng) -> Self {
        let w = store.insert_normal(format!("{name}.w"), &[fan_in, fan_out], gain / (fan_in as f64).sqrt(), rng);
        let b = bias.then(|| store.insert(format!("{name}.b"), Tensor::zeros([fan_out])));
        Self { w, b }
    }

    pub fn forward(&self, t: &mut Tape, pv: &ParamVars, x: Var) -> Result<Var> {
        let y = t.matmul(x, pv.get(self.w))?;
        Ok(match self.b {
            Some(b) => t.add_row(y, pv.get(b))?,
            None => y,
        })
    }
}

pub const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

/// Two linear layers with a ReLU between.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, dims: [usize; 3], rng: &mut ChaCha8Rng) -> Self {
        Self {
            l1: Linear::new(store, &format!("{name}.0"), dims[0], dims[1], RELU_GAIN, true, rng),
            l2: Linear::new(store, &format!("{name}.1"), dims[1], dims[2], 1.0, true, rng),
        }
    }

    pub fn forward(&self, t: &mut Tape, pv: &ParamVars, x: Var) -> Result<Var> {
        let h = self.l1.forward(t, pv, x)?;
        let h = t.relu(h);
        self.l2.forward(t, pv, h)
    }
}

/// Row layer norm with learned gain and bias.
#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gamma: store.insert(format!("{name}.gamma"), Tensor::full([width], 1.0)),
            beta: store.insert(format!("{name}.beta"), Tensor::zeros([width])),
        }
    }

    pub fn forward(&self, t: &mut Tape, pv: &ParamVars, x: Var) -> Result<Var> {
        let n = t.layer_norm_rows(x, Self::EPS)?;
        let n = t.mul_row(n, pv.get(self.gamma))?;
        Ok(t.add_row(n, pv.get(self.beta))?)
    }
}
