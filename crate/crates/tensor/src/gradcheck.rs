//! Central finite differences over tape forward passes. Used by tests as an
//! oracle that never touches the backward code path.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Denominator floor for relative errors of near-zero gradients.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, REL_ERR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Numeric gradient of the scalar produced by `f` with respect to every
/// input tensor, by central differences with step `h`.
pub fn numeric_gradients<F>(f: F, inputs: &[Tensor], h: f64) -> Vec<Vec<f64>>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |xs: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).item()
    };
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = vec![0.0; inputs[i].numel()];
        for (j, gj) in g.iter_mut().enumerate() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(&work);
            work[i].data_mut()[j] = orig - h;
            let minus = eval(&work);
            work[i].data_mut()[j] = orig;
            *gj = (plus - minus) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// Analytic gradient of the scalar produced by `f` via [`Tape::backward`].
pub fn analytic_gradients<F>(f: F, inputs: &[Tensor]) -> Vec<Vec<f64>>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out).expect("scalar output");
    vars.iter()
        .zip(inputs)
        .map(|(v, x)| grads.wrt(*v).map_or_else(|| vec![0.0; x.numel()], <[f64]>::to_vec))
        .collect()
}

/// Largest elementwise relative error between analytic and numeric gradients.
pub fn max_relative_error<F>(f: F, inputs: &[Tensor], h: f64) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var + Copy,
{
    let a = analytic_gradients(f, inputs);
    let n = numeric_gradients(f, inputs, h);
    a.iter()
        .flatten()
        .zip(n.iter().flatten())
        .map(|(x, y)| relative_error(*x, *y))
        .fold(0.0, f64::max)
}
