//! Finite-difference validation of tape gradients.
//!
//! The checker rebuilds the graph from scratch for every perturbed input, so
//! it is O(elements x forward cost) and meant for small test shapes only.

use super::{Tape, Tensor};
use ndarray::ArrayD;

/// Central-difference step. With `f64` and unit-scale values this keeps both
/// truncation (~eps^2) and rounding (~ulp/eps) error well below the tolerance.
pub const FD_EPS: f64 = 1e-5;

/// Pass threshold for [`max_grad_rel_err`] used across the test suite.
pub const GRAD_TOL: f64 = 1e-4;

/// Largest relative error between analytic and central-difference gradients
/// over every element of every input.
///
/// `build` must construct the same scalar loss from the given leaves each
/// time it is called; it runs once per perturbation. The relative error
/// denominator is floored at 1e-6 so exactly-zero gradients are compared
/// against finite-difference noise rather than dividing by zero.
pub fn max_grad_rel_err<F>(inputs: &[ArrayD<f64>], eps: f64, build: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Tensor<'t>]) -> Tensor<'t>,
{
    let analytic: Vec<ArrayD<f64>> = {
        let tape = Tape::new();
        let vars: Vec<Tensor<'_>> = inputs.iter().map(|a| tape.var(a.clone())).collect();
        let loss = build(&tape, &vars);
        let grads = tape.backward(loss);
        vars.iter().map(|v| grads.wrt_or_zero(*v)).collect()
    };
    let eval = |perturbed: &[ArrayD<f64>]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Tensor<'_>> = perturbed.iter().map(|a| tape.var(a.clone())).collect();
        build(&tape, &vars).item()
    };
    let mut work: Vec<ArrayD<f64>> = inputs.to_vec();
    let mut worst = 0.0f64;
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let orig = work[i].as_slice().unwrap()[j];
            work[i].as_slice_mut().unwrap()[j] = orig + eps;
            let fp = eval(&work);
            work[i].as_slice_mut().unwrap()[j] = orig - eps;
            let fm = eval(&work);
            work[i].as_slice_mut().unwrap()[j] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[i].as_slice().unwrap()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if err > worst {
                worst = err;
            }
        }
    }
    worst
}
