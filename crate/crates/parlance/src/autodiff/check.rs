//! Gradient verification by central finite differences.
//!
//! These helpers know nothing about the tape: they treat the function under
//! test as a black box `&[Tensor] -> f64` and probe it entry by entry, which
//! keeps them independent of the reverse-mode path they are used to check.

use super::tensor::Tensor;

/// Central-difference gradient of `f` at `inputs`, one tensor per input.
pub fn central_diff_grad(f: &dyn Fn(&[Tensor]) -> f64, inputs: &[Tensor], step: f64) -> Vec<Tensor> {
    let mut grads = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let mut g = Tensor::zeros(input.shape().to_vec());
        for e in 0..input.numel() {
            let mut plus: Vec<Tensor> = inputs.to_vec();
            plus[i].data_mut()[e] += step;
            let mut minus: Vec<Tensor> = inputs.to_vec();
            minus[i].data_mut()[e] -= step;
            g.data_mut()[e] = (f(&plus) - f(&minus)) / (2.0 * step);
        }
        grads.push(g);
    }
    grads
}

/// Largest relative error between two gradient sets.
///
/// Per entry: `|a - n| / max(|a|, |n|, floor)`; the floor keeps noise in
/// near-zero gradients from dominating the comparison.
pub fn max_rel_err(analytic: &[Tensor], numeric: &[Tensor], floor: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.shape(), n.shape(), "gradient shape mismatch");
        for (&av, &nv) in a.data().iter().zip(n.data()) {
            let denom = av.abs().max(nv.abs()).max(floor);
            worst = worst.max((av - nv).abs() / denom);
        }
    }
    worst
}
