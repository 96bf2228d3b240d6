//! Finite-difference gradient checking.
//!
//! These helpers evaluate a scalar function at perturbed inputs and never
//! touch the recorded backward closures, so they serve as an independent
//! reference for the analytic gradients.

use crate::Tensor;

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn numeric_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let mut probe = x.to_owned();
    let mut grad = Tensor::zeros(x.raw_dim());
    let n = x.len();
    for i in 0..n {
        let orig = *probe.iter().nth(i).expect("index");
        set_flat(&mut probe, i, orig + h);
        let up = f(&probe);
        set_flat(&mut probe, i, orig - h);
        let down = f(&probe);
        set_flat(&mut probe, i, orig);
        set_flat(&mut grad, i, (up - down) / (2.0 * h));
    }
    grad
}

fn set_flat(t: &mut Tensor, i: usize, v: f64) {
    *t.iter_mut().nth(i).expect("index") = v;
}

/// `max |a - b| / max(|a|, |b|, floor)` over all elements.
pub fn max_rel_err(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape(), "max_rel_err: shape mismatch");
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
