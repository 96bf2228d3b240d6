//! Random initializers.

use ndarray::IxDyn;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::Tensor;

pub fn normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    let dist = Normal::new(0.0, std).expect("normal: invalid std");
    Tensor::from_shape_simple_fn(IxDyn(shape), || dist.sample(rng))
}

pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    if bound == 0.0 {
        return Tensor::zeros(IxDyn(shape));
    }
    let dist = Uniform::new(-bound, bound).expect("uniform: invalid bound");
    Tensor::from_shape_simple_fn(IxDyn(shape), || dist.sample(rng))
}

/// He-normal initialization for layers followed by ReLU.
pub fn kaiming_normal<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    normal(shape, (2.0 / fan_in.max(1) as f64).sqrt(), rng)
}

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, the usual linear/bias default.
pub fn fan_in_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    uniform(shape, 1.0 / (fan_in.max(1) as f64).sqrt(), rng)
}
