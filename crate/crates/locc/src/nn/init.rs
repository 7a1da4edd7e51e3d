//! Weight initialization: He-uniform for ReLU layers, Xavier-uniform for
//! final linear layers.

use rand::Rng;

use super::Tensor;
use crate::rng::Stream;

pub fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut Stream) -> Tensor {
    let limit = (6.0 / fan_in.max(1) as f64).sqrt();
    uniform(shape, limit, rng)
}

pub fn xavier_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Stream) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    uniform(shape, limit, rng)
}

fn uniform(shape: &[usize], limit: f64, rng: &mut Stream) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::from_vec(shape, data)
}
