#![allow(dead_code)]

use mango_core::{Example, Mlp, ModelConfig, ParameterStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| scale * normal(rng)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn random_examples(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: usize) -> Vec<Example> {
    (0..n)
        .map(|_| Example {
            features: (0..dim).map(|_| normal(rng)).collect(),
            label: rng.random_range(0..classes),
            task_id: 0,
        })
        .collect()
}

/// A small model whose parameters have drifted away from the anchor.
pub fn drifted_model(rng: &mut ChaCha8Rng, hidden: Vec<usize>, drift: f64) -> (Mlp, ParameterStore) {
    let cfg = ModelConfig {
        input_dim: 3,
        hidden_dims: hidden,
        num_classes: 3,
        seed: rng.random(),
    };
    let (mlp, mut store) = Mlp::init(&cfg).unwrap();
    for p in store.params.iter_mut() {
        for v in p.data_mut() {
            *v += drift * normal(rng);
        }
    }
    (mlp, store)
}

/// `|a − b| / max(|a|, |b|)`, zero when both are exactly zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let d = a.abs().max(b.abs());
    if d == 0.0 {
        0.0
    } else {
        (a - b).abs() / d
    }
}
