//! Random model generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use sparsefold::model::{LayerSpec, Shape};
use sparsefold::quant::{IntTensor, ThresholdSet};
use sparsefold::Model;

pub use rand::SeedableRng;
pub type Rng8 = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng8 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Weights drawn from a small grid so duplicate magnitudes are common.
pub fn grid_weights(rng: &mut Rng8, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-8i32..=8) as f64 * 0.125).collect()
}

pub fn uniform_weights(rng: &mut Rng8, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Strictly increasing thresholds per channel, spread around zero.
pub fn random_thresholds(rng: &mut Rng8, act_bits: u32, channels: usize) -> ThresholdSet {
    let count = (1usize << act_bits) - 1;
    let rows = (0..channels)
        .map(|_| {
            let mut t = rng.gen_range(-20i64..5);
            (0..count)
                .map(|_| {
                    t += rng.gen_range(1i64..6);
                    t
                })
                .collect()
        })
        .collect();
    ThresholdSet::new(act_bits, rows).expect("increasing by construction")
}

/// Small random network mixing conv, pool, threshold and FC layers.
pub fn random_inference_net(rng: &mut Rng8) -> Model {
    let wb = rng.gen_range(2u32..=6);
    let ab = rng.gen_range(1u32..=3);
    let mut specs = Vec::new();
    let mut channels = rng.gen_range(1usize..=3);
    let mut side = rng.gen_range(4usize..=8);
    let input = Shape::volume(channels, side, side);
    let convs = rng.gen_range(0..=2);
    for i in 0..convs {
        let k = rng.gen_range(1usize..=3).min(side);
        let stride = if rng.gen_bool(0.3) { 2 } else { 1 };
        let oc = rng.gen_range(1usize..=4);
        let mut spec = LayerSpec::conv2d(&format!("conv{i}"), oc, k, grid_weights(rng, oc * channels * k * k))
            .with_bits(wb, ab)
            .with_stride(stride);
        if rng.gen_bool(0.5) {
            spec = spec.with_bias(grid_weights(rng, oc));
        }
        specs.push(spec);
        side = (side - k) / stride + 1;
        channels = oc;
        specs.push(LayerSpec::threshold(
            &format!("act{i}"),
            Some(random_thresholds(rng, ab, channels)),
        ));
        if side >= 2 && rng.gen_bool(0.5) {
            specs.push(LayerSpec::max_pool(&format!("pool{i}"), 2, 2).with_bits(wb, ab));
            side /= 2;
        }
    }
    let mut features = channels * side * side;
    let fcs = rng.gen_range(1..=2);
    for i in 0..fcs {
        let out = rng.gen_range(1usize..=6);
        let mut spec =
            LayerSpec::fully_connected(&format!("fc{i}"), out, grid_weights(rng, out * features)).with_bits(wb, ab);
        if rng.gen_bool(0.5) {
            spec = spec.with_bias(grid_weights(rng, out));
        }
        specs.push(spec);
        features = out;
        if i + 1 < fcs {
            specs.push(LayerSpec::threshold(
                &format!("fact{i}"),
                Some(random_thresholds(rng, ab, out)),
            ));
        }
    }
    Model::from_specs("random", input, specs, BTreeMap::new()).expect("generator builds valid models")
}

pub fn random_input(rng: &mut Rng8, model: &Model) -> IntTensor {
    let bits = model.layers()[0].act_bits;
    let shape = model.input_shape();
    let data = (0..shape.elements())
        .map(|_| rng.gen_range(0..(1i64 << bits)))
        .collect();
    IntTensor::new(shape, data).expect("sized to shape")
}

/// Linear FC chain with at most `max_layers` weighted layers and fans ≤ 16.
pub fn random_fc_chain(rng: &mut Rng8, max_layers: usize) -> Model {
    const DIMS: [usize; 8] = [2, 3, 4, 6, 8, 9, 12, 16];
    let layers = rng.gen_range(1..=max_layers);
    let mut features = *DIMS.choose(rng).unwrap();
    let input = Shape::Vector(features);
    let mut specs = Vec::new();
    for i in 0..layers {
        let out = *DIMS.choose(rng).unwrap();
        let wb = rng.gen_range(2u32..=4);
        specs.push(
            LayerSpec::fully_connected(&format!("fc{i}"), out, uniform_weights(rng, out * features)).with_bits(wb, wb),
        );
        features = out;
    }
    Model::from_specs("chain", input, specs, BTreeMap::new()).expect("valid chain")
}
