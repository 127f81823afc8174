//! Built-in reference networks with synthetic, seeded weights.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::model::{LayerSpec, ModelGraph, Shape};
use crate::quant::{calibrate_scale, IntTensor, QuantPlan, Sample, ThresholdSet};
use crate::scalar::Scalar;

pub const LENET5_SEED: u64 = 5;

fn gaussian<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<T> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid sigma");
    (0..n).map(|_| T::lit(normal.sample(rng))).collect()
}

/// Evenly spaced positive thresholds, shared by all channels.
fn ramp(act_bits: u32, channels: usize, step: i64) -> ThresholdSet {
    let levels = (1i64 << act_bits) - 1;
    let row: Vec<i64> = (1..=levels).map(|k| k * step).collect();
    ThresholdSet::new(act_bits, vec![row; channels]).expect("ramp is strictly increasing")
}

fn weighted<T: Scalar>(spec: LayerSpec<T>) -> LayerSpec<T> {
    let w = spec.weights.as_deref().unwrap_or(&[]);
    let scale = calibrate_scale(w, spec.weight_bits);
    spec.with_scale(scale)
}

/// Classic LeNet-5 on a 1×32×32 input with 4-bit weights and activations:
/// conv(6,5×5) → pool → conv(16,5×5) → pool → fc120 → fc84 → fc10, with a
/// multi-threshold activation after every hidden weighted layer.
///
/// Weights are He-initialised from a fixed seed, not trained.
pub fn lenet5<T: Scalar>(seed: u64) -> ModelGraph<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (wb, ab) = (4, 4);
    let layers = vec![
        weighted(LayerSpec::conv2d("conv1", 6, 5, gaussian(&mut rng, 6 * 25, 25)).with_bits(wb, ab)),
        LayerSpec::threshold("act1", Some(ramp(ab, 6, 6))),
        LayerSpec::max_pool("pool1", 2, 2).with_bits(wb, ab),
        weighted(LayerSpec::conv2d("conv2", 16, 5, gaussian(&mut rng, 16 * 150, 150)).with_bits(wb, ab)),
        LayerSpec::threshold("act2", Some(ramp(ab, 16, 12))),
        LayerSpec::max_pool("pool2", 2, 2).with_bits(wb, ab),
        weighted(LayerSpec::fully_connected("fc1", 120, gaussian(&mut rng, 120 * 400, 400)).with_bits(wb, ab)),
        LayerSpec::threshold("act3", Some(ramp(ab, 120, 20))),
        weighted(LayerSpec::fully_connected("fc2", 84, gaussian(&mut rng, 84 * 120, 120)).with_bits(wb, ab)),
        LayerSpec::threshold("act4", Some(ramp(ab, 84, 11))),
        weighted(LayerSpec::fully_connected("fc3", 10, gaussian(&mut rng, 10 * 84, 84)).with_bits(wb, ab)),
    ];
    let mut meta = BTreeMap::new();
    meta.insert(
        "weights".to_string(),
        serde_json::json!(format!("synthetic He-normal, ChaCha8 seed {seed}; not trained")),
    );
    meta.insert(
        "input".to_string(),
        serde_json::json!("32x32 single channel, 4-bit codes (28x28 digits padded to 32x32)"),
    );
    ModelGraph::from_specs("lenet5", Shape::volume(1, 32, 32), layers, meta).expect("lenet5 is valid")
}

/// Two fully connected layers, 8→8→4.
pub fn toy2<T: Scalar>(seed: u64) -> ModelGraph<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = vec![
        weighted(LayerSpec::fully_connected("fc1", 8, gaussian(&mut rng, 64, 8))),
        weighted(LayerSpec::fully_connected("fc2", 4, gaussian(&mut rng, 32, 8))),
    ];
    ModelGraph::from_specs("toy2", Shape::Vector(8), layers, BTreeMap::new()).expect("toy2 is valid")
}

/// Random input codes labelled by the dense model's own prediction.
pub fn self_labelled_testset<T: Scalar>(model: &ModelGraph<T>, n: usize, seed: u64) -> Vec<Sample> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan = QuantPlan::from_model(model);
    let bits = model.layers()[0].act_bits;
    let shape = model.input_shape();
    (0..n)
        .map(|_| {
            let data = (0..shape.elements())
                .map(|_| rng.gen_range(0..(1i64 << bits)))
                .collect();
            let input = IntTensor::new(shape, data).expect("sized to shape");
            let out = crate::quant::run_inference(model, None, &plan, &input).expect("valid input");
            let label = crate::quant::argmax(&out).unwrap_or(0);
            Sample { input, label }
        })
        .collect()
}
