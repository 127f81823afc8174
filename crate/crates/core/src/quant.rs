//! Uniform symmetric quantization and bit-exact integer inference.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{LayerKind, LayerNode, ModelGraph, Shape};
use crate::prune::SparsityProfile;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rounding {
    #[default]
    RoundHalfToEven,
}

/// Per-layer quantization parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec<T> {
    pub weight_bits: u32,
    pub act_bits: u32,
    pub weight_scale: T,
    pub rounding: Rounding,
}

impl<T: Scalar> QuantSpec<T> {
    pub fn new(weight_bits: u32, act_bits: u32, weight_scale: T) -> Self {
        QuantSpec {
            weight_bits,
            act_bits,
            weight_scale,
            rounding: Rounding::RoundHalfToEven,
        }
    }

    /// Inclusive signed range of quantized weights.
    pub fn weight_range(&self) -> (i64, i64) {
        let half = 1i64 << (self.weight_bits - 1);
        (-half, half - 1)
    }

    pub fn max_code(&self) -> i64 {
        (1i64 << self.act_bits) - 1
    }
}

/// Multi-threshold activation table: one strictly increasing list of
/// `2^act_bits - 1` integer thresholds per output channel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdSet {
    act_bits: u32,
    channels: Vec<Vec<i64>>,
}

impl ThresholdSet {
    pub fn new(act_bits: u32, channels: Vec<Vec<i64>>) -> Result<Self, String> {
        if !(1..=16).contains(&act_bits) {
            return Err(format!("act_bits={act_bits} outside [1, 16]"));
        }
        let expected = (1usize << act_bits) - 1;
        for (c, th) in channels.iter().enumerate() {
            if th.len() != expected {
                return Err(format!(
                    "channel {c} has {} thresholds, expected 2^{act_bits}-1 = {expected}",
                    th.len()
                ));
            }
            if th.windows(2).any(|w| w[0] >= w[1]) {
                return Err(format!("channel {c} thresholds are not strictly increasing"));
            }
        }
        Ok(ThresholdSet { act_bits, channels })
    }

    pub fn act_bits(&self) -> u32 {
        self.act_bits
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, c: usize) -> &[i64] {
        &self.channels[c]
    }

    pub fn channels(&self) -> &[Vec<i64>] {
        &self.channels
    }
}

/// q = clamp(round_half_even(w / scale), signed weight range).
pub fn quantize_weights<T: Scalar>(tensor: &[T], spec: &QuantSpec<T>) -> Vec<i64> {
    let (lo, hi) = spec.weight_range();
    tensor
        .iter()
        .map(|&w| quantize_value(w, spec.weight_scale, lo, hi))
        .collect()
}

fn quantize_value<T: Scalar>(w: T, scale: T, lo: i64, hi: i64) -> i64 {
    let r = (w / scale).round_half_even();
    let lo_t = T::from_i64(lo).expect("small int");
    let hi_t = T::from_i64(hi).expect("small int");
    if r <= lo_t {
        lo
    } else if r >= hi_t {
        hi
    } else {
        r.to_i64().expect("in range")
    }
}

/// Number of thresholds that are <= `acc`.
pub fn apply_thresholds(acc: i64, thresholds: &[i64]) -> i64 {
    thresholds.partition_point(|&t| t <= acc) as i64
}

/// Quantization specs for every weighted layer of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantPlan<T> {
    specs: BTreeMap<String, QuantSpec<T>>,
}

impl<T: Scalar> QuantPlan<T> {
    /// Uses each layer's descriptor scale, or max-abs calibration
    /// (`max|w| / (2^(bits-1) - 1)`) when none is given.
    pub fn from_model(model: &ModelGraph<T>) -> Self {
        let specs = model
            .weighted_layers()
            .map(|l| {
                let scale = l
                    .weight_scale
                    .unwrap_or_else(|| calibrate_scale(model.weights(l), l.weight_bits));
                (l.id.clone(), QuantSpec::new(l.weight_bits, l.act_bits, scale))
            })
            .collect();
        QuantPlan { specs }
    }

    pub fn empty() -> Self {
        QuantPlan { specs: BTreeMap::new() }
    }

    pub fn insert(&mut self, layer: impl Into<String>, spec: QuantSpec<T>) {
        self.specs.insert(layer.into(), spec);
    }

    pub fn get(&self, layer: &str) -> Option<&QuantSpec<T>> {
        self.specs.get(layer)
    }

    pub(crate) fn require(&self, layer: &str) -> Result<&QuantSpec<T>> {
        self.get(layer).ok_or_else(|| Error::MissingQuantSpec {
            layer: layer.to_string(),
        })
    }
}

pub fn calibrate_scale<T: Scalar>(weights: &[T], weight_bits: u32) -> T {
    let max_abs = weights.iter().fold(T::zero(), |m, w| m.max(w.abs()));
    let qmax = ((1i64 << (weight_bits - 1)) - 1).max(1);
    if max_abs > T::zero() {
        max_abs / T::from_i64(qmax).expect("small int")
    } else {
        T::one()
    }
}

/// Integer tensor with a shape.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntTensor {
    pub shape: Shape,
    pub data: Vec<i64>,
}

impl IntTensor {
    pub fn new(shape: Shape, data: Vec<i64>) -> Result<Self> {
        if shape.elements() != data.len() {
            return Err(Error::shape(
                "<input>",
                format!("{} values for shape {shape}", data.len()),
            ));
        }
        Ok(IntTensor { shape, data })
    }
}

/// Quantized weights with the mask applied, stored as per-neuron nonzero lists.
pub(crate) struct PackedLayer {
    /// (fan_in index, weight) per output neuron.
    pub rows: Vec<Vec<(usize, i64)>>,
    pub bias: Vec<i64>,
}

pub(crate) fn pack_layer<T: Scalar>(
    model: &ModelGraph<T>,
    layer: &LayerNode<T>,
    masks: Option<&SparsityProfile<T>>,
    spec: &QuantSpec<T>,
) -> PackedLayer {
    let fan_in = layer.fan_in();
    let q = quantize_weights(model.weights(layer), spec);
    let mask = masks.and_then(|p| p.mask(&layer.id));
    let rows = q
        .chunks(fan_in)
        .enumerate()
        .map(|(o, row)| {
            row.iter()
                .enumerate()
                .filter(|&(i, &w)| w != 0 && mask.is_none_or(|m| m[o * fan_in + i]))
                .map(|(i, &w)| (i, w))
                .collect()
        })
        .collect();
    let bias = match model.bias(layer) {
        Some(b) => b
            .iter()
            .map(|&x| (x / spec.weight_scale).round_half_even().to_i64().unwrap_or(0))
            .collect(),
        None => vec![0; layer.fan_out()],
    };
    PackedLayer { rows, bias }
}

/// Flat input offset of each fan-in index of a conv kernel, relative to the
/// top-left corner of the receptive field.
pub(crate) fn conv_offsets(layer: &LayerNode<impl Scalar>) -> Vec<usize> {
    let (kh, kw) = layer.kernel.unwrap_or((1, 1));
    let (h, w) = match layer.input_shape {
        Shape::Volume { height, width, .. } => (height, width),
        Shape::Vector(_) => (1, 1),
    };
    let cin = layer.input_shape.channels();
    let mut offs = Vec::with_capacity(cin * kh * kw);
    for c in 0..cin {
        for y in 0..kh {
            for x in 0..kw {
                offs.push(c * h * w + y * w + x);
            }
        }
    }
    offs
}

/// Accumulators of a weighted layer evaluated from packed rows.
pub(crate) fn eval_packed(layer: &LayerNode<impl Scalar>, packed: &PackedLayer, input: &[i64]) -> Vec<i64> {
    match layer.kind {
        LayerKind::FullyConnected => packed
            .rows
            .iter()
            .zip(&packed.bias)
            .map(|(row, &b)| b + row.iter().map(|&(i, w)| w * input[i]).sum::<i64>())
            .collect(),
        LayerKind::Conv2D => {
            let offs = conv_offsets(layer);
            let Shape::Volume { width: in_w, .. } = layer.input_shape else {
                unreachable!("validated conv input")
            };
            let Shape::Volume {
                height: oh, width: ow, ..
            } = layer.output_shape
            else {
                unreachable!("validated conv output")
            };
            let (sh, sw) = layer.stride;
            let mut out = vec![0i64; packed.rows.len() * oh * ow];
            for (o, (row, &b)) in packed.rows.iter().zip(&packed.bias).enumerate() {
                for y in 0..oh {
                    for x in 0..ow {
                        let base = y * sh * in_w + x * sw;
                        out[(o * oh + y) * ow + x] =
                            b + row.iter().map(|&(i, w)| w * input[base + offs[i]]).sum::<i64>();
                    }
                }
            }
            out
        }
        _ => unreachable!("not a weighted layer"),
    }
}

fn max_pool(layer: &LayerNode<impl Scalar>, input: &[i64]) -> Vec<i64> {
    let Shape::Volume {
        height: ih, width: iw, ..
    } = layer.input_shape
    else {
        unreachable!("validated pool input")
    };
    let Shape::Volume {
        channels,
        height: oh,
        width: ow,
    } = layer.output_shape
    else {
        unreachable!("validated pool output")
    };
    let (kh, kw) = layer.kernel.unwrap_or((1, 1));
    let (sh, sw) = layer.stride;
    let mut out = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        let plane = &input[c * ih * iw..(c + 1) * ih * iw];
        for y in 0..oh {
            for x in 0..ow {
                let m = (0..kh)
                    .flat_map(|dy| (0..kw).map(move |dx| (y * sh + dy) * iw + x * sw + dx))
                    .map(|i| plane[i])
                    .max()
                    .expect("non-empty window");
                out.push(m);
            }
        }
    }
    out
}

fn threshold_layer(layer: &LayerNode<impl Scalar>, th: &ThresholdSet, input: &[i64]) -> Vec<i64> {
    let pixels = layer.input_shape.pixels();
    input
        .iter()
        .enumerate()
        .map(|(i, &acc)| apply_thresholds(acc, th.channel(i / pixels)))
        .collect()
}

fn check_input<T: Scalar>(model: &ModelGraph<T>, input: &IntTensor) -> Result<()> {
    if input.shape.elements() != model.input_shape().elements() || input.data.len() != input.shape.elements() {
        return Err(Error::shape(
            "<input>",
            format!(
                "input shape {} does not match model input {}",
                input.shape,
                model.input_shape()
            ),
        ));
    }
    let max_code = model.layers().first().map_or(i64::MAX, |l| (1i64 << l.act_bits) - 1);
    if let Some(bad) = input.data.iter().find(|&&v| v < 0 || v > max_code) {
        return Err(Error::InvalidArgument(format!(
            "input code {bad} outside [0, {max_code}]"
        )));
    }
    Ok(())
}

/// Output of every layer, in order.
pub fn run_inference_trace<T: Scalar>(
    model: &ModelGraph<T>,
    masks: Option<&SparsityProfile<T>>,
    plan: &QuantPlan<T>,
    input: &IntTensor,
) -> Result<Vec<Vec<i64>>> {
    check_input(model, input)?;
    let mut current = input.data.clone();
    let mut trace = Vec::with_capacity(model.layers().len());
    for layer in model.layers() {
        current = match layer.kind {
            LayerKind::Conv2D | LayerKind::FullyConnected => {
                let spec = plan.require(&layer.id)?;
                let packed = pack_layer(model, layer, masks, spec);
                eval_packed(layer, &packed, &current)
            }
            LayerKind::MaxPool2D => max_pool(layer, &current),
            LayerKind::Threshold => {
                let th = model.thresholds(layer).ok_or_else(|| Error::MissingQuantSpec {
                    layer: layer.id.clone(),
                })?;
                threshold_layer(layer, th, &current)
            }
        };
        trace.push(current.clone());
    }
    Ok(trace)
}

/// Bit-exact integer forward pass; returns the last layer's output.
pub fn run_inference<T: Scalar>(
    model: &ModelGraph<T>,
    masks: Option<&SparsityProfile<T>>,
    plan: &QuantPlan<T>,
    input: &IntTensor,
) -> Result<Vec<i64>> {
    let mut trace = run_inference_trace(model, masks, plan, input)?;
    Ok(trace.pop().unwrap_or_else(|| input.data.clone()))
}

/// Index of the maximum; ties go to the lowest index.
pub fn argmax(v: &[i64]) -> Option<usize> {
    v.iter()
        .enumerate()
        .fold(None, |best: Option<(usize, i64)>, (i, &x)| match best {
            Some((_, b)) if b >= x => best,
            _ => Some((i, x)),
        })
        .map(|(i, _)| i)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub input: IntTensor,
    pub label: usize,
}

pub fn evaluate_accuracy<T: Scalar>(
    model: &ModelGraph<T>,
    masks: Option<&SparsityProfile<T>>,
    plan: &QuantPlan<T>,
    testset: &[Sample],
) -> Result<f64> {
    if testset.is_empty() {
        return Err(Error::InvalidArgument("empty testset".into()));
    }
    let mut correct = 0usize;
    for s in testset {
        let out = run_inference(model, masks, plan, &s.input)?;
        if argmax(&out) == Some(s.label) {
            correct += 1;
        }
    }
    Ok(correct as f64 / testset.len() as f64)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSample {
    input: Value,
    label: usize,
}

fn nested_dims(v: &Value) -> Vec<usize> {
    let mut dims = Vec::new();
    let mut cur = v;
    while let Value::Array(items) = cur {
        dims.push(items.len());
        match items.first() {
            Some(first) => cur = first,
            None => break,
        }
    }
    dims
}

/// Parses a testset document: a list of `{input, label}` where `input` is a
/// (possibly nested) integer array laid out CHW.
pub fn parse_testset(text: &str, input_shape: Shape) -> Result<Vec<Sample>> {
    let raw: Vec<RawSample> = serde_json::from_str(text).map_err(|e| Error::parse("testset", e))?;
    raw.into_iter()
        .enumerate()
        .map(|(i, s)| {
            let ctx = format!("testset sample {i}");
            let mut data = Vec::new();
            crate::model::flatten_numbers(&s.input, &mut data, &|n| n.as_i64())
                .ok_or_else(|| Error::parse(&ctx, "input entries must be integers"))?;
            let dims = nested_dims(&s.input);
            let shape_ok = dims.len() <= 1 || Shape::from_dims(&dims) == Some(input_shape);
            if !shape_ok || data.len() != input_shape.elements() {
                return Err(Error::shape(
                    ctx,
                    format!("input dims {dims:?} do not match model input {input_shape}"),
                ));
            }
            Ok(Sample {
                input: IntTensor::new(input_shape, data)?,
                label: s.label,
            })
        })
        .collect()
}

pub fn load_testset(path: impl AsRef<Path>, input_shape: Shape) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_testset(&text, input_shape)
}
