//! Network intermediate representation: a linear chain of quantized layers.

mod checksum;
mod descriptor;
mod shape;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::ThresholdSet;
use crate::scalar::Scalar;

pub use checksum::checksum_model;
pub(crate) use descriptor::flatten_numbers;
pub use descriptor::{load_model, parse_descriptor, save_model, WeightStorage};
pub use shape::{infer_output_shape, infer_shapes, Shape, ShapeParams};

pub const MIN_BITS: u32 = 1;
pub const MAX_BITS: u32 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerKind {
    Conv2D,
    FullyConnected,
    MaxPool2D,
    Threshold,
}

impl LayerKind {
    pub fn is_weighted(self) -> bool {
        matches!(self, LayerKind::Conv2D | LayerKind::FullyConnected)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// One validated layer of a [`ModelGraph`].
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNode<T> {
    pub id: String,
    pub kind: LayerKind,
    pub input_shape: Shape,
    pub output_shape: Shape,
    pub kernel: Option<(usize, usize)>,
    pub stride: (usize, usize),
    pub weight_bits: u32,
    pub act_bits: u32,
    pub weights_ref: Option<String>,
    pub bias_ref: Option<String>,
    pub thresholds_ref: Option<String>,
    /// Symmetric quantization scale for the weights, when given in the descriptor.
    pub weight_scale: Option<T>,
    pub prunable: bool,
}

impl<T> LayerNode<T> {
    pub fn is_weighted(&self) -> bool {
        self.kind.is_weighted()
    }

    /// Inputs feeding one output neuron: kh·kw·in_channels for Conv2D,
    /// the flattened input size for FullyConnected, 0 otherwise.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv2D => {
                let (kh, kw) = self.kernel.unwrap_or((1, 1));
                kh * kw * self.input_shape.channels()
            }
            LayerKind::FullyConnected => self.input_shape.elements(),
            _ => 0,
        }
    }

    /// Output channels or output features of a weighted layer, 0 otherwise.
    pub fn fan_out(&self) -> usize {
        match self.kind {
            LayerKind::Conv2D | LayerKind::FullyConnected => self.output_shape.channels(),
            _ => 0,
        }
    }

    pub fn weight_count(&self) -> usize {
        self.fan_in() * self.fan_out()
    }

    /// Parameters that reproduce this layer's output shape from its input.
    pub fn shape_params(&self) -> ShapeParams {
        ShapeParams {
            kind: self.kind,
            kernel: self.kernel,
            stride: self.stride,
            out_units: match self.kind {
                LayerKind::Conv2D => Some(self.output_shape.channels()),
                LayerKind::FullyConnected => Some(self.output_shape.elements()),
                _ => None,
            },
        }
    }
}

/// Description of a layer before shape inference and store assignment.
///
/// Tensors are owned here; [`ModelGraph::from_specs`] moves them into the
/// graph's stores and validates everything.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec<T> {
    pub id: String,
    pub kind: LayerKind,
    pub kernel: Option<(usize, usize)>,
    pub stride: (usize, usize),
    pub out_units: Option<usize>,
    pub weight_bits: u32,
    pub act_bits: u32,
    pub prunable: bool,
    pub weight_scale: Option<T>,
    /// Row-major, output-major weights (`fan_out` rows of `fan_in`).
    pub weights: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
    pub thresholds: Option<ThresholdSet>,
    /// Declared input shape, checked against the predecessor's output.
    pub input_shape: Option<Shape>,
    /// Declared output shape, checked against inference.
    pub output_shape: Option<Shape>,
    /// Declared predecessor id; anything other than the previous layer is a branch.
    pub input: Option<String>,
}

impl<T> LayerSpec<T> {
    fn bare(id: &str, kind: LayerKind, weight_bits: u32, act_bits: u32) -> Self {
        LayerSpec {
            id: id.to_string(),
            kind,
            kernel: None,
            stride: (1, 1),
            out_units: None,
            weight_bits,
            act_bits,
            prunable: false,
            weight_scale: None,
            weights: None,
            bias: None,
            thresholds: None,
            input_shape: None,
            output_shape: None,
            input: None,
        }
    }

    pub fn conv2d(id: &str, out_channels: usize, kernel: usize, weights: Vec<T>) -> Self {
        LayerSpec {
            kernel: Some((kernel, kernel)),
            out_units: Some(out_channels),
            weights: Some(weights),
            prunable: true,
            ..Self::bare(id, LayerKind::Conv2D, 4, 4)
        }
    }

    pub fn fully_connected(id: &str, out_features: usize, weights: Vec<T>) -> Self {
        LayerSpec {
            out_units: Some(out_features),
            weights: Some(weights),
            prunable: true,
            ..Self::bare(id, LayerKind::FullyConnected, 4, 4)
        }
    }

    pub fn max_pool(id: &str, kernel: usize, stride: usize) -> Self {
        LayerSpec {
            kernel: Some((kernel, kernel)),
            stride: (stride, stride),
            ..Self::bare(id, LayerKind::MaxPool2D, 4, 4)
        }
    }

    pub fn threshold(id: &str, thresholds: Option<ThresholdSet>) -> Self {
        let act_bits = thresholds.as_ref().map_or(4, |t| t.act_bits());
        LayerSpec {
            thresholds,
            ..Self::bare(id, LayerKind::Threshold, act_bits, act_bits)
        }
    }

    pub fn with_bits(mut self, weight_bits: u32, act_bits: u32) -> Self {
        self.weight_bits = weight_bits;
        self.act_bits = act_bits;
        self
    }

    pub fn with_scale(mut self, scale: T) -> Self {
        self.weight_scale = Some(scale);
        self
    }

    pub fn with_bias(mut self, bias: Vec<T>) -> Self {
        self.bias = Some(bias);
        self
    }

    pub fn with_prunable(mut self, prunable: bool) -> Self {
        self.prunable = prunable;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = (stride, stride);
        self
    }
}

/// A validated linear-chain quantized network.
///
/// Immutable after construction; every reference resolves and consecutive
/// shapes agree.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph<T> {
    name: String,
    input_shape: Shape,
    layers: Vec<LayerNode<T>>,
    weight_store: BTreeMap<String, Vec<T>>,
    threshold_store: BTreeMap<String, ThresholdSet>,
    metadata: BTreeMap<String, serde_json::Value>,
}

impl<T: Scalar> ModelGraph<T> {
    /// Infers shapes, assigns store references and validates the graph.
    pub fn from_specs(
        name: impl Into<String>,
        input_shape: Shape,
        specs: Vec<LayerSpec<T>>,
        metadata: BTreeMap<String, serde_json::Value>,
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::validation("<model>", "model has no layers"));
        }
        if input_shape.elements() == 0 {
            return Err(Error::validation("<model>", "input shape has a zero dimension"));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut weight_store = BTreeMap::new();
        let mut threshold_store = BTreeMap::new();
        let mut current = input_shape;
        let mut prev_id: Option<String> = None;

        for spec in specs {
            let id = spec.id.clone();
            if layers.iter().any(|l: &LayerNode<T>| l.id == id) {
                return Err(Error::validation(&id, "duplicate layer id"));
            }
            if let Some(src) = &spec.input {
                if prev_id.as_deref() != Some(src.as_str()) {
                    return Err(Error::validation(
                        &id,
                        format!(
                            "input `{src}` is not the preceding layer ({}); only linear chains are supported",
                            prev_id.as_deref().unwrap_or("model input")
                        ),
                    ));
                }
            }
            if let Some(declared) = spec.input_shape {
                if declared != current {
                    let prev = prev_id.as_deref().unwrap_or("model input");
                    return Err(Error::validation(
                        &id,
                        format!("declared input shape {declared} does not match output {current} of `{prev}`"),
                    ));
                }
            }
            for (what, bits) in [("weight_bits", spec.weight_bits), ("act_bits", spec.act_bits)] {
                if !(MIN_BITS..=MAX_BITS).contains(&bits) {
                    return Err(Error::validation(
                        &id,
                        format!("{what}={bits} outside [{MIN_BITS}, {MAX_BITS}]"),
                    ));
                }
            }
            let params = ShapeParams {
                kind: spec.kind,
                kernel: spec.kernel,
                stride: spec.stride,
                out_units: spec.out_units,
            };
            let output = infer_output_shape(&id, current, &params)?;
            if let Some(declared) = spec.output_shape {
                if declared != output {
                    return Err(Error::validation(
                        &id,
                        format!("declared output shape {declared} but inferred {output}"),
                    ));
                }
            }

            let mut node = LayerNode {
                id: id.clone(),
                kind: spec.kind,
                input_shape: current,
                output_shape: output,
                kernel: spec.kernel,
                stride: spec.stride,
                weight_bits: spec.weight_bits,
                act_bits: spec.act_bits,
                weights_ref: None,
                bias_ref: None,
                thresholds_ref: None,
                weight_scale: spec.weight_scale,
                prunable: spec.prunable,
            };

            if let Some(scale) = spec.weight_scale {
                if !(scale > T::zero() && scale.is_finite()) {
                    return Err(Error::validation(&id, "weight_scale must be positive and finite"));
                }
            }

            if spec.kind.is_weighted() {
                let weights = spec
                    .weights
                    .ok_or_else(|| Error::validation(&id, "weighted layer has no weights"))?;
                let (fan_in, fan_out) = (node.fan_in(), node.fan_out());
                if fan_in == 0 || fan_out == 0 {
                    return Err(Error::validation(&id, "fan_in and fan_out must be >= 1"));
                }
                if weights.len() != fan_in * fan_out {
                    return Err(Error::validation(
                        &id,
                        format!(
                            "weight tensor has {} elements, expected fan_in*fan_out = {fan_in}*{fan_out} = {}",
                            weights.len(),
                            fan_in * fan_out
                        ),
                    ));
                }
                if weights.iter().any(|w| !w.is_finite()) {
                    return Err(Error::validation(&id, "non-finite weight"));
                }
                let wref = format!("{id}.weight");
                weight_store.insert(wref.clone(), weights);
                node.weights_ref = Some(wref);

                if let Some(bias) = spec.bias {
                    if bias.len() != fan_out {
                        return Err(Error::validation(
                            &id,
                            format!("bias has {} elements, expected {fan_out}", bias.len()),
                        ));
                    }
                    if bias.iter().any(|b| !b.is_finite()) {
                        return Err(Error::validation(&id, "non-finite bias"));
                    }
                    let bref = format!("{id}.bias");
                    weight_store.insert(bref.clone(), bias);
                    node.bias_ref = Some(bref);
                }
                if spec.thresholds.is_some() {
                    return Err(Error::validation(&id, "thresholds are only valid on Threshold layers"));
                }
            } else {
                if spec.weights.is_some() || spec.bias.is_some() {
                    return Err(Error::validation(
                        &id,
                        format!("{} layers cannot carry weights", spec.kind),
                    ));
                }
                if spec.prunable {
                    return Err(Error::validation(&id, "only weighted layers can be prunable"));
                }
                if let Some(th) = spec.thresholds {
                    if spec.kind != LayerKind::Threshold {
                        return Err(Error::validation(&id, "thresholds are only valid on Threshold layers"));
                    }
                    if th.num_channels() != current.channels() {
                        return Err(Error::validation(
                            &id,
                            format!(
                                "{} threshold channels for an input with {} channels",
                                th.num_channels(),
                                current.channels()
                            ),
                        ));
                    }
                    if th.act_bits() != spec.act_bits {
                        return Err(Error::validation(
                            &id,
                            format!(
                                "thresholds encode {} bits but act_bits is {}",
                                th.act_bits(),
                                spec.act_bits
                            ),
                        ));
                    }
                    let tref = format!("{id}.thresholds");
                    threshold_store.insert(tref.clone(), th);
                    node.thresholds_ref = Some(tref);
                }
            }

            current = output;
            prev_id = Some(id);
            layers.push(node);
        }

        Ok(ModelGraph {
            name: name.into(),
            input_shape,
            layers,
            weight_store,
            threshold_store,
            metadata,
        })
    }

    /// Converts the weight scalar type (e.g. f64 → f32).
    pub fn cast<U: Scalar>(&self) -> ModelGraph<U> {
        let conv = |v: &T| U::from_f64(v.as_f64()).expect("finite weight");
        ModelGraph {
            name: self.name.clone(),
            input_shape: self.input_shape,
            layers: self
                .layers
                .iter()
                .map(|l| LayerNode {
                    id: l.id.clone(),
                    kind: l.kind,
                    input_shape: l.input_shape,
                    output_shape: l.output_shape,
                    kernel: l.kernel,
                    stride: l.stride,
                    weight_bits: l.weight_bits,
                    act_bits: l.act_bits,
                    weights_ref: l.weights_ref.clone(),
                    bias_ref: l.bias_ref.clone(),
                    thresholds_ref: l.thresholds_ref.clone(),
                    weight_scale: l.weight_scale.as_ref().map(conv),
                    prunable: l.prunable,
                })
                .collect(),
            weight_store: self
                .weight_store
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().map(conv).collect()))
                .collect(),
            threshold_store: self.threshold_store.clone(),
            metadata: self.metadata.clone(),
        }
    }

    /// Copy of the model with one layer's weights replaced (same length).
    pub fn with_weights(&self, layer_id: &str, weights: Vec<T>) -> Result<Self> {
        let layer = self
            .layer(layer_id)
            .ok_or_else(|| Error::validation(layer_id, "unknown layer"))?;
        let wref = layer
            .weights_ref
            .clone()
            .ok_or_else(|| Error::validation(layer_id, "layer has no weights"))?;
        if weights.len() != layer.weight_count() {
            return Err(Error::validation(layer_id, "replacement weights have the wrong length"));
        }
        let mut out = self.clone();
        out.weight_store.insert(wref, weights);
        Ok(out)
    }
}

impl<T> ModelGraph<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn output_shape(&self) -> Shape {
        self.layers.last().map_or(self.input_shape, |l| l.output_shape)
    }

    pub fn layers(&self) -> &[LayerNode<T>] {
        &self.layers
    }

    pub fn layer(&self, id: &str) -> Option<&LayerNode<T>> {
        self.layers.iter().find(|l| l.id == id)
    }

    pub fn layer_index(&self, id: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.id == id)
    }

    pub fn weighted_layers(&self) -> impl Iterator<Item = &LayerNode<T>> {
        self.layers.iter().filter(|l| l.is_weighted())
    }

    pub fn weights(&self, layer: &LayerNode<T>) -> &[T] {
        layer
            .weights_ref
            .as_ref()
            .and_then(|r| self.weight_store.get(r))
            .map_or(&[], |v| v.as_slice())
    }

    pub fn bias(&self, layer: &LayerNode<T>) -> Option<&[T]> {
        layer
            .bias_ref
            .as_ref()
            .and_then(|r| self.weight_store.get(r))
            .map(|v| v.as_slice())
    }

    pub fn thresholds(&self, layer: &LayerNode<T>) -> Option<&ThresholdSet> {
        layer.thresholds_ref.as_ref().and_then(|r| self.threshold_store.get(r))
    }

    pub fn metadata(&self) -> &BTreeMap<String, serde_json::Value> {
        &self.metadata
    }

    pub fn weight_store(&self) -> &BTreeMap<String, Vec<T>> {
        &self.weight_store
    }

    /// Total number of weights over all weighted layers (biases excluded).
    pub fn total_weights(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.is_weighted())
            .map(|l| l.weight_count())
            .sum()
    }
}
