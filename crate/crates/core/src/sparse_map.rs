//! Static sparse-connection maps for layers deployed as unrolled-sparse.
//!
//! For each output neuron (output channel of a convolution) a map lists the
//! surviving `(fan-in index, quantized weight)` pairs. A convolution's fan-in
//! index enumerates `(in_channel, ky, kx)` row-major, matching the weight
//! layout. Weights that quantize to zero are dropped.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{FoldMode, FoldingConfig};
use crate::error::{Error, Result};
use crate::model::{checksum_model, LayerKind, ModelGraph, Shape};
use crate::prune::SparsityProfile;
use crate::quant::{quantize_weights, run_inference_trace, IntTensor, QuantPlan};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapShape {
    pub input: Shape,
    pub output: Shape,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Neuron {
    pub out: usize,
    pub conns: Vec<(usize, i64)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseConnectionMap {
    pub layer: String,
    pub shape: MapShape,
    pub weight_bits: u32,
    pub neurons: Vec<Neuron>,
    pub model_checksum: String,
}

impl SparseConnectionMap {
    pub fn connection_count(&self) -> usize {
        self.neurons.iter().map(|n| n.conns.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapSummaryRow {
    pub layer: String,
    pub file: String,
    /// Kept weights according to the pruning profile.
    pub profile_nnz: usize,
    pub connections: usize,
    /// Kept weights whose quantized value is zero.
    pub quantized_zero_drops: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseExport {
    pub model_checksum: String,
    pub layers: Vec<MapSummaryRow>,
    #[serde(skip)]
    pub maps: Vec<SparseConnectionMap>,
}

/// Builds one map per UnrolledSparse layer of `cfg`, in layer order.
pub fn export_sparse_map<T: Scalar>(
    model: &ModelGraph<T>,
    profile: &SparsityProfile<T>,
    cfg: &FoldingConfig<T>,
    plan: &QuantPlan<T>,
) -> Result<SparseExport> {
    let checksum = checksum_model(model);
    let mut maps = Vec::new();
    let mut rows = Vec::new();
    for layer in model.weighted_layers() {
        if cfg.get(&layer.id).map(|f| f.mode) != Some(FoldMode::UnrolledSparse) {
            continue;
        }
        let mask = profile.get(&layer.id).ok_or_else(|| Error::MissingProfile {
            layer: layer.id.clone(),
        })?;
        let spec = plan.get(&layer.id).ok_or_else(|| Error::MissingQuantSpec {
            layer: layer.id.clone(),
        })?;
        let q = quantize_weights(model.weights(layer), spec);
        let fan_in = layer.fan_in();
        let mut drops = 0;
        let neurons: Vec<Neuron> = q
            .chunks(fan_in)
            .enumerate()
            .map(|(o, row)| {
                let mut conns = Vec::new();
                for (i, &w) in row.iter().enumerate() {
                    if !mask.mask[o * fan_in + i] {
                        continue;
                    }
                    if w == 0 {
                        drops += 1;
                    } else {
                        conns.push((i, w));
                    }
                }
                Neuron { out: o, conns }
            })
            .collect();
        let map = SparseConnectionMap {
            layer: layer.id.clone(),
            shape: MapShape {
                input: layer.input_shape,
                output: layer.output_shape,
            },
            weight_bits: layer.weight_bits,
            neurons,
            model_checksum: checksum.clone(),
        };
        rows.push(MapSummaryRow {
            layer: layer.id.clone(),
            file: map_file_name(&layer.id),
            profile_nnz: mask.nnz,
            connections: map.connection_count(),
            quantized_zero_drops: drops,
        });
        maps.push(map);
    }
    Ok(SparseExport {
        model_checksum: checksum,
        layers: rows,
        maps,
    })
}

pub fn map_file_name(layer: &str) -> String {
    format!("{layer}.sparse.json")
}

pub const SUMMARY_FILE: &str = "sparse_summary.json";

/// Compact JSON: one line per neuron.
pub fn map_to_string(map: &SparseConnectionMap) -> String {
    let mut s = String::from("{\n");
    s.push_str(&format!(
        "  \"layer\": {},\n",
        serde_json::to_string(&map.layer).expect("str")
    ));
    s.push_str(&format!(
        "  \"shape\": {},\n",
        serde_json::to_string(&map.shape).expect("shape")
    ));
    s.push_str(&format!("  \"weight_bits\": {},\n", map.weight_bits));
    s.push_str("  \"neurons\": [");
    for (i, n) in map.neurons.iter().enumerate() {
        s.push_str(if i == 0 { "\n    " } else { ",\n    " });
        s.push_str(&serde_json::to_string(n).expect("neuron"));
    }
    s.push_str(if map.neurons.is_empty() { "],\n" } else { "\n  ],\n" });
    s.push_str(&format!(
        "  \"model_checksum\": {}\n}}\n",
        serde_json::to_string(&map.model_checksum).expect("str")
    ));
    s
}

pub fn parse_sparse_map(text: &str) -> Result<SparseConnectionMap> {
    serde_json::from_str(text).map_err(|e| Error::parse("sparse map", e))
}

/// Writes every map plus the summary into `dir`.
pub fn write_sparse_export(export: &SparseExport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for map in &export.maps {
        let p = dir.join(map_file_name(&map.layer));
        fs::write(&p, map_to_string(map)).map_err(|e| Error::io(&p, e))?;
    }
    let p = dir.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(export).expect("summary serializes");
    fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MapVerification {
    pub inputs_checked: usize,
    pub failures: Vec<String>,
}

impl MapVerification {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Evaluates each map's accumulators on `n_inputs` random input codes and
/// compares them with the inference engine's pre-activation outputs.
pub fn verify_map_against_inference<T: Scalar>(
    maps: &[SparseConnectionMap],
    model: &ModelGraph<T>,
    profile: &SparsityProfile<T>,
    plan: &QuantPlan<T>,
    n_inputs: usize,
    seed: u64,
) -> Result<MapVerification> {
    let mut failures = Vec::new();
    if maps.is_empty() {
        return Ok(MapVerification {
            inputs_checked: 0,
            failures,
        });
    }
    let checksum = checksum_model(model);
    let mut targets = Vec::new();
    for map in maps {
        if map.model_checksum != checksum {
            failures.push(format!("{}: map was exported from a different model", map.layer));
            continue;
        }
        match model.layer_index(&map.layer) {
            Some(i) if model.layers()[i].is_weighted() => targets.push((i, map)),
            _ => failures.push(format!("{}: not a weighted layer of the model", map.layer)),
        }
    }
    let max_code = model.layers()[0].act_bits;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.input_shape().elements();
    for sample in 0..n_inputs {
        if failures.len() >= 16 {
            break;
        }
        let data = (0..n).map(|_| rng.gen_range(0..(1i64 << max_code))).collect();
        let input = IntTensor::new(model.input_shape(), data)?;
        let trace = run_inference_trace(model, Some(profile), plan, &input)?;
        for &(idx, map) in &targets {
            let layer = &model.layers()[idx];
            let x = if idx == 0 { &input.data } else { &trace[idx - 1] };
            let spec = plan.get(&layer.id).ok_or_else(|| Error::MissingQuantSpec {
                layer: layer.id.clone(),
            })?;
            let bias: Vec<i64> = match model.bias(layer) {
                Some(b) => b
                    .iter()
                    .map(|&v| (v / spec.weight_scale).round_half_even().to_i64().unwrap_or(0))
                    .collect(),
                None => vec![0; layer.fan_out()],
            };
            let got = eval_map(layer.kind, layer.kernel, layer.stride, map, &bias, x);
            if let Some(pos) = got.iter().zip(&trace[idx]).position(|(a, b)| a != b) {
                let pixels = layer.output_shape.pixels();
                failures.push(format!(
                    "{}: neuron {} (position {}) gives {} from the map but {} from inference on input #{sample}",
                    map.layer,
                    pos / pixels,
                    pos % pixels,
                    got[pos],
                    trace[idx][pos]
                ));
            } else if got.len() != trace[idx].len() {
                failures.push(format!(
                    "{}: map produces {} outputs, expected {}",
                    map.layer,
                    got.len(),
                    trace[idx].len()
                ));
            }
        }
    }
    Ok(MapVerification {
        inputs_checked: n_inputs,
        failures,
    })
}

fn eval_map(
    kind: LayerKind,
    kernel: Option<(usize, usize)>,
    stride: (usize, usize),
    map: &SparseConnectionMap,
    bias: &[i64],
    x: &[i64],
) -> Vec<i64> {
    let acc = |n: &Neuron, at: &dyn Fn(usize) -> usize| -> i64 {
        bias.get(n.out).copied().unwrap_or(0) + n.conns.iter().map(|&(i, w)| w * x[at(i)]).sum::<i64>()
    };
    match (kind, map.shape.input, map.shape.output) {
        (
            LayerKind::Conv2D,
            Shape::Volume {
                height: ih, width: iw, ..
            },
            Shape::Volume {
                height: oh, width: ow, ..
            },
        ) => {
            let (kh, kw) = kernel.unwrap_or((1, 1));
            let mut out = vec![0; map.neurons.len() * oh * ow];
            for n in &map.neurons {
                for r in 0..oh {
                    for c in 0..ow {
                        let at = |i: usize| {
                            let (ci, rem) = (i / (kh * kw), i % (kh * kw));
                            let (dy, dx) = (rem / kw, rem % kw);
                            (ci * ih + r * stride.0 + dy) * iw + c * stride.1 + dx
                        };
                        if let Some(slot) = out.get_mut((n.out * oh + r) * ow + c) {
                            *slot = acc(n, &at);
                        }
                    }
                }
            }
            out
        }
        _ => {
            let mut out = vec![0; map.neurons.len()];
            for n in &map.neurons {
                if let Some(slot) = out.get_mut(n.out) {
                    *slot = acc(n, &|i| i);
                }
            }
            out
        }
    }
}
