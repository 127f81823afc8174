//! JSON model descriptor reader/writer.
//!
//! Weight tensors are either inline nested arrays or `"file:<path>"`
//! references to headerless little-endian f32 files (row-major,
//! output-major). Threshold tensors use the same convention with
//! little-endian i32 files. Relative paths resolve against the
//! descriptor's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::quant::ThresholdSet;
use crate::scalar::Scalar;

use super::{LayerKind, LayerSpec, ModelGraph, Shape};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDescriptor {
    name: String,
    input_shape: Shape,
    layers: Vec<RawLayer>,
    #[serde(default)]
    metadata: BTreeMap<String, Value>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawLayer {
    id: String,
    kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_shape: Option<Shape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_shape: Option<Shape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel: Option<Pair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<Pair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    out_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    out_features: Option<usize>,
    weight_bits: u32,
    act_bits: u32,
    #[serde(default)]
    prunable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    thresholds: Option<Value>,
}

/// `5` or `[5, 3]`.
#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(untagged)]
enum Pair {
    Square(usize),
    Rect([usize; 2]),
}

impl Pair {
    fn get(self) -> (usize, usize) {
        match self {
            Pair::Square(k) => (k, k),
            Pair::Rect([a, b]) => (a, b),
        }
    }

    fn from_tuple((a, b): (usize, usize)) -> Self {
        if a == b {
            Pair::Square(a)
        } else {
            Pair::Rect([a, b])
        }
    }
}

/// How [`save_model`] writes tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightStorage {
    /// Nested JSON arrays inside the descriptor (exact for f64).
    Inline,
    /// Sidecar binary files next to the descriptor (f32 / i32).
    External,
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelGraph<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_descriptor(&text, &base)
}

/// Parses a descriptor document; `base_dir` anchors relative `file:` paths.
pub fn parse_descriptor<T: Scalar>(text: &str, base_dir: &Path) -> Result<ModelGraph<T>> {
    let raw: RawDescriptor = serde_json::from_str(text).map_err(|e| Error::parse("model descriptor", e))?;
    let mut specs = Vec::with_capacity(raw.layers.len());
    for l in raw.layers {
        specs.push(raw_to_spec(l, base_dir)?);
    }
    ModelGraph::from_specs(raw.name, raw.input_shape, specs, raw.metadata)
}

fn raw_to_spec<T: Scalar>(l: RawLayer, base: &Path) -> Result<LayerSpec<T>> {
    let id = l.id.clone();
    let out_units = match (l.kind, l.out_channels, l.out_features) {
        (LayerKind::Conv2D, Some(c), None) => Some(c),
        (LayerKind::FullyConnected, None, Some(f)) => Some(f),
        (LayerKind::Conv2D, _, _) => return Err(Error::parse(&id, "Conv2D needs out_channels (and no out_features)")),
        (LayerKind::FullyConnected, _, _) => {
            return Err(Error::parse(
                &id,
                "FullyConnected needs out_features (and no out_channels)",
            ))
        }
        (_, None, None) => None,
        (kind, _, _) => return Err(Error::parse(&id, format!("{kind} takes no out_channels/out_features"))),
    };
    let weights = l
        .weights
        .as_ref()
        .map(|v| read_real_tensor::<T>(v, base, &id, "weights"))
        .transpose()?;
    let bias = l
        .bias
        .as_ref()
        .map(|v| read_real_tensor::<T>(v, base, &id, "bias"))
        .transpose()?;
    let thresholds = match &l.thresholds {
        None => None,
        Some(v) => {
            let per_channel = (1usize << l.act_bits.min(16)) - 1;
            let flat = read_int_tensor(v, base, &id)?;
            if per_channel == 0 || flat.len() % per_channel != 0 {
                return Err(Error::parse(
                    &id,
                    format!(
                        "{} thresholds is not a multiple of 2^act_bits-1 = {per_channel}",
                        flat.len()
                    ),
                ));
            }
            let channels = flat.chunks(per_channel).map(<[i64]>::to_vec).collect();
            Some(ThresholdSet::new(l.act_bits, channels).map_err(|m| Error::validation(&id, m))?)
        }
    };
    let weight_scale = l
        .weight_scale
        .map(|s| T::from_f64(s).ok_or_else(|| Error::parse(&id, "weight_scale not representable")))
        .transpose()?;
    Ok(LayerSpec {
        id: l.id,
        kind: l.kind,
        kernel: l.kernel.map(Pair::get),
        stride: l.stride.map_or((1, 1), Pair::get),
        out_units,
        weight_bits: l.weight_bits,
        act_bits: l.act_bits,
        prunable: l.prunable,
        weight_scale,
        weights,
        bias,
        thresholds,
        input_shape: l.input_shape,
        output_shape: l.output_shape,
        input: l.input,
    })
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_real_tensor<T: Scalar>(v: &Value, base: &Path, layer: &str, what: &str) -> Result<Vec<T>> {
    match v {
        Value::String(s) => {
            let rel = s
                .strip_prefix("file:")
                .ok_or_else(|| Error::parse(layer, format!("{what}: expected \"file:<path>\" or an array")))?;
            let path = resolve(base, rel);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if bytes.len() % 4 != 0 {
                return Err(Error::parse(
                    path.display().to_string(),
                    "length is not a multiple of 4 bytes",
                ));
            }
            Ok(bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .map(|x| T::from_f32(x).unwrap_or_else(T::nan))
                .collect())
        }
        Value::Array(_) => {
            let mut out = Vec::new();
            flatten_numbers(v, &mut out, &|n| n.as_f64())
                .ok_or_else(|| Error::parse(layer, format!("{what}: non-numeric entry")))?;
            out.into_iter()
                .map(|x| T::from_f64(x).ok_or_else(|| Error::parse(layer, "weight not representable")))
                .collect()
        }
        _ => Err(Error::parse(
            layer,
            format!("{what}: expected \"file:<path>\" or an array"),
        )),
    }
}

fn read_int_tensor(v: &Value, base: &Path, layer: &str) -> Result<Vec<i64>> {
    match v {
        Value::String(s) => {
            let rel = s
                .strip_prefix("file:")
                .ok_or_else(|| Error::parse(layer, "thresholds: expected \"file:<path>\" or an array"))?;
            let path = resolve(base, rel);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if bytes.len() % 4 != 0 {
                return Err(Error::parse(
                    path.display().to_string(),
                    "length is not a multiple of 4 bytes",
                ));
            }
            Ok(bytes
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]) as i64)
                .collect())
        }
        Value::Array(_) => {
            let mut out = Vec::new();
            flatten_numbers(v, &mut out, &|n| n.as_i64())
                .ok_or_else(|| Error::parse(layer, "thresholds: entries must be integers"))?;
            Ok(out)
        }
        _ => Err(Error::parse(layer, "thresholds: expected \"file:<path>\" or an array")),
    }
}

/// Row-major flattening of arbitrarily nested arrays.
pub(crate) fn flatten_numbers<N>(
    v: &Value,
    out: &mut Vec<N>,
    conv: &dyn Fn(&serde_json::Number) -> Option<N>,
) -> Option<()> {
    match v {
        Value::Number(n) => {
            out.push(conv(n)?);
            Some(())
        }
        Value::Array(items) => items.iter().try_for_each(|x| flatten_numbers(x, out, conv)),
        _ => None,
    }
}

/// Writes `model` as a descriptor at `path`.
///
/// With [`WeightStorage::External`] tensors go to `<stem>.<layer>.<what>.bin`
/// next to the descriptor.
pub fn save_model<T: Scalar>(model: &ModelGraph<T>, path: impl AsRef<Path>, storage: WeightStorage) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());

    let mut layers = Vec::new();
    for l in model.layers() {
        let mut raw = RawLayer {
            id: l.id.clone(),
            kind: l.kind,
            input: None,
            input_shape: None,
            output_shape: None,
            kernel: l.kernel.map(Pair::from_tuple),
            stride: (l.kernel.is_some()).then(|| Pair::from_tuple(l.stride)),
            out_channels: (l.kind == LayerKind::Conv2D).then(|| l.fan_out()),
            out_features: (l.kind == LayerKind::FullyConnected).then(|| l.fan_out()),
            weight_bits: l.weight_bits,
            act_bits: l.act_bits,
            prunable: l.prunable,
            weight_scale: l.weight_scale.map(Scalar::as_f64),
            weights: None,
            bias: None,
            thresholds: None,
        };
        let put_real = |data: &[T], what: &str| -> Result<Value> {
            Ok(match storage {
                WeightStorage::Inline => Value::Array(
                    data.iter()
                        .map(|x| {
                            serde_json::Number::from_f64(x.as_f64())
                                .map(Value::Number)
                                .unwrap_or(Value::Null)
                        })
                        .collect(),
                ),
                WeightStorage::External => {
                    let name = format!("{stem}.{}.{what}.bin", l.id);
                    let bytes: Vec<u8> = data
                        .iter()
                        .flat_map(|x| x.to_f32().unwrap_or(f32::NAN).to_le_bytes())
                        .collect();
                    let p = dir.join(&name);
                    fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
                    Value::String(format!("file:{name}"))
                }
            })
        };
        if l.is_weighted() {
            raw.weights = Some(put_real(model.weights(l), "weights")?);
            if let Some(b) = model.bias(l) {
                raw.bias = Some(put_real(b, "bias")?);
            }
        }
        if let Some(th) = model.thresholds(l) {
            raw.thresholds = Some(match storage {
                WeightStorage::Inline => serde_json::to_value(th.channels()).expect("integers serialize"),
                WeightStorage::External => {
                    let mut bytes = Vec::new();
                    for &t in th.channels().iter().flatten() {
                        let t32 = i32::try_from(t)
                            .map_err(|_| Error::validation(&l.id, format!("threshold {t} does not fit in i32")))?;
                        bytes.extend_from_slice(&t32.to_le_bytes());
                    }
                    let name = format!("{stem}.{}.thresholds.bin", l.id);
                    let p = dir.join(&name);
                    fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
                    Value::String(format!("file:{name}"))
                }
            });
        }
        layers.push(raw);
    }
    let doc = serde_json::json!({
        "name": model.name(),
        "input_shape": model.input_shape(),
        "layers": layers,
        "metadata": model.metadata(),
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::parse("model descriptor", e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
