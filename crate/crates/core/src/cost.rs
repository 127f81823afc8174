//! Analytical cycle and LUT model for folded / unrolled dataflow layers.
//!
//! Matrix-vector folding: a weighted layer with `pe` output lanes and
//! `simd` input lanes needs `ceil(fan_in/simd) · ceil(fan_out/pe)` cycles per
//! output pixel. Unrolled layers take one cycle per output pixel. Pooling and
//! thresholding stream one pixel per cycle.

use std::fmt;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::model::{LayerKind, LayerNode, ModelGraph};
use crate::prune::SparsityProfile;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FoldMode {
    Folded,
    UnrolledDense,
    UnrolledSparse,
}

impl fmt::Display for FoldMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Whether fold factors must divide the layer dimensions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Divisibility {
    #[default]
    Strict,
    /// Any factor allowed; partial folds are padded (ceil).
    Relaxed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerFold {
    pub mode: FoldMode,
    #[serde(rename = "PE")]
    pub pe: usize,
    #[serde(rename = "SIMD")]
    pub simd: usize,
}

impl LayerFold {
    pub const ONES: LayerFold = LayerFold {
        mode: FoldMode::Folded,
        pe: 1,
        simd: 1,
    };

    pub fn folded(pe: usize, simd: usize) -> Self {
        LayerFold {
            mode: FoldMode::Folded,
            pe,
            simd,
        }
    }

    pub fn unrolled<T>(layer: &LayerNode<T>, mode: FoldMode) -> Self {
        LayerFold {
            mode,
            pe: layer.fan_out(),
            simd: layer.fan_in(),
        }
    }

    pub fn is_unrolled(&self) -> bool {
        self.mode != FoldMode::Folded
    }
}

/// Fold settings for the weighted layers of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldingConfig<T> {
    pub layers: IndexMap<String, LayerFold>,
    pub clock_mhz: T,
    pub divisibility: Divisibility,
}

pub const DEFAULT_CLOCK_MHZ: f64 = 200.0;

impl<T: Scalar> FoldingConfig<T> {
    /// Every weighted layer folded with pe = simd = 1.
    pub fn all_ones<W>(model: &ModelGraph<W>, clock_mhz: T) -> Self {
        FoldingConfig {
            layers: model
                .layers()
                .iter()
                .filter(|l| l.is_weighted())
                .map(|l| (l.id.clone(), LayerFold::ONES))
                .collect(),
            clock_mhz,
            divisibility: Divisibility::Strict,
        }
    }

    /// Every weighted layer unrolled in `mode`.
    pub fn unrolled<W>(model: &ModelGraph<W>, mode: FoldMode, clock_mhz: T) -> Self {
        FoldingConfig {
            layers: model
                .layers()
                .iter()
                .filter(|l| l.is_weighted())
                .map(|l| (l.id.clone(), LayerFold::unrolled(l, mode)))
                .collect(),
            clock_mhz,
            divisibility: Divisibility::Strict,
        }
    }

    pub fn get(&self, layer: &str) -> Option<&LayerFold> {
        self.layers.get(layer)
    }

    pub fn set(&mut self, layer: &str, fold: LayerFold) {
        self.layers.insert(layer.to_string(), fold);
    }

    pub fn clock_hz(&self) -> T {
        self.clock_mhz * T::lit(1e6)
    }

    pub fn layers_in_mode(&self, mode: FoldMode) -> impl Iterator<Item = &str> {
        self.layers
            .iter()
            .filter(move |(_, f)| f.mode == mode)
            .map(|(id, _)| id.as_str())
    }
}

/// LUT model coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostCoefficients<T> {
    /// LUTs per PE·SIMD lane per weight-bit × activation-bit product.
    pub c_mac: T,
    /// Fixed LUTs per weighted layer.
    pub c_ctrl: T,
    /// LUTs per nonzero constant weight, per average operand bit.
    pub c_sparse: T,
    /// LUTs per channel of pooling or thresholding.
    pub c_pool: T,
}

impl<T: Scalar> Default for CostCoefficients<T> {
    fn default() -> Self {
        CostCoefficients {
            c_mac: T::lit(1.0),
            c_ctrl: T::lit(300.0),
            c_sparse: T::lit(0.5),
            c_pool: T::lit(5.0),
        }
    }
}

impl<T: Scalar> CostCoefficients<T> {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("c_mac", self.c_mac),
            ("c_ctrl", self.c_ctrl),
            ("c_sparse", self.c_sparse),
            ("c_pool", self.c_pool),
        ] {
            if !(v > T::zero() && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Self = serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
        c.validate()?;
        Ok(c)
    }
}

fn divisors(n: usize) -> impl Iterator<Item = usize> {
    (1..=n).filter(move |d| n.is_multiple_of(*d))
}

/// All divisors of `n` in ascending order.
pub fn divisor_list(n: usize) -> Vec<usize> {
    divisors(n).collect()
}

/// Smallest factor above `current` that strictly reduces `ceil(fan/x)`:
/// the next divisor under strict divisibility, otherwise the smallest
/// value reaching the next lower fold.
pub fn next_factor(fan: usize, current: usize, div: Divisibility) -> Option<usize> {
    if current >= fan {
        return None;
    }
    match div {
        Divisibility::Strict => divisors(fan).find(|&d| d > current),
        Divisibility::Relaxed => {
            let fold = fan.div_ceil(current);
            if fold <= 1 {
                None
            } else {
                Some(fan.div_ceil(fold - 1))
            }
        }
    }
}

/// Rule violations of one layer's fold entry.
fn fold_violations<T>(layer: &LayerNode<T>, fold: &LayerFold, div: Divisibility) -> Vec<String> {
    let (fan_in, fan_out) = (layer.fan_in(), layer.fan_out());
    let mut v = Vec::new();
    if !layer.is_weighted() {
        if *fold != LayerFold::ONES {
            v.push(format!("{} layers cannot be folded", layer.kind));
        }
        return v;
    }
    match fold.mode {
        FoldMode::Folded => {
            if fold.pe < 1 || fold.pe > fan_out {
                v.push(format!("PE={} must lie in [1, fan_out={fan_out}]", fold.pe));
            } else if div == Divisibility::Strict && fan_out % fold.pe != 0 {
                v.push(format!("pe must divide fan_out (PE={}, fan_out={fan_out})", fold.pe));
            }
            if fold.simd < 1 || fold.simd > fan_in {
                v.push(format!("SIMD={} must lie in [1, fan_in={fan_in}]", fold.simd));
            } else if div == Divisibility::Strict && fan_in % fold.simd != 0 {
                v.push(format!("simd must divide fan_in (SIMD={}, fan_in={fan_in})", fold.simd));
            }
        }
        FoldMode::UnrolledDense | FoldMode::UnrolledSparse => {
            if fold.pe != fan_out || fold.simd != fan_in {
                v.push(format!(
                    "{} requires PE=fan_out={fan_out} and SIMD=fan_in={fan_in} (got {}/{})",
                    fold.mode, fold.pe, fold.simd
                ));
            }
        }
    }
    v
}

fn check_fold<T>(layer: &LayerNode<T>, fold: &LayerFold, div: Divisibility) -> Result<()> {
    match fold_violations(layer, fold, div).into_iter().next() {
        None => Ok(()),
        Some(msg) => Err(Error::InvalidFold {
            layer: layer.id.clone(),
            message: msg,
        }),
    }
}

/// Cycles a layer needs per inference.
pub fn layer_cycles<T>(layer: &LayerNode<T>, fold: &LayerFold, div: Divisibility) -> Result<u64> {
    check_fold(layer, fold, div)?;
    let pixels = layer.output_shape.pixels() as u64;
    Ok(match layer.kind {
        LayerKind::Conv2D | LayerKind::FullyConnected => match fold.mode {
            FoldMode::Folded => {
                let sf = layer.fan_in().div_ceil(fold.simd) as u64;
                let nf = layer.fan_out().div_ceil(fold.pe) as u64;
                pixels * sf * nf
            }
            FoldMode::UnrolledDense | FoldMode::UnrolledSparse => pixels,
        },
        LayerKind::MaxPool2D | LayerKind::Threshold => pixels,
    })
}

/// LUT estimate of a layer.
pub fn layer_luts<T: Scalar, W>(
    layer: &LayerNode<W>,
    fold: &LayerFold,
    profile: Option<&SparsityProfile<T>>,
    coeffs: &CostCoefficients<T>,
) -> Result<T> {
    let wb = T::from_u32(layer.weight_bits).expect("bits");
    let ab = T::from_u32(layer.act_bits).expect("bits");
    Ok(match layer.kind {
        LayerKind::Conv2D | LayerKind::FullyConnected => match fold.mode {
            FoldMode::Folded | FoldMode::UnrolledDense => {
                coeffs.c_mac * T::from_count(fold.pe) * T::from_count(fold.simd) * wb * ab + coeffs.c_ctrl
            }
            FoldMode::UnrolledSparse => {
                let nnz = profile
                    .and_then(|p| p.get(&layer.id))
                    .ok_or_else(|| Error::MissingProfile {
                        layer: layer.id.clone(),
                    })?
                    .nnz;
                coeffs.c_sparse * T::from_count(nnz) * (wb + ab) / T::lit(2.0) + coeffs.c_ctrl
            }
        },
        LayerKind::MaxPool2D | LayerKind::Threshold => coeffs.c_pool * T::from_count(layer.output_shape.channels()),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerCost<T> {
    pub id: String,
    pub kind: LayerKind,
    /// `None` for layers without a fold (pooling, thresholds).
    pub mode: Option<FoldMode>,
    pub pe: usize,
    pub simd: usize,
    pub cycles: u64,
    pub luts: T,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostEstimate<T> {
    pub layers: Vec<LayerCost<T>>,
    pub bottleneck_index: usize,
    pub bottleneck_layer_id: String,
    pub ii_cycles: u64,
    pub latency_cycles: u64,
    pub clock_hz: T,
    pub throughput_fps: T,
    pub total_luts: T,
}

impl<T: Scalar> CostEstimate<T> {
    pub fn layer(&self, id: &str) -> Option<&LayerCost<T>> {
        self.layers.iter().find(|l| l.id == id)
    }

    pub fn utilization(&self, device_luts: T) -> T {
        self.total_luts / device_luts
    }

    /// Fixed-width per-layer table with a bottleneck marker.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<14} {:<15} {:<15} {:>5} {:>5} {:>12} {:>12}\n",
            "layer", "kind", "mode", "PE", "SIMD", "cycles", "luts"
        );
        for (i, l) in self.layers.iter().enumerate() {
            let mode = l.mode.map_or_else(|| "-".to_string(), |m| m.to_string());
            let marker = if i == self.bottleneck_index {
                "  <-- bottleneck"
            } else {
                ""
            };
            s.push_str(&format!(
                "{:<14} {:<15} {:<15} {:>5} {:>5} {:>12} {:>12.1}{marker}\n",
                l.id,
                l.kind.to_string(),
                mode,
                l.pe,
                l.simd,
                l.cycles,
                l.luts.as_f64()
            ));
        }
        s
    }

    /// CSV with columns layer_id, kind, mode, PE, SIMD, cycles, luts.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer_id,kind,mode,PE,SIMD,cycles,luts\n");
        for l in &self.layers {
            let mode = l.mode.map_or_else(String::new, |m| m.to_string());
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                l.id,
                l.kind,
                mode,
                l.pe,
                l.simd,
                l.cycles,
                l.luts.as_f64()
            ));
        }
        s
    }
}

/// Per-layer and aggregate cost of `cfg` on `model`.
pub fn estimate<T: Scalar, W>(
    model: &ModelGraph<W>,
    cfg: &FoldingConfig<T>,
    profile: Option<&SparsityProfile<T>>,
    coeffs: &CostCoefficients<T>,
) -> Result<CostEstimate<T>> {
    let mut layers = Vec::with_capacity(model.layers().len());
    for layer in model.layers() {
        let fold = if layer.is_weighted() {
            *cfg.get(&layer.id).ok_or_else(|| Error::InvalidFold {
                layer: layer.id.clone(),
                message: "no folding entry for weighted layer".into(),
            })?
        } else {
            LayerFold::ONES
        };
        let cycles = layer_cycles(layer, &fold, cfg.divisibility)?;
        let luts = layer_luts(layer, &fold, profile, coeffs)?;
        layers.push(LayerCost {
            id: layer.id.clone(),
            kind: layer.kind,
            mode: layer.is_weighted().then_some(fold.mode),
            pe: fold.pe,
            simd: fold.simd,
            cycles,
            luts,
        });
    }
    let (bottleneck_index, ii_cycles) =
        layers.iter().enumerate().fold(
            (0, 0u64),
            |(bi, bc), (i, l)| if l.cycles > bc { (i, l.cycles) } else { (bi, bc) },
        );
    let latency_cycles = layers.iter().map(|l| l.cycles).sum();
    let total_luts = layers.iter().fold(T::zero(), |acc, l| acc + l.luts);
    let clock_hz = cfg.clock_hz();
    let throughput_fps = clock_hz / T::from_u64(ii_cycles.max(1)).expect("cycles");
    Ok(CostEstimate {
        bottleneck_layer_id: layers.get(bottleneck_index).map(|l| l.id.clone()).unwrap_or_default(),
        layers,
        bottleneck_index,
        ii_cycles,
        latency_cycles,
        clock_hz,
        throughput_fps,
        total_luts,
    })
}

/// `faster.fps / slower.fps`, e.g. 1.235 for a 1.235× speed-up.
pub fn throughput_ratio<T: Scalar>(faster: &CostEstimate<T>, slower: &CostEstimate<T>) -> T {
    faster.throughput_fps / slower.throughput_fps
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub layer: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.layer, self.rule)
    }
}

/// Every way `cfg` fails to describe a valid folding of `model`.
pub fn validate_config<T: Scalar, W>(model: &ModelGraph<W>, cfg: &FoldingConfig<T>) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(cfg.clock_mhz > T::zero() && cfg.clock_mhz.is_finite()) {
        out.push(Violation {
            layer: "<config>".into(),
            rule: "clock_mhz must be positive".into(),
        });
    }
    for id in cfg.layers.keys() {
        if model.layer(id).is_none() {
            out.push(Violation {
                layer: id.clone(),
                rule: "unknown layer id".into(),
            });
        }
    }
    for layer in model.layers() {
        match cfg.get(&layer.id) {
            None if layer.is_weighted() => out.push(Violation {
                layer: layer.id.clone(),
                rule: "missing folding entry".into(),
            }),
            None => {}
            Some(fold) => {
                out.extend(
                    fold_violations(layer, fold, cfg.divisibility)
                        .into_iter()
                        .map(|rule| Violation {
                            layer: layer.id.clone(),
                            rule,
                        }),
                )
            }
        }
    }
    out
}

const RESERVED_KEYS: [&str; 3] = ["clock_mhz", "divisibility", "model_checksum"];

/// Serializes a config as a flat JSON object: layer ids map to
/// `{mode, PE, SIMD}`, next to `clock_mhz`, `divisibility` and the model checksum.
pub fn config_to_json<T: Scalar>(cfg: &FoldingConfig<T>, model_checksum: Option<&str>) -> Value {
    let mut map = Map::new();
    if let Some(sum) = model_checksum {
        map.insert("model_checksum".into(), Value::String(sum.to_string()));
    }
    map.insert("clock_mhz".into(), serde_json::json!(cfg.clock_mhz.as_f64()));
    map.insert(
        "divisibility".into(),
        serde_json::to_value(cfg.divisibility).expect("enum serializes"),
    );
    for (id, fold) in &cfg.layers {
        map.insert(id.clone(), serde_json::to_value(fold).expect("fold serializes"));
    }
    Value::Object(map)
}

/// Parses a config document. Returns the embedded model checksum, if any.
pub fn parse_config<T: Scalar>(text: &str) -> Result<(FoldingConfig<T>, Option<String>)> {
    let v: Value = serde_json::from_str(text).map_err(|e| Error::parse("folding config", e))?;
    let Value::Object(map) = v else {
        return Err(Error::parse("folding config", "expected a JSON object"));
    };
    let clock_mhz = match map.get("clock_mhz") {
        None => T::lit(DEFAULT_CLOCK_MHZ),
        Some(c) => T::lit(
            c.as_f64()
                .ok_or_else(|| Error::parse("folding config", "clock_mhz must be a number"))?,
        ),
    };
    let divisibility = match map.get("divisibility") {
        None => Divisibility::Strict,
        Some(d) => serde_json::from_value(d.clone()).map_err(|e| Error::parse("folding config", e))?,
    };
    let checksum = match map.get("model_checksum") {
        None => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(Error::parse("folding config", "model_checksum must be a string")),
    };
    let mut layers = IndexMap::new();
    for (k, v) in &map {
        if RESERVED_KEYS.contains(&k.as_str()) {
            continue;
        }
        let fold: LayerFold =
            serde_json::from_value(v.clone()).map_err(|e| Error::parse(format!("folding config entry `{k}`"), e))?;
        layers.insert(k.clone(), fold);
    }
    Ok((
        FoldingConfig {
            layers,
            clock_mhz,
            divisibility,
        },
        checksum,
    ))
}

pub fn save_config<T: Scalar>(cfg: &FoldingConfig<T>, model_checksum: &str, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&config_to_json(cfg, Some(model_checksum))).expect("json");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Loads a config, rejecting it if it embeds a checksum of a different model.
pub fn load_config<T: Scalar, W: Scalar>(path: impl AsRef<Path>, model: &ModelGraph<W>) -> Result<FoldingConfig<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (cfg, sum) = parse_config(&text)?;
    if let Some(found) = sum {
        let expected = crate::model::checksum_model(model);
        if found != expected {
            return Err(Error::ChecksumMismatch {
                what: format!("config {}", path.display()),
                expected,
                found,
            });
        }
    }
    Ok(cfg)
}
