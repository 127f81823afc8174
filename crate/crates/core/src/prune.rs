//! Global magnitude pruning and compression accounting.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::scalar::Scalar;

/// Pruning mask of one weighted layer (same layout as its weights).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerMask<T> {
    pub mask: Vec<bool>,
    pub nnz: usize,
    pub density: T,
}

impl<T: Scalar> LayerMask<T> {
    pub fn new(mask: Vec<bool>) -> Self {
        let nnz = mask.iter().filter(|&&b| b).count();
        let density = if mask.is_empty() {
            T::one()
        } else {
            T::from_count(nnz) / T::from_count(mask.len())
        };
        LayerMask { mask, nnz, density }
    }

    pub fn total(&self) -> usize {
        self.mask.len()
    }
}

/// Per-layer masks over every weighted layer, in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct SparsityProfile<T> {
    pub global_threshold: T,
    pub target_sparsity: T,
    per_layer: IndexMap<String, LayerMask<T>>,
}

impl<T: Scalar> SparsityProfile<T> {
    /// Builds a profile from explicit masks; weighted layers not listed get
    /// all-ones masks. The threshold is the largest pruned magnitude.
    pub fn from_masks<I>(model: &ModelGraph<T>, masks: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<bool>)>,
    {
        let mut given: IndexMap<String, Vec<bool>> = masks.into_iter().collect();
        let mut per_layer = IndexMap::new();
        let mut threshold = T::zero();
        let (mut pruned, mut total) = (0usize, 0usize);
        for l in model.weighted_layers() {
            let mask = match given.shift_remove(&l.id) {
                Some(m) => {
                    if m.len() != l.weight_count() {
                        return Err(Error::validation(
                            &l.id,
                            format!("mask has {} entries, expected {}", m.len(), l.weight_count()),
                        ));
                    }
                    if !l.prunable && m.iter().any(|b| !b) {
                        return Err(Error::validation(&l.id, "layer is not prunable"));
                    }
                    m
                }
                None => vec![true; l.weight_count()],
            };
            for (w, &keep) in model.weights(l).iter().zip(&mask) {
                if !keep {
                    threshold = threshold.max(w.abs());
                    pruned += 1;
                }
            }
            if l.prunable {
                total += mask.len();
            }
            per_layer.insert(l.id.clone(), LayerMask::new(mask));
        }
        if let Some(id) = given.keys().next() {
            return Err(Error::validation(id, "mask for unknown or unweighted layer"));
        }
        let target = if total == 0 {
            T::zero()
        } else {
            T::from_count(pruned) / T::from_count(total)
        };
        Ok(SparsityProfile {
            global_threshold: threshold,
            target_sparsity: target,
            per_layer,
        })
    }

    pub fn get(&self, layer: &str) -> Option<&LayerMask<T>> {
        self.per_layer.get(layer)
    }

    pub fn mask(&self, layer: &str) -> Option<&[bool]> {
        self.per_layer.get(layer).map(|m| m.mask.as_slice())
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &LayerMask<T>)> {
        self.per_layer.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Copy where only `keep` layers retain their masks; others become all-ones.
    pub fn restricted_to(&self, keep: &BTreeSet<String>) -> Self {
        let per_layer = self
            .per_layer
            .iter()
            .map(|(id, m)| {
                let m = if keep.contains(id) {
                    m.clone()
                } else {
                    LayerMask::new(vec![true; m.total()])
                };
                (id.clone(), m)
            })
            .collect();
        SparsityProfile {
            global_threshold: self.global_threshold,
            target_sparsity: self.target_sparsity,
            per_layer,
        }
    }

    /// Kept fraction over the given layers' weights.
    pub fn density_over<'a>(&self, layers: impl IntoIterator<Item = &'a str>) -> T {
        let (mut nnz, mut total) = (0usize, 0usize);
        for id in layers {
            if let Some(m) = self.per_layer.get(id) {
                nnz += m.nnz;
                total += m.total();
            }
        }
        if total == 0 {
            T::one()
        } else {
            T::from_count(nnz) / T::from_count(total)
        }
    }
}

/// Prunes exactly `floor(target · N)` of the `N` prunable weights: the
/// smallest magnitudes, ties broken by (layer order, flat index).
pub fn global_magnitude_prune<T: Scalar>(model: &ModelGraph<T>, target_sparsity: T) -> Result<SparsityProfile<T>> {
    if !(target_sparsity >= T::zero() && target_sparsity < T::one()) {
        return Err(Error::InvalidArgument(format!(
            "target sparsity {target_sparsity} outside [0, 1)"
        )));
    }
    let prunable: Vec<_> = model.weighted_layers().filter(|l| l.prunable).collect();
    if prunable.is_empty() {
        return Err(Error::NoPrunableLayers);
    }
    // (magnitude, layer ordinal, flat index)
    let mut order: Vec<(T, usize, usize)> = prunable
        .iter()
        .enumerate()
        .flat_map(|(li, l)| model.weights(l).iter().enumerate().map(move |(i, w)| (w.abs(), li, i)))
        .collect();
    let n = order.len();
    let k = prune_count(target_sparsity, n);
    let cmp = |a: &(T, usize, usize), b: &(T, usize, usize)| {
        a.0.partial_cmp(&b.0)
            .expect("finite weights")
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    };
    if k > 0 && k < n {
        order.select_nth_unstable_by(k - 1, cmp);
    }
    let pruned = &order[..k];
    let threshold = pruned.iter().fold(T::zero(), |m, e| m.max(e.0));

    let mut masks: Vec<Vec<bool>> = prunable.iter().map(|l| vec![true; l.weight_count()]).collect();
    for &(_, li, i) in pruned {
        masks[li][i] = false;
    }
    let mut per_layer = IndexMap::new();
    let mut pruned_masks = prunable
        .iter()
        .map(|l| l.id.as_str())
        .zip(masks)
        .collect::<IndexMap<_, _>>();
    for l in model.weighted_layers() {
        let mask = pruned_masks
            .shift_remove(l.id.as_str())
            .unwrap_or_else(|| vec![true; l.weight_count()]);
        per_layer.insert(l.id.clone(), LayerMask::new(mask));
    }
    Ok(SparsityProfile {
        global_threshold: threshold,
        target_sparsity,
        per_layer,
    })
}

/// floor(target · n), the number of weights removed at a given target.
pub fn prune_count<T: Scalar>(target_sparsity: T, n: usize) -> usize {
    (target_sparsity * T::from_count(n))
        .floor()
        .to_usize()
        .unwrap_or(0)
        .min(n)
}

/// 32-bit dense bits over deployed bits. Layers in `sparse_layers` pay only
/// for nonzero weights (no index storage); the rest pay for every weight.
pub fn compression_ratio<T: Scalar>(
    model: &ModelGraph<T>,
    profile: &SparsityProfile<T>,
    sparse_layers: &BTreeSet<String>,
) -> T {
    let mut dense_bits = 0u128;
    let mut deployed_bits = 0u128;
    for l in model.weighted_layers() {
        let count = l.weight_count() as u128;
        dense_bits += 32 * count;
        let kept = if sparse_layers.contains(&l.id) {
            profile.get(&l.id).map_or(count, |m| m.nnz as u128)
        } else {
            count
        };
        deployed_bits += kept * l.weight_bits as u128;
    }
    if deployed_bits == 0 {
        return T::infinity();
    }
    T::from_u128(dense_bits).expect("bits") / T::from_u128(deployed_bits).expect("bits")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SparsityRow {
    pub id: String,
    pub total: usize,
    pub nnz: usize,
    pub density: f64,
}

pub fn layer_sparsity_report<T: Scalar>(profile: &SparsityProfile<T>) -> Vec<SparsityRow> {
    profile
        .layers()
        .map(|(id, m)| SparsityRow {
            id: id.to_string(),
            total: m.total(),
            nnz: m.nnz,
            density: m.density.as_f64(),
        })
        .collect()
}

/// Fixed-width table of [`layer_sparsity_report`] rows plus a global line.
pub struct SparsityTable<'a>(pub &'a [SparsityRow]);

impl fmt::Display for SparsityTable<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16} {:>10} {:>10} {:>9}", "layer", "total", "nnz", "density")?;
        let (mut total, mut nnz) = (0, 0);
        for r in self.0 {
            writeln!(f, "{:<16} {:>10} {:>10} {:>9.5}", r.id, r.total, r.nnz, r.density)?;
            total += r.total;
            nnz += r.nnz;
        }
        let global = if total == 0 { 1.0 } else { nnz as f64 / total as f64 };
        write!(f, "{:<16} {:>10} {:>10} {:>9.5}", "global", total, nnz, global)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfile {
    model_checksum: String,
    global_threshold: f64,
    target_sparsity: f64,
    per_layer: IndexMap<String, RawLayerMask>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayerMask {
    nnz: usize,
    density: f64,
    mask: String,
}

/// Packs booleans LSB-first into bytes, zero padded.
pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub fn unpack_bits(bytes: &[u8], len: usize) -> Option<Vec<bool>> {
    if bytes.len() != len.div_ceil(8) {
        return None;
    }
    let bits: Vec<bool> = (0..len).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
    let padding_clear = (len..bytes.len() * 8).all(|i| bytes[i / 8] >> (i % 8) & 1 == 0);
    padding_clear.then_some(bits)
}

/// Writes the profile JSON at `path` and one bitmap per layer beside it.
pub fn save_profile<T: Scalar>(
    profile: &SparsityProfile<T>,
    model_checksum: &str,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "profile".into());
    let mut per_layer = IndexMap::new();
    for (id, m) in profile.layers() {
        let name = format!("{stem}.{id}.mask.bin");
        let p = dir.join(&name);
        fs::write(&p, pack_bits(&m.mask)).map_err(|e| Error::io(&p, e))?;
        per_layer.insert(
            id.to_string(),
            RawLayerMask {
                nnz: m.nnz,
                density: m.density.as_f64(),
                mask: format!("file:{name}"),
            },
        );
    }
    let raw = RawProfile {
        model_checksum: model_checksum.to_string(),
        global_threshold: profile.global_threshold.as_f64(),
        target_sparsity: profile.target_sparsity.as_f64(),
        per_layer,
    };
    let text = serde_json::to_string_pretty(&raw).map_err(|e| Error::parse("profile", e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Reads a profile and checks it against `model` (checksum, sizes, nnz).
pub fn load_profile<T: Scalar>(path: impl AsRef<Path>, model: &ModelGraph<T>) -> Result<SparsityProfile<T>> {
    let path = path.as_ref();
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: RawProfile = serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
    let expected = crate::model::checksum_model(model);
    if raw.model_checksum != expected {
        return Err(Error::ChecksumMismatch {
            what: format!("profile {}", path.display()),
            expected,
            found: raw.model_checksum,
        });
    }
    let mut masks = Vec::new();
    for (id, m) in raw.per_layer {
        let layer = model
            .layer(&id)
            .ok_or_else(|| Error::validation(&id, "profile names an unknown layer"))?;
        let rel = m
            .mask
            .strip_prefix("file:")
            .ok_or_else(|| Error::parse(&id, "mask must be \"file:<path>\""))?;
        let p = dir.join(rel);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let bits = unpack_bits(&bytes, layer.weight_count())
            .ok_or_else(|| Error::parse(p.display().to_string(), "bitmap size or padding mismatch"))?;
        if bits.iter().filter(|&&b| b).count() != m.nnz {
            return Err(Error::validation(&id, "nnz does not match the stored mask"));
        }
        masks.push((id, bits));
    }
    let mut profile = SparsityProfile::from_masks(model, masks)?;
    profile.global_threshold = T::lit(raw.global_threshold);
    profile.target_sparsity = T::lit(raw.target_sparsity);
    Ok(profile)
}
