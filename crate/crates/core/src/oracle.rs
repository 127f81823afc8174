//! Reference implementations used to check the heuristics and the inference
//! engine: exhaustive configuration search and a naive forward pass.

use crate::cost::{
    divisor_list, estimate, layer_cycles, layer_luts, CostCoefficients, CostEstimate, Divisibility, FoldMode,
    FoldingConfig, LayerFold,
};
use crate::dse::{sparse_eligible, Budget};
use crate::error::{Error, Result};
use crate::model::{LayerKind, ModelGraph, Shape};
use crate::prune::SparsityProfile;
use crate::quant::{apply_thresholds, quantize_weights, IntTensor, QuantPlan};
use crate::scalar::Scalar;

/// Largest number of configurations [`exhaustive_best_config`] will visit.
pub const SEARCH_LIMIT: u128 = 10_000_000;

/// Folding options of one weighted layer, in enumeration order.
fn layer_options<T: Scalar>(
    model: &ModelGraph<T>,
    layer_idx: usize,
    profile: Option<&SparsityProfile<T>>,
) -> Vec<LayerFold> {
    let layer = &model.layers()[layer_idx];
    let mut opts = Vec::new();
    for pe in divisor_list(layer.fan_out()) {
        for simd in divisor_list(layer.fan_in()) {
            opts.push(LayerFold::folded(pe, simd));
        }
    }
    // Same eligibility as the engine's SparseUnfold move.
    if sparse_eligible(layer, profile) {
        opts.push(LayerFold::unrolled(layer, FoldMode::UnrolledSparse));
    }
    opts
}

/// Number of configurations in the strict-divisor + sparse space.
pub fn search_space_size<T: Scalar>(model: &ModelGraph<T>, profile: Option<&SparsityProfile<T>>) -> u128 {
    model
        .layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_weighted())
        .map(|(i, _)| layer_options(model, i, profile).len() as u128)
        .fold(1u128, |acc, n| acc.saturating_mul(n))
}

/// Highest-throughput configuration within budget, ties broken by fewer
/// LUTs and then by the lexicographically first option vector.
///
/// Returns `Ok(None)` when no configuration fits the budget.
pub fn exhaustive_best_config<T: Scalar>(
    model: &ModelGraph<T>,
    profile: Option<&SparsityProfile<T>>,
    budget: &Budget<T>,
    coeffs: &CostCoefficients<T>,
    clock_mhz: T,
) -> Result<Option<(FoldingConfig<T>, CostEstimate<T>)>> {
    let size = search_space_size(model, profile);
    if size > SEARCH_LIMIT {
        return Err(Error::SearchSpaceTooLarge {
            size,
            limit: SEARCH_LIMIT,
        });
    }

    // Per layer: list of (fold, cycles, luts); fixed layers get a single entry.
    let mut table: Vec<Vec<(Option<LayerFold>, u64, T)>> = Vec::new();
    for (i, layer) in model.layers().iter().enumerate() {
        if layer.is_weighted() {
            let mut row = Vec::new();
            for fold in layer_options(model, i, profile) {
                let c = layer_cycles(layer, &fold, Divisibility::Strict)?;
                let l = layer_luts(layer, &fold, profile, coeffs)?;
                row.push((Some(fold), c, l));
            }
            table.push(row);
        } else {
            let c = layer_cycles(layer, &LayerFold::ONES, Divisibility::Strict)?;
            let l = layer_luts(layer, &LayerFold::ONES, profile, coeffs)?;
            table.push(vec![(None, c, l)]);
        }
    }

    let mut idx = vec![0usize; table.len()];
    // (ii, luts, option vector)
    let mut best: Option<(u64, T, Vec<usize>)> = None;
    loop {
        let mut ii = 0u64;
        let mut luts = T::zero();
        for (row, &k) in table.iter().zip(&idx) {
            let (_, c, l) = row[k];
            ii = ii.max(c);
            luts = luts + l;
        }
        if budget.max_luts >= luts {
            let better = match &best {
                None => true,
                Some((bi, bl, bv)) => ii < *bi || (ii == *bi && (luts < *bl || (luts == *bl && idx < *bv))),
            };
            if better {
                best = Some((ii, luts, idx.clone()));
            }
        }
        // odometer, last layer fastest
        let mut pos = table.len();
        loop {
            if pos == 0 {
                return finish(model, &table, best, profile, coeffs, clock_mhz);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < table[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

#[allow(clippy::type_complexity)]
fn finish<T: Scalar>(
    model: &ModelGraph<T>,
    table: &[Vec<(Option<LayerFold>, u64, T)>],
    best: Option<(u64, T, Vec<usize>)>,
    profile: Option<&SparsityProfile<T>>,
    coeffs: &CostCoefficients<T>,
    clock_mhz: T,
) -> Result<Option<(FoldingConfig<T>, CostEstimate<T>)>> {
    let Some((_, _, choice)) = best else {
        return Ok(None);
    };
    let mut cfg = FoldingConfig::all_ones(model, clock_mhz);
    for ((layer, row), &k) in model.layers().iter().zip(table).zip(&choice) {
        if let Some(fold) = row[k].0 {
            cfg.set(&layer.id, fold);
        }
    }
    let est = estimate(model, &cfg, profile, coeffs)?;
    Ok(Some((cfg, est)))
}

/// Straightforward nested-loop integer forward pass.
#[allow(clippy::needless_range_loop)]
pub fn naive_inference_reference<T: Scalar>(
    model: &ModelGraph<T>,
    masks: Option<&SparsityProfile<T>>,
    plan: &QuantPlan<T>,
    input: &IntTensor,
) -> Result<Vec<i64>> {
    if input.data.len() != model.input_shape().elements() {
        return Err(Error::shape("<input>", "input size does not match the model"));
    }
    let mut x = input.data.clone();
    for layer in model.layers() {
        let (cin, ih, iw) = chw(layer.input_shape);
        let (cout, oh, ow) = chw(layer.output_shape);
        let (kh, kw) = layer.kernel.unwrap_or((1, 1));
        let (sh, sw) = layer.stride;
        let mut y = vec![0i64; layer.output_shape.elements()];
        match layer.kind {
            LayerKind::Conv2D => {
                let spec = plan.get(&layer.id).ok_or_else(|| Error::MissingQuantSpec {
                    layer: layer.id.clone(),
                })?;
                let w = model.weights(layer);
                let mask = masks.and_then(|p| p.mask(&layer.id));
                for o in 0..cout {
                    for r in 0..oh {
                        for c in 0..ow {
                            let mut acc = bias_of(model, layer, spec, o);
                            for ci in 0..cin {
                                for dy in 0..kh {
                                    for dx in 0..kw {
                                        let wi = ((o * cin + ci) * kh + dy) * kw + dx;
                                        if mask.is_some_and(|m| !m[wi]) {
                                            continue;
                                        }
                                        let q = quantize_weights(&[w[wi]], spec)[0];
                                        let xi = (ci * ih + r * sh + dy) * iw + c * sw + dx;
                                        acc += q * x[xi];
                                    }
                                }
                            }
                            y[(o * oh + r) * ow + c] = acc;
                        }
                    }
                }
            }
            LayerKind::FullyConnected => {
                let spec = plan.get(&layer.id).ok_or_else(|| Error::MissingQuantSpec {
                    layer: layer.id.clone(),
                })?;
                let w = model.weights(layer);
                let mask = masks.and_then(|p| p.mask(&layer.id));
                let n_in = x.len();
                for o in 0..y.len() {
                    let mut acc = bias_of(model, layer, spec, o);
                    for i in 0..n_in {
                        let wi = o * n_in + i;
                        if mask.is_some_and(|m| !m[wi]) {
                            continue;
                        }
                        acc += quantize_weights(&[w[wi]], spec)[0] * x[i];
                    }
                    y[o] = acc;
                }
            }
            LayerKind::MaxPool2D => {
                for ch in 0..cout {
                    for r in 0..oh {
                        for c in 0..ow {
                            let mut m = i64::MIN;
                            for dy in 0..kh {
                                for dx in 0..kw {
                                    m = m.max(x[(ch * ih + r * sh + dy) * iw + c * sw + dx]);
                                }
                            }
                            y[(ch * oh + r) * ow + c] = m;
                        }
                    }
                }
            }
            LayerKind::Threshold => {
                let th = model.thresholds(layer).ok_or_else(|| Error::MissingQuantSpec {
                    layer: layer.id.clone(),
                })?;
                for ch in 0..cout {
                    for p in 0..oh * ow {
                        let i = ch * oh * ow + p;
                        y[i] = apply_thresholds(x[i], th.channel(ch));
                    }
                }
            }
        }
        x = y;
    }
    Ok(x)
}

fn chw(s: Shape) -> (usize, usize, usize) {
    match s {
        Shape::Vector(n) => (n, 1, 1),
        Shape::Volume {
            channels,
            height,
            width,
        } => (channels, height, width),
    }
}

fn bias_of<T: Scalar>(
    model: &ModelGraph<T>,
    layer: &crate::model::LayerNode<T>,
    spec: &crate::quant::QuantSpec<T>,
    o: usize,
) -> i64 {
    model.bias(layer).map_or(0, |b| {
        (b[o] / spec.weight_scale).round_half_even().to_i64().unwrap_or(0)
    })
}
