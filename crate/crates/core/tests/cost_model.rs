mod common;

use common::*;
use rand::Rng;
use sparsefold::cost::{
    divisor_list, estimate, layer_cycles, layer_luts, Divisibility, FoldMode, FoldingConfig, LayerFold,
};
use sparsefold::prune::{global_magnitude_prune, SparsityProfile};
use sparsefold::zoo::{lenet5, LENET5_SEED};
use sparsefold::{Coefficients, Model};

fn lenet() -> Model {
    lenet5(LENET5_SEED)
}

#[test]
fn pe_simd_monotone_over_divisor_pairs() {
    let m = lenet();
    let c = Coefficients::default();
    for l in m.weighted_layers() {
        let pes = divisor_list(l.fan_out());
        let simds = divisor_list(l.fan_in());
        for &p1 in &pes {
            for &s1 in &simds {
                let f1 = LayerFold::folded(p1, s1);
                let cy1 = layer_cycles(l, &f1, Divisibility::Strict).unwrap();
                let lu1: f64 = layer_luts(l, &f1, None, &c).unwrap();
                for &p2 in pes.iter().filter(|&&p| p >= p1) {
                    for &s2 in simds.iter().filter(|&&s| s >= s1) {
                        let f2 = LayerFold::folded(p2, s2);
                        let cy2 = layer_cycles(l, &f2, Divisibility::Strict).unwrap();
                        let lu2: f64 = layer_luts(l, &f2, None, &c).unwrap();
                        assert!(cy2 <= cy1, "{}: cycles rose from {f1:?} to {f2:?}", l.id);
                        assert!(lu2 >= lu1, "{}: luts fell from {f1:?} to {f2:?}", l.id);
                    }
                }
            }
        }
    }
}

#[test]
fn sparse_luts_linear_in_nnz() {
    let m = lenet();
    let c = Coefficients::default();
    let fc1 = m.layer("fc1").unwrap();
    let fold = LayerFold::unrolled(fc1, FoldMode::UnrolledSparse);
    let luts_at = |nnz: usize| -> f64 {
        let mut mask = vec![false; fc1.weight_count()];
        mask[..nnz].iter_mut().for_each(|b| *b = true);
        let p = SparsityProfile::from_masks(&m, [("fc1".to_string(), mask)]).unwrap();
        layer_luts(fc1, &fold, Some(&p), &c).unwrap()
    };
    let base = luts_at(0);
    let slope = luts_at(1) - base;
    assert_eq!(base, c.c_ctrl);
    assert_eq!(slope, c.c_sparse * 4.0);
    for nnz in [2, 17, 1000, 9999, 48_000] {
        assert_eq!(luts_at(nnz), base + slope * nnz as f64);
    }
}

#[test]
fn sparse_layer_without_profile_is_an_error() {
    let m = lenet();
    let fc1 = m.layer("fc1").unwrap();
    let fold = LayerFold::unrolled(fc1, FoldMode::UnrolledSparse);
    assert!(layer_luts::<f64, f64>(fc1, &fold, None, &Coefficients::default()).is_err());
}

#[test]
fn aggregates_follow_layer_costs() {
    let m = lenet();
    let c = Coefficients::default();
    let p = global_magnitude_prune(&m, 0.845).unwrap();
    let mut r = rng(77);
    for _ in 0..50 {
        let mut cfg = FoldingConfig::all_ones(&m, 200.0);
        for l in m.weighted_layers() {
            let fold = match r.gen_range(0..4) {
                0 => LayerFold::unrolled(l, FoldMode::UnrolledSparse),
                1 => LayerFold::unrolled(l, FoldMode::UnrolledDense),
                _ => {
                    let pes = divisor_list(l.fan_out());
                    let simds = divisor_list(l.fan_in());
                    LayerFold::folded(pes[r.gen_range(0..pes.len())], simds[r.gen_range(0..simds.len())])
                }
            };
            cfg.set(&l.id, fold);
        }
        let e = estimate(&m, &cfg, Some(&p), &c).unwrap();
        assert_eq!(e.ii_cycles, e.layers.iter().map(|l| l.cycles).max().unwrap());
        assert_eq!(e.latency_cycles, e.layers.iter().map(|l| l.cycles).sum::<u64>());
        assert_eq!(e.layers[e.bottleneck_index].cycles, e.ii_cycles);
        assert_eq!(e.throughput_fps, 200e6 / e.ii_cycles as f64);
    }
}

/// The identity holds to within one rounding of the product; exact equality
/// is reported separately by the acceptance target.
#[test]
fn throughput_times_ii_is_clock_within_one_ulp() {
    let m = lenet();
    let c = Coefficients::default();
    for l in m.weighted_layers() {
        for &pe in &divisor_list(l.fan_out()) {
            let mut cfg = FoldingConfig::all_ones(&m, 200.0);
            cfg.set(&l.id, LayerFold::folded(pe, 1));
            let e = estimate(&m, &cfg, None, &c).unwrap();
            let prod = e.throughput_fps * e.ii_cycles as f64;
            assert!((prod - e.clock_hz).abs() <= e.clock_hz * f64::EPSILON);
        }
    }
}

#[test]
fn relaxed_folds_use_ceil() {
    let m = lenet();
    let conv2 = m.layer("conv2").unwrap();
    let fold = LayerFold::folded(3, 7);
    assert!(layer_cycles(conv2, &fold, Divisibility::Strict).is_err());
    assert_eq!(layer_cycles(conv2, &fold, Divisibility::Relaxed).unwrap(), 100 * 22 * 6);
}
