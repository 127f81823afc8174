mod common;

use common::*;
use proptest::prelude::*;
use sparsefold::prune::{global_magnitude_prune, prune_count};

fn pruned_total(p: &sparsefold::Profile) -> usize {
    p.layers().map(|(_, m)| m.total() - m.nnz).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prunes_exactly_floor_tn(seed in any::<u64>(), target in 0.0f64..0.999) {
        let model = random_inference_net(&mut rng(seed));
        let n = model.total_weights();
        let profile = global_magnitude_prune(&model, target).unwrap();
        prop_assert_eq!(pruned_total(&profile), (target * n as f64).floor() as usize);
        prop_assert_eq!(prune_count(target, n), (target * n as f64).floor() as usize);
    }

    #[test]
    fn masks_nest_under_increasing_targets(seed in any::<u64>(), a in 0.0f64..0.999, b in 0.0f64..0.999) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let model = random_inference_net(&mut rng(seed));
        let loose = global_magnitude_prune(&model, lo).unwrap();
        let tight = global_magnitude_prune(&model, hi).unwrap();
        for (id, m) in tight.layers() {
            let outer = loose.mask(id).unwrap();
            for (i, &kept) in m.mask.iter().enumerate() {
                prop_assert!(!kept || outer[i], "{id}[{i}] kept at {hi} but pruned at {lo}");
            }
        }
    }

    #[test]
    fn kept_weights_dominate_pruned(seed in any::<u64>(), target in 0.0f64..0.999) {
        let model = random_inference_net(&mut rng(seed));
        let profile = global_magnitude_prune(&model, target).unwrap();
        let mut kept_min = f64::INFINITY;
        let mut pruned_max = f64::NEG_INFINITY;
        for l in model.weighted_layers() {
            for (w, &k) in model.weights(l).iter().zip(profile.mask(&l.id).unwrap()) {
                if k { kept_min = kept_min.min(w.abs()) } else { pruned_max = pruned_max.max(w.abs()) }
            }
        }
        prop_assert!(pruned_max <= kept_min);
    }
}

#[test]
fn zero_target_keeps_everything() {
    let model = random_inference_net(&mut rng(9));
    let p = global_magnitude_prune(&model, 0.0).unwrap();
    assert_eq!(pruned_total(&p), 0);
}

#[test]
fn rejects_out_of_range_targets() {
    let model = random_inference_net(&mut rng(9));
    assert!(global_magnitude_prune(&model, 1.0).is_err());
    assert!(global_magnitude_prune(&model, -0.1).is_err());
    assert!(global_magnitude_prune(&model, f64::NAN).is_err());
}
