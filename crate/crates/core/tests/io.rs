mod common;

use std::path::PathBuf;

use common::*;
use sparsefold::cost::{load_config, save_config, FoldMode, FoldingConfig, LayerFold};
use sparsefold::model::{checksum_model, load_model, parse_descriptor, save_model, WeightStorage};
use sparsefold::prune::{global_magnitude_prune, load_profile, save_profile};
use sparsefold::quant::QuantPlan;
use sparsefold::sparse_map::{export_sparse_map, map_file_name, parse_sparse_map, write_sparse_export};
use sparsefold::{Config, Model};

fn models_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

#[test]
fn shipped_models_load() {
    let lenet: Model = load_model(models_dir().join("lenet5.json")).unwrap();
    assert_eq!(lenet.total_weights(), 61_470);
    let toy: Model = load_model(models_dir().join("toy2.json")).unwrap();
    assert_eq!(toy.weighted_layers().count(), 2);
}

#[test]
fn descriptor_round_trips_both_storages() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(21);
    for i in 0..20 {
        let m = random_inference_net(&mut r).cast::<f32>().cast::<f64>();
        for (tag, storage) in [("inline", WeightStorage::Inline), ("ext", WeightStorage::External)] {
            let path = dir.path().join(format!("m{i}_{tag}.json"));
            save_model(&m, &path, storage).unwrap();
            let back: Model = load_model(&path).unwrap();
            assert_eq!(checksum_model(&back), checksum_model(&m), "case {i} {tag}");
            assert_eq!(back, m);
        }
    }
}

#[test]
fn malformed_descriptors_are_rejected() {
    let base = std::path::Path::new(".");
    let cases = [
        r#"{"name":"x","input_shape":[4],"layers":[]}"#,
        r#"{"name":"x","input_shape":[4],"layers":[{"id":"a","kind":"FullyConnected","out_features":2,"weight_bits":4,"act_bits":4,"prunable":true,"weights":[1,2,3]}]}"#,
        r#"{"name":"x","input_shape":[4],"layers":[{"id":"a","kind":"FullyConnected","out_features":1,"weight_bits":40,"act_bits":4,"prunable":true,"weights":[1,2,3,4]}]}"#,
        r#"{"name":"x","input_shape":[4],"layers":[{"id":"a","kind":"Mystery","weight_bits":4,"act_bits":4,"prunable":true}]}"#,
        r#"{"name":"x","input_shape":[4],"layers":[{"id":"a","kind":"FullyConnected","out_features":1,"weight_bits":4,"act_bits":4,"prunable":true,"weights":"file:missing.bin"}]}"#,
    ];
    for (i, text) in cases.iter().enumerate() {
        assert!(parse_descriptor::<f64>(text, base).is_err(), "case {i} accepted");
    }
}

#[test]
fn config_and_profile_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m: Model = load_model(models_dir().join("lenet5.json")).unwrap();
    let sum = checksum_model(&m);
    let mut cfg: Config = FoldingConfig::all_ones(&m, 200.0);
    cfg.set("conv2", LayerFold::folded(8, 25));
    cfg.set(
        "fc1",
        LayerFold::unrolled(m.layer("fc1").unwrap(), FoldMode::UnrolledSparse),
    );
    save_config(&cfg, &sum, dir.path().join("cfg.json")).unwrap();
    let back: Config = load_config(dir.path().join("cfg.json"), &m).unwrap();
    assert_eq!(back, cfg);

    let p = global_magnitude_prune(&m, 0.7).unwrap();
    save_profile(&p, &sum, dir.path().join("p.json")).unwrap();
    assert_eq!(load_profile(dir.path().join("p.json"), &m).unwrap(), p);

    let other: Model = load_model(models_dir().join("toy2.json")).unwrap();
    assert!(load_config::<f64, f64>(dir.path().join("cfg.json"), &other).is_err());
    assert!(load_profile(dir.path().join("p.json"), &other).is_err());
}

#[test]
fn sparse_maps_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let m: Model = load_model(models_dir().join("lenet5.json")).unwrap();
    let p = global_magnitude_prune(&m, 0.845).unwrap();
    let mut cfg: Config = FoldingConfig::all_ones(&m, 200.0);
    for id in ["conv2", "fc3"] {
        cfg.set(id, LayerFold::unrolled(m.layer(id).unwrap(), FoldMode::UnrolledSparse));
    }
    let export = export_sparse_map(&m, &p, &cfg, &QuantPlan::from_model(&m)).unwrap();
    write_sparse_export(&export, dir.path()).unwrap();
    assert_eq!(export.maps.len(), 2);
    for map in &export.maps {
        let text = std::fs::read_to_string(dir.path().join(map_file_name(&map.layer))).unwrap();
        assert_eq!(&parse_sparse_map(&text).unwrap(), map);
    }
}
