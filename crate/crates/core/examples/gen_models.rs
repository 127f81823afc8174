//! Regenerates the bundled models under `models/` at the workspace root.
//!
//! `cargo run --example gen_models [-- <out_dir>]`

use std::path::PathBuf;

use sparsefold::model::{save_model, WeightStorage};
use sparsefold::zoo::{lenet5, self_labelled_testset, toy2, LENET5_SEED};
use sparsefold::Model;

fn main() -> anyhow::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models"));
    std::fs::create_dir_all(&out)?;

    let lenet: Model = lenet5(LENET5_SEED);
    save_model(&lenet, out.join("lenet5.json"), WeightStorage::External)?;
    let toy: Model = toy2(1);
    save_model(&toy, out.join("toy2.json"), WeightStorage::Inline)?;

    let samples = self_labelled_testset(&lenet, 64, 11);
    let doc: Vec<serde_json::Value> = samples
        .iter()
        .map(|s| serde_json::json!({ "input": nest(&s.input.data, &lenet.input_shape().dims()), "label": s.label }))
        .collect();
    std::fs::write(out.join("lenet5_testset.json"), serde_json::to_string(&doc)? + "\n")?;
    println!("models written to {}", out.display());
    Ok(())
}

/// Reshapes a flat CHW vector into nested arrays.
fn nest(data: &[i64], dims: &[usize]) -> serde_json::Value {
    match dims {
        [] | [_] => serde_json::json!(data),
        [_, rest @ ..] => {
            let inner: usize = rest.iter().product();
            serde_json::Value::Array(data.chunks(inner).map(|c| nest(c, rest)).collect())
        }
    }
}
