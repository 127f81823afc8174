use sha2::{Digest, Sha256};

use crate::scalar::Scalar;

use super::ModelGraph;

/// SHA-256 over the model's structure, quantization parameters and tensors.
///
/// Metadata is excluded. Tensors are hashed as f64 bit patterns so an f32
/// model and its f64 widening digest identically.
pub fn checksum_model<T: Scalar>(model: &ModelGraph<T>) -> String {
    let mut h = Sha256::new();
    let mut field = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    field(model.name().as_bytes());
    field(model.input_shape().to_string().as_bytes());
    for l in model.layers() {
        field(l.id.as_bytes());
        field(l.kind.to_string().as_bytes());
        field(l.output_shape.to_string().as_bytes());
        field(format!("{:?}/{:?}", l.kernel, l.stride).as_bytes());
        field(&[l.weight_bits as u8, l.act_bits as u8, l.prunable as u8]);
        match l.weight_scale {
            Some(s) => field(&s.as_f64().to_le_bytes()),
            None => field(b"-"),
        }
        let tensor = |data: &[T]| -> Vec<u8> { data.iter().flat_map(|x| x.as_f64().to_le_bytes()).collect() };
        if l.is_weighted() {
            field(&tensor(model.weights(l)));
            match model.bias(l) {
                Some(b) => field(&tensor(b)),
                None => field(b"-"),
            }
        }
        if let Some(th) = model.thresholds(l) {
            let bytes: Vec<u8> = th.channels().iter().flatten().flat_map(|t| t.to_le_bytes()).collect();
            field(&bytes);
        }
    }
    hex::encode(h.finalize())
}
