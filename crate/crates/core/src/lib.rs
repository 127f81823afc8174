//! Sparsity-aware folding exploration for dataflow QNN accelerators.
//!
//! The pipeline prunes a quantized network by global weight magnitude,
//! estimates per-layer cycles and LUTs under a PE/SIMD folding, greedily
//! removes throughput bottlenecks by factor unfolding or by fully unrolling
//! a layer with only its nonzero weights instantiated, and exports the
//! resulting folding plus static sparse-connection maps.
//!
//! All real-valued quantities are generic over [`Scalar`] (`f32` or `f64`);
//! the aliases below fix the common `f64` instantiation.

pub mod cost;
pub mod dse;
pub mod error;
pub mod model;
pub mod oracle;
pub mod prune;
pub mod quant;
pub mod report;
pub mod scalar;
pub mod sparse_map;
pub mod zoo;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Model = model::ModelGraph<f64>;
pub type ModelF32 = model::ModelGraph<f32>;
pub type Profile = prune::SparsityProfile<f64>;
pub type Config = cost::FoldingConfig<f64>;
pub type Coefficients = cost::CostCoefficients<f64>;
pub type Estimate = cost::CostEstimate<f64>;
pub type Report = dse::DseReport<f64>;
