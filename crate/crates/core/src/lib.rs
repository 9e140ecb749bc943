pub mod diffcore;
pub mod error;
pub mod inversion;
pub mod io;
pub mod linearize;
pub mod ocean_sim;
pub mod rng;
pub mod scalar;
pub mod surrogate;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision aliases for the generic core types.
pub type PetalF64 = surrogate::Petal<f64>;
pub type MlpF64 = surrogate::Mlp<f64>;
pub type DatasetF64 = ocean_sim::Dataset<f64>;
pub type ReferenceF64 = linearize::ReferenceLinearization<f64>;
pub type NormStatsF64 = surrogate::NormStats<f64>;
pub type InversionResultF64 = inversion::InversionResult<f64>;
