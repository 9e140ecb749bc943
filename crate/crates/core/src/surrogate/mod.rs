//! Learned forward surrogates: the attention-weighted LFM ensemble, its
//! ablations, the MLP baseline and the shared training loop.

mod mlp;
mod norm;
mod persist;
mod petal;
mod train;
mod variant;

pub use mlp::{Mlp, MlpGrad};
pub use norm::{embed_references, NormStats, NormalizedReference, STD_FLOOR};
pub use persist::{load_model, Architecture, SavedModel};
pub use petal::{default_latent_dim, Ensemble, Petal, PetalGrad, PetalTrace};
pub use train::{train, EpochRecord, TrainConfig, TrainData, TrainHistory, Trainable};
pub use variant::ModelVariant;
