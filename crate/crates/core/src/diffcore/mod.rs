//! Hand-rolled reverse-mode pieces for the surrogates: dense layers with
//! optional spectral normalization, activations, optimizers, gradient
//! checking and checkpoints.
//!
//! Batches are stored column-wise: a `DMatrix` with one sample per column.

mod activation;
mod checkpoint;
mod gradcheck;
mod linear;
mod optim;

pub use activation::{
    leaky_relu, leaky_relu_backward, softmax, softmax_backward, softmax_columns, LEAKY_SLOPE,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TensorSpec};
pub use gradcheck::{fd_step, grad_check, relative_error, GRAD_CHECK_FLOOR};
pub use linear::{Linear, LinearGrad, SpectralState, SIGMA_FLOOR};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};

/// Uniform access to a model's trainable tensors in a fixed order.
pub trait Params<T> {
    fn tensors(&self) -> Vec<&[T]>;
    fn tensors_mut(&mut self) -> Vec<&mut [T]>;

    fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}
