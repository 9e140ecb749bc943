//! Estimators that recover sound speed from arrival times: gradient descent
//! through a surrogate, classical Gauss-Newton style solvers on the true
//! forward model, and the PCA/Tikhonov linear baseline.

mod classical;
mod metrics;
mod na;
mod regularizer;
mod surrogate;
mod tik;

pub use classical::{
    gauss_newton, gauss_newton_step, levenberg_marquardt, lm_step, regularized_gd, SolveResult,
};
pub use metrics::{mean_rmse, rmse, rmse_columns};
pub use na::{neural_adjoint, GridShape, InitKind, InversionResult, NaConfig};
pub use regularizer::{regularizer_value_grad, RegularizerConfig};
pub use surrogate::{LfmSurrogate, Surrogate, VariantSurrogate};
pub use tik::{pca_fit, tik_solve, tik_solve_batch, PcaBasis};
