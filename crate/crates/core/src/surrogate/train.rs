use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpGrad};
use super::petal::{Petal, PetalGrad};
use crate::diffcore::{Optimizer, OptimizerConfig, Params};
use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epoch at which the learning rate is multiplied by `lr_drop_factor`.
    pub lr_drop_epoch: Option<usize>,
    pub lr_drop_factor: f64,
    /// Weight of the reconstruction term (PETAL only).
    pub beta: f64,
    /// Power iterations after every optimizer step; more follow until σ̂
    /// moves by less than `power_tol` relative. A layer still moving after
    /// `power_max_iters` takes its singular pair from an exact SVD.
    pub power_iters: usize,
    pub power_tol: f64,
    pub power_max_iters: usize,
    /// Record the largest singular value of every normalized layer after each step.
    pub audit_spectral: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::petal()
    }
}

impl TrainConfig {
    /// AdamW at 1e-5 for 500 epochs, dropped by 0.2 at epoch 300.
    pub fn petal() -> Self {
        Self {
            optimizer: OptimizerConfig::adamw(1e-5, 0.01),
            epochs: 500,
            batch_size: 32,
            lr_drop_epoch: Some(300),
            lr_drop_factor: 0.2,
            beta: 1.0,
            power_iters: 1,
            power_tol: 1e-9,
            power_max_iters: 50,
            audit_spectral: false,
        }
    }

    /// Adam at 1e-5 for 250 epochs.
    pub fn mlp() -> Self {
        Self {
            optimizer: OptimizerConfig::adam(1e-5),
            epochs: 250,
            lr_drop_epoch: None,
            ..Self::petal()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0
            || self.lr_drop_factor <= 0.0
            || self.beta < 0.0
            || !(self.power_tol >= 0.0)
        {
            return Err(Error::Config(format!("invalid training settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 0 means the initial parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub steps: usize,
    /// Largest effective singular value seen after any step, when audited.
    pub max_effective_sigma: Option<f64>,
    /// Largest relative gap between the power-iteration estimate and the
    /// exact largest singular value, when audited.
    pub max_sigma_estimate_error: Option<f64>,
}

/// Normalized training and validation arrays, one sample per column.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a, T: Real> {
    pub x_train: &'a DMatrix<T>,
    pub y_train: &'a DMatrix<T>,
    pub x_val: &'a DMatrix<T>,
    pub y_val: &'a DMatrix<T>,
}

pub trait Trainable<T: Real>: Params<T> + Clone {
    type Grad: Params<T>;

    fn batch_loss_and_grad(
        &self,
        x: &DMatrix<T>,
        y: &DMatrix<T>,
        cfg: &TrainConfig,
    ) -> Result<(T, Self::Grad)>;

    /// Forward-only validation loss used for model selection.
    fn val_loss(&self, x: &DMatrix<T>, y: &DMatrix<T>) -> Result<T>;

    fn after_step(&mut self, _cfg: &TrainConfig) {}

    fn effective_sigmas(&self) -> Vec<T> {
        Vec::new()
    }

    fn finish(&mut self) {}
}

impl<T: Real> Trainable<T> for Petal<T> {
    type Grad = PetalGrad<T>;

    fn batch_loss_and_grad(
        &self,
        x: &DMatrix<T>,
        y: &DMatrix<T>,
        cfg: &TrainConfig,
    ) -> Result<(T, PetalGrad<T>)> {
        self.loss_and_grad(x, y, T::lit(cfg.beta))
    }

    fn val_loss(&self, x: &DMatrix<T>, y: &DMatrix<T>) -> Result<T> {
        self.forward_mse(x, y)
    }

    fn after_step(&mut self, cfg: &TrainConfig) {
        self.refresh_spectral_until(cfg.power_iters, cfg.power_tol, cfg.power_max_iters);
    }

    fn effective_sigmas(&self) -> Vec<T> {
        self.layers()
            .iter()
            .filter(|l| l.spectral.is_some())
            .map(|l| l.effective_sigma_max())
            .collect()
    }

    fn finish(&mut self) {
        self.refresh_spectral(100);
    }
}

impl<T: Real> Trainable<T> for Mlp<T> {
    type Grad = MlpGrad<T>;

    fn batch_loss_and_grad(
        &self,
        x: &DMatrix<T>,
        y: &DMatrix<T>,
        _cfg: &TrainConfig,
    ) -> Result<(T, MlpGrad<T>)> {
        self.loss_and_grad(x, y)
    }

    fn val_loss(&self, x: &DMatrix<T>, y: &DMatrix<T>) -> Result<T> {
        self.forward_mse(x, y)
    }
}

fn columns<T: Real>(m: &DMatrix<T>, idx: &[usize]) -> DMatrix<T> {
    m.select_columns(idx)
}

/// Minibatch training with best-validation selection. The shuffling order
/// comes from `rng`, so a fixed seed reproduces the run exactly.
pub fn train<T: Real, M: Trainable<T>, R: Rng>(
    model: M,
    data: TrainData<'_, T>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(M, TrainHistory)> {
    cfg.validate()?;
    check_dim("training pairs", data.x_train.ncols(), data.y_train.ncols())?;
    check_dim("validation pairs", data.x_val.ncols(), data.y_val.ncols())?;
    let n_train = data.x_train.ncols();
    if n_train == 0 && cfg.epochs > 0 {
        return Err(Error::Config("cannot train on an empty split".into()));
    }
    let has_val = data.x_val.ncols() > 0;
    let mut model = model;
    let mut opt = Optimizer::<T>::new(cfg.optimizer)?;
    let mut history = TrainHistory::default();
    let score = |m: &M| -> Result<f64> {
        if has_val {
            Ok(m.val_loss(data.x_val, data.y_val)?
                .to_f64()
                .unwrap_or(f64::NAN))
        } else {
            Ok(f64::INFINITY)
        }
    };
    let mut best = model.clone();
    history.best_val_loss = score(&model)?;
    let mut order: Vec<usize> = (0..n_train).collect();
    for epoch in 1..=cfg.epochs {
        if cfg.lr_drop_epoch == Some(epoch - 1) {
            opt.set_lr(opt.config.lr * cfg.lr_drop_factor);
        }
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = columns(data.x_train, chunk);
            let yb = columns(data.y_train, chunk);
            let (loss, grad) = model.batch_loss_and_grad(&xb, &yb, cfg)?;
            let loss = loss.to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite training loss at epoch {epoch}, step {}",
                    history.steps
                )));
            }
            total += loss * chunk.len() as f64;
            opt.step(model.tensors_mut(), grad.tensors())?;
            model.after_step(cfg);
            history.steps += 1;
            if cfg.audit_spectral {
                // sigma_eff = sigma_svd / sigma_hat, so the estimate's relative error is |1 - 1 / sigma_eff|
                let sig: Vec<f64> = model
                    .effective_sigmas()
                    .into_iter()
                    .map(|s| s.to_f64().filter(|v| !v.is_nan()).unwrap_or(f64::INFINITY))
                    .collect();
                let worst = sig.iter().fold(0.0f64, |a, &s| a.max(s));
                let gap = sig
                    .iter()
                    .fold(0.0f64, |a, &s| a.max((1.0 - 1.0 / s).abs()));
                history.max_effective_sigma =
                    Some(history.max_effective_sigma.map_or(worst, |m| m.max(worst)));
                history.max_sigma_estimate_error =
                    Some(history.max_sigma_estimate_error.map_or(gap, |m| m.max(gap)));
            }
        }
        let val = score(&model)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: total / n_train as f64,
            val_loss: val,
            lr: opt.config.lr,
        });
        if !has_val || val < history.best_val_loss {
            history.best_val_loss = val;
            history.best_epoch = epoch;
            best = model.clone();
        }
    }
    best.finish();
    Ok((best, history))
}
