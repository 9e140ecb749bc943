use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::regularizer::{regularizer_value_grad, RegularizerConfig};
use super::surrogate::Surrogate;
use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;
use crate::surrogate::NormStats;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    /// Training-split mean.
    #[serde(rename = "avg", alias = "average")]
    Average,
    Tik,
    Lfm,
}

impl InitKind {
    pub const ALL: [Self; 3] = [Self::Average, Self::Lfm, Self::Tik];

    pub fn name(self) -> &'static str {
        match self {
            Self::Average => "avg",
            Self::Tik => "tik",
            Self::Lfm => "lfm",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "avg" | "average" => Ok(Self::Average),
            "tik" => Ok(Self::Tik),
            "lfm" => Ok(Self::Lfm),
            _ => Err(Error::Config(format!("unknown initialization `{name}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NaConfig {
    pub lr: f64,
    pub iters: usize,
    /// Threshold on a sample's normalized forward MSE below which it is frozen.
    pub cutoff: f64,
    pub optimize_in_subspace: bool,
    pub init: InitKind,
}

impl Default for NaConfig {
    fn default() -> Self {
        Self {
            lr: 50.0,
            iters: 1000,
            cutoff: 1e-2,
            optimize_in_subspace: false,
            init: InitKind::Average,
        }
    }
}

impl NaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr > 0.0 && self.cutoff >= 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid inversion settings {self:?}"
            )))
        }
    }
}

/// Batched inversion output; per-sample vectors are indexed by column.
#[derive(Clone, Debug, PartialEq)]
pub struct InversionResult<T: Real> {
    /// Raw-unit estimates, one column per sample.
    pub x_hat: DMatrix<T>,
    pub z_hat: Option<DMatrix<T>>,
    /// Mean objective over the batch at every iteration.
    pub trace: Vec<f64>,
    pub iterations: Vec<usize>,
    pub cutoff_hit: Vec<bool>,
    pub diverged: Vec<bool>,
    /// Normalized forward MSE of the returned estimate.
    pub final_misfit: Vec<f64>,
    pub wall_time_s: f64,
}

/// Grid shape used by the regularizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridShape {
    pub n_range: usize,
    pub n_depth: usize,
}

fn f64_of<T: Real>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

fn column_mse<T: Real>(r: &DMatrix<T>, j: usize) -> T {
    r.column(j).norm_squared() / T::lit(r.nrows().max(1) as f64)
}

/// Gradient descent on `½ mean(G(x̃) − ỹ)² + R(x)` for every column of
/// `y_obs`, optionally through the surrogate's decoder. Inputs and outputs
/// are raw units; the surrogate works in normalized coordinates.
#[allow(clippy::too_many_arguments)]
pub fn neural_adjoint<T: Real>(
    surrogate: &dyn Surrogate<T>,
    stats: &NormStats<T>,
    grid: GridShape,
    y_obs: &DMatrix<T>,
    x_init: &DMatrix<T>,
    cfg: &NaConfig,
    reg: &RegularizerConfig,
) -> Result<InversionResult<T>> {
    cfg.validate()?;
    reg.validate()?;
    let start = Instant::now();
    check_dim("observation rows", surrogate.n_obs(), y_obs.nrows())?;
    check_dim("initial estimate rows", surrogate.n_cells(), x_init.nrows())?;
    check_dim("initial estimates", y_obs.ncols(), x_init.ncols())?;
    let b = y_obs.ncols();
    let y = stats.normalize_y(y_obs)?;
    let x0 = stats.normalize_x(x_init)?;
    let coder = if cfg.optimize_in_subspace {
        Some(
            surrogate
                .subspace()
                .ok_or_else(|| Error::Config("surrogate has no latent subspace".into()))?,
        )
    } else {
        None
    };
    let decode = |v: &DMatrix<T>| -> Result<DMatrix<T>> {
        match coder {
            Some((_, dec)) => dec.forward(v),
            None => Ok(v.clone()),
        }
    };
    let mut v = match coder {
        Some((enc, _)) => enc.forward(&x0)?,
        None => x0,
    };
    let n_obs = T::lit(surrogate.n_obs() as f64);
    let lr = T::lit(cfg.lr);
    let cutoff = T::lit(cfg.cutoff);
    let half = T::lit(0.5);

    let mut active: Vec<bool> = vec![true; b];
    let mut cutoff_hit = vec![false; b];
    let mut diverged = vec![false; b];
    let mut iterations = vec![0usize; b];
    let mut objective = vec![0.0f64; b];
    let mut trace = Vec::with_capacity(cfg.iters);

    for _ in 0..cfg.iters {
        let ids: Vec<usize> = (0..b).filter(|&j| active[j]).collect();
        if ids.is_empty() {
            break;
        }
        let vs = v.select_columns(&ids);
        let xs = decode(&vs)?;
        let r = surrogate.predict(&xs, &ids)? - y.select_columns(&ids);
        let raw = stats.denormalize_x(&xs)?;
        let mut grad_x = DMatrix::zeros(xs.nrows(), ids.len());
        let mut step: Vec<usize> = Vec::with_capacity(ids.len());
        for (k, &j) in ids.iter().enumerate() {
            let mse = column_mse(&r, k);
            let (rv, rg) = regularizer_value_grad(
                &raw.column(k).into_owned(),
                reg,
                grid.n_range,
                grid.n_depth,
            )?;
            let obj = half * mse + rv;
            objective[j] = f64_of(obj);
            if !objective[j].is_finite() {
                active[j] = false;
                diverged[j] = true;
            } else if mse < cutoff {
                active[j] = false;
                cutoff_hit[j] = true;
            } else {
                grad_x.set_column(k, &rg.component_mul(&stats.x_std));
                step.push(k);
            }
        }
        trace.push(objective.iter().sum::<f64>() / b.max(1) as f64);
        if step.is_empty() {
            continue;
        }
        let r = r.select_columns(&step);
        let xs = xs.select_columns(&step);
        let step_ids: Vec<usize> = step.iter().map(|&k| ids[k]).collect();
        let mut gx = surrogate.input_vjp(&xs, &(r / n_obs), &step_ids)?;
        gx += grad_x.select_columns(&step);
        let gv = match coder {
            Some((_, dec)) => dec.backward_input(&gx),
            None => gx,
        };
        for (k, &j) in step_ids.iter().enumerate() {
            let mut col = v.column_mut(j);
            col.axpy(-lr, &gv.column(k), T::one());
            iterations[j] += 1;
        }
    }

    let x_final = decode(&v)?;
    let all: Vec<usize> = (0..b).collect();
    let r = surrogate.predict(&x_final, &all)? - &y;
    let final_misfit = (0..b).map(|j| f64_of(column_mse(&r, j))).collect();
    Ok(InversionResult {
        x_hat: stats.denormalize_x(&x_final)?,
        z_hat: coder.map(|_| v),
        trace,
        iterations,
        cutoff_hit,
        diverged,
        final_misfit,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
