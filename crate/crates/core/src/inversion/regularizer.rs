use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

/// `λ₂‖x‖² + λ_S(‖Δ_r x‖² + ‖Δ_z x‖²)` on raw-unit grids, forward differences.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegularizerConfig {
    pub l2: f64,
    pub sobolev: f64,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            l2: 1e-7,
            sobolev: 1e-4,
        }
    }
}

impl RegularizerConfig {
    pub const NONE: Self = Self {
        l2: 0.0,
        sobolev: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if self.l2 >= 0.0 && self.sobolev >= 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "regularizer scales must be nonnegative, got {self:?}"
            )))
        }
    }
}

/// Value and gradient for a grid with cell index `ir * n_depth + iz`.
pub fn regularizer_value_grad<T: Real>(
    x: &DVector<T>,
    reg: &RegularizerConfig,
    n_range: usize,
    n_depth: usize,
) -> Result<(T, DVector<T>)> {
    check_dim("regularized grid", n_range * n_depth, x.len())?;
    let (l2, ls) = (T::lit(reg.l2), T::lit(reg.sobolev));
    let two = T::lit(2.0);
    let mut value = l2 * x.norm_squared();
    let mut grad = x * (two * l2);
    if reg.sobolev != 0.0 {
        let mut diff = |a: usize, b: usize| {
            let d = x[b] - x[a];
            value += ls * d * d;
            grad[b] += two * ls * d;
            grad[a] -= two * ls * d;
        };
        for ir in 0..n_range {
            for iz in 0..n_depth {
                let c = ir * n_depth + iz;
                if ir + 1 < n_range {
                    diff(c, c + n_depth);
                }
                if iz + 1 < n_depth {
                    diff(c, c + 1);
                }
            }
        }
    }
    Ok((value, grad))
}
