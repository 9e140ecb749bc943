use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Result};
use crate::scalar::Real;

pub fn rmse<T: Real>(x_hat: &DVector<T>, x_true: &DVector<T>) -> Result<T> {
    check_dim("estimate length", x_true.len(), x_hat.len())?;
    Ok(((x_hat - x_true).norm_squared() / T::lit(x_true.len().max(1) as f64)).sqrt())
}

/// Per-column RMSE.
pub fn rmse_columns<T: Real>(x_hat: &DMatrix<T>, x_true: &DMatrix<T>) -> Result<Vec<T>> {
    check_dim("estimate rows", x_true.nrows(), x_hat.nrows())?;
    check_dim("estimate columns", x_true.ncols(), x_hat.ncols())?;
    let m = T::lit(x_true.nrows().max(1) as f64);
    Ok((0..x_true.ncols())
        .map(|j| ((x_hat.column(j) - x_true.column(j)).norm_squared() / m).sqrt())
        .collect())
}

/// Mean of the per-sample RMSEs; NaN for an empty batch.
pub fn mean_rmse<T: Real>(x_hat: &DMatrix<T>, x_true: &DMatrix<T>) -> Result<f64> {
    let per = rmse_columns(x_hat, x_true)?;
    if per.is_empty() {
        return Ok(f64::NAN);
    }
    Ok(per
        .iter()
        .map(|v| v.to_f64().unwrap_or(f64::NAN))
        .sum::<f64>()
        / per.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let x = DVector::from_vec(vec![1.0f64, 2.0, 3.0]);
        assert_eq!(rmse(&x, &x).unwrap(), 0.0);
        assert!((rmse(&x.add_scalar(1.0), &x).unwrap() - 1.0).abs() < 1e-15);
        assert!(rmse(&x, &DVector::zeros(2)).is_err());
        let a = DMatrix::from_row_slice(2, 2, &[0.0f64, 0.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0f64, 3.0, 1.0, 3.0]);
        assert_eq!(rmse_columns(&a, &b).unwrap(), vec![1.0, 3.0]);
        assert_eq!(mean_rmse(&a, &b).unwrap(), 2.0);
    }
}
