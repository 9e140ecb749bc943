use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linearize::ReferenceLinearization;
use crate::scalar::Real;

pub const STD_FLOOR: f64 = 1e-8;

/// Per-coordinate training-split statistics (population std, floored).
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats<T: Real> {
    pub x_mean: DVector<T>,
    pub x_std: DVector<T>,
    pub y_mean: DVector<T>,
    pub y_std: DVector<T>,
}

fn mean_std<T: Real>(data: &DMatrix<T>) -> (DVector<T>, DVector<T>) {
    let k = T::lit(data.ncols() as f64);
    let mean = data.column_sum() / k;
    let std = DVector::from_fn(data.nrows(), |i, _| {
        let var = data
            .row(i)
            .iter()
            .map(|&v| (v - mean[i]) * (v - mean[i]))
            .fold(T::zero(), |a, b| a + b)
            / k;
        var.sqrt().max(T::lit(STD_FLOOR))
    });
    (mean, std)
}

fn scale_cols<T: Real>(data: &DMatrix<T>, f: impl Fn(usize, T) -> T) -> DMatrix<T> {
    DMatrix::from_fn(data.nrows(), data.ncols(), |i, j| f(i, data[(i, j)]))
}

impl<T: Real> NormStats<T> {
    /// Columns of `train_x` / `train_y` are samples.
    pub fn compute(train_x: &DMatrix<T>, train_y: &DMatrix<T>) -> Result<Self> {
        if train_x.ncols() == 0 {
            return Err(Error::Config(
                "cannot compute statistics of an empty training split".into(),
            ));
        }
        check_dim("training targets", train_x.ncols(), train_y.ncols())?;
        let (x_mean, x_std) = mean_std(train_x);
        let (y_mean, y_std) = mean_std(train_y);
        Ok(Self {
            x_mean,
            x_std,
            y_mean,
            y_std,
        })
    }

    pub fn identity(m: usize, n: usize) -> Self {
        Self {
            x_mean: DVector::zeros(m),
            x_std: DVector::from_element(m, T::one()),
            y_mean: DVector::zeros(n),
            y_std: DVector::from_element(n, T::one()),
        }
    }

    pub fn n_cells(&self) -> usize {
        self.x_mean.len()
    }

    pub fn n_obs(&self) -> usize {
        self.y_mean.len()
    }

    pub fn normalize_x(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_dim("sound-speed rows", self.n_cells(), x.nrows())?;
        Ok(scale_cols(x, |i, v| (v - self.x_mean[i]) / self.x_std[i]))
    }

    pub fn denormalize_x(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_dim("sound-speed rows", self.n_cells(), x.nrows())?;
        Ok(scale_cols(x, |i, v| v * self.x_std[i] + self.x_mean[i]))
    }

    pub fn normalize_y(&self, y: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_dim("arrival-time rows", self.n_obs(), y.nrows())?;
        Ok(scale_cols(y, |i, v| (v - self.y_mean[i]) / self.y_std[i]))
    }

    pub fn denormalize_y(&self, y: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_dim("arrival-time rows", self.n_obs(), y.nrows())?;
        Ok(scale_cols(y, |i, v| v * self.y_std[i] + self.y_mean[i]))
    }

    pub fn normalize_x_vec(&self, x: &DVector<T>) -> Result<DVector<T>> {
        check_dim("sound-speed length", self.n_cells(), x.len())?;
        Ok(DVector::from_fn(x.len(), |i, _| {
            (x[i] - self.x_mean[i]) / self.x_std[i]
        }))
    }

    pub fn normalize_y_vec(&self, y: &DVector<T>) -> Result<DVector<T>> {
        check_dim("arrival-time length", self.n_obs(), y.len())?;
        Ok(DVector::from_fn(y.len(), |i, _| {
            (y[i] - self.y_mean[i]) / self.y_std[i]
        }))
    }
}

/// A linearization expressed in normalized coordinates:
/// `Ã = S_y⁻¹ A S_x`, `x̃_ref`, `ỹ_ref`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedReference<T: Real> {
    pub x_ref: DVector<T>,
    pub y_ref: DVector<T>,
    pub a: DMatrix<T>,
}

impl<T: Real> NormalizedReference<T> {
    pub fn predict(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_dim("normalized LFM input", self.a.ncols(), x.nrows())?;
        let offset = &self.y_ref - &self.a * &self.x_ref;
        let mut y = &self.a * x;
        for mut col in y.column_iter_mut() {
            col += &offset;
        }
        Ok(y)
    }
}

pub fn embed_references<T: Real>(
    refs: &[ReferenceLinearization<T>],
    stats: &NormStats<T>,
) -> Result<Vec<NormalizedReference<T>>> {
    refs.iter()
        .map(|r| {
            check_dim("reference cells", stats.n_cells(), r.n_cells())?;
            check_dim("reference observations", stats.n_obs(), r.n_obs())?;
            let a = DMatrix::from_fn(r.n_obs(), r.n_cells(), |i, j| {
                r.a[(i, j)] * stats.x_std[j] / stats.y_std[i]
            });
            Ok(NormalizedReference {
                x_ref: stats.normalize_x_vec(&r.x_ref)?,
                y_ref: stats.normalize_y_vec(&r.y_ref)?,
                a,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linearize::RefTag;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_point_statistics() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0f64, 2.0, 5.0, 5.0]);
        let s = NormStats::compute(&x, &x).unwrap();
        assert_eq!(s.x_mean.as_slice(), &[1.0, 5.0]);
        assert_eq!(s.x_std[0], 1.0);
        assert_eq!(s.x_std[1], STD_FLOOR);
        let n = s.normalize_x(&x).unwrap();
        assert_eq!(n.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
        assert!(NormStats::compute(&DMatrix::<f64>::zeros(2, 0), &DMatrix::zeros(2, 0)).is_err());
    }

    #[test]
    fn normalized_training_set_is_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = DMatrix::from_fn(7, 50, |i, _| {
            1500.0 + i as f64 + rng.random_range(-5.0..5.0)
        });
        let y = DMatrix::from_fn(3, 50, |_, _| rng.random_range(3.0..3.5));
        let s = NormStats::compute(&x, &y).unwrap();
        let xn = s.normalize_x(&x).unwrap();
        assert!(xn.column_sum().amax() / 50.0 < 1e-10);
        assert!((s.denormalize_x(&xn).unwrap() - &x).amax() < 1e-12 * 1500.0);
        let yn = s.normalize_y(&y).unwrap();
        assert!((s.denormalize_y(&yn).unwrap() - &y).amax() < 1e-12);
    }

    #[test]
    fn embedding_commutes_with_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (m, n) = (6, 4);
        let r = ReferenceLinearization {
            x_ref: DVector::from_fn(m, |_, _| rng.random_range(1490.0..1510.0)),
            y_ref: DVector::from_fn(n, |_, _| rng.random_range(3.0..3.4)),
            a: DMatrix::from_fn(n, m, |_, _| rng.random_range(-1e-3..0.0)),
            tag: RefTag {
                slice_id: 0,
                time_index: 0,
            },
        };
        let stats = NormStats {
            x_mean: DVector::from_element(m, 1500.0),
            x_std: DVector::from_fn(m, |_, _| rng.random_range(1.0..10.0)),
            y_mean: DVector::from_element(n, 3.2),
            y_std: DVector::from_fn(n, |_, _| rng.random_range(1e-3..1e-2)),
        };
        let e = embed_references(&[r.clone()], &stats).unwrap().remove(0);
        let x = DVector::from_fn(m, |_, _| rng.random_range(1480.0..1520.0));
        let raw = r.predict(&x).unwrap();
        let xt = stats.normalize_x_vec(&x).unwrap();
        let pred = e
            .predict(&DMatrix::from_column_slice(m, 1, xt.as_slice()))
            .unwrap();
        let back = stats.denormalize_y(&pred).unwrap();
        assert!((back.column(0) - raw).amax() < 1e-10);

        let xr = DMatrix::from_column_slice(m, 1, e.x_ref.as_slice());
        assert!((e.predict(&xr).unwrap().column(0) - &e.y_ref).amax() < 1e-12);

        let unit = embed_references(&[r.clone()], &NormStats::identity(m, n))
            .unwrap()
            .remove(0);
        assert_eq!((unit.a, unit.x_ref, unit.y_ref), (r.a, r.x_ref, r.y_ref));
    }
}
