use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linearize::ReferenceLinearization;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct PcaBasis<T: Real> {
    pub mean: DVector<T>,
    /// `m x p`, orthonormal columns.
    pub components: DMatrix<T>,
    pub singular_values: DVector<T>,
}

impl<T: Real> PcaBasis<T> {
    pub fn n_components(&self) -> usize {
        self.components.ncols()
    }

    pub fn project(&self, x: &DVector<T>) -> Result<DVector<T>> {
        check_dim("PCA input", self.mean.len(), x.len())?;
        Ok(self.components.tr_mul(&(x - &self.mean)))
    }

    pub fn reconstruct(&self, x: &DVector<T>) -> Result<DVector<T>> {
        Ok(&self.mean + &self.components * self.project(x)?)
    }
}

/// Top-`p` principal directions of the samples (columns), with the
/// largest-magnitude entry of each direction made positive.
pub fn pca_fit<T: Real>(samples: &DMatrix<T>, p: usize) -> Result<PcaBasis<T>> {
    let (m, k) = samples.shape();
    if k == 0 {
        return Err(Error::Config("PCA needs at least one sample".into()));
    }
    let bound = m.min(k - 1);
    if p > bound {
        return Err(Error::Config(format!(
            "{p} components exceed the rank bound {bound}"
        )));
    }
    let mean = samples.column_sum() / T::lit(k as f64);
    if p == 0 {
        return Ok(PcaBasis {
            mean,
            components: DMatrix::zeros(m, 0),
            singular_values: DVector::zeros(0),
        });
    }
    let mut centered = samples.clone();
    for mut c in centered.column_iter_mut() {
        c -= &mean;
    }
    let svd = centered.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut components = DMatrix::zeros(m, p);
    let mut sv = DVector::zeros(p);
    for (slot, &i) in order.iter().take(p).enumerate() {
        let mut c = u.column(i).into_owned();
        let lead = c.iter().copied().fold(
            T::zero(),
            |best, v| if v.abs() > best.abs() { v } else { best },
        );
        if lead < T::zero() {
            c = -c;
        }
        components.set_column(slot, &c);
        sv[slot] = svd.singular_values[i];
    }
    Ok(PcaBasis {
        mean,
        components,
        singular_values: sv,
    })
}

/// Tikhonov-damped least squares in the PCA basis, one column of `y_obs`
/// per sample. `row_weights` scales the residual rows (use `1/σ_y` to
/// balance observations with different spreads).
pub fn tik_solve_batch<T: Real>(
    r: &ReferenceLinearization<T>,
    basis: &PcaBasis<T>,
    y_obs: &DMatrix<T>,
    alpha: T,
    row_weights: Option<&DVector<T>>,
) -> Result<DMatrix<T>> {
    check_dim("observation rows", r.n_obs(), y_obs.nrows())?;
    check_dim("basis cells", r.n_cells(), basis.mean.len())?;
    if alpha < T::zero() {
        return Err(Error::Config(format!(
            "Tikhonov weight must be nonnegative, got {alpha}"
        )));
    }
    let weights = match row_weights {
        Some(w) => {
            check_dim("row weights", r.n_obs(), w.len())?;
            w.clone()
        }
        None => DVector::from_element(r.n_obs(), T::one()),
    };
    let ab = (&r.a * &basis.components).map_with_location(|i, _, v| v * weights[i]);
    let base = &r.y_ref + &r.a * (&basis.mean - &r.x_ref);
    let mut rhs = y_obs.clone();
    for mut c in rhs.column_iter_mut() {
        c -= &base;
        c.component_mul_assign(&weights);
    }
    let p = basis.n_components();
    let coeffs = if p == 0 {
        DMatrix::zeros(0, y_obs.ncols())
    } else if alpha > T::zero() {
        let mut normal = ab.tr_mul(&ab);
        for i in 0..p {
            normal[(i, i)] += alpha;
        }
        let chol = nalgebra::Cholesky::new(normal)
            .ok_or_else(|| Error::Singular("Tikhonov normal matrix".into()))?;
        chol.solve(&ab.tr_mul(&rhs))
    } else {
        let eps = T::default_epsilon() * T::lit(ab.nrows().max(p) as f64) * ab.norm();
        ab.svd(true, true)
            .solve(&rhs, eps)
            .map_err(|e| Error::Singular(e.to_string()))?
    };
    let mut x = &basis.components * coeffs;
    for mut c in x.column_iter_mut() {
        c += &basis.mean;
    }
    Ok(x)
}

pub fn tik_solve<T: Real>(
    r: &ReferenceLinearization<T>,
    basis: &PcaBasis<T>,
    y_obs: &DVector<T>,
    alpha: T,
) -> Result<DVector<T>> {
    let y = DMatrix::from_column_slice(y_obs.len(), 1, y_obs.as_slice());
    Ok(tik_solve_batch(r, basis, &y, alpha, None)?
        .column(0)
        .into_owned())
}
