use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::geometry::Geometry;
use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

/// Sound speed on the range x depth grid, m/s, flattened range-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SspGrid<T> {
    pub n_range: usize,
    pub n_depth: usize,
    pub values: DVector<T>,
}

impl<T: Real> SspGrid<T> {
    pub fn new(n_range: usize, n_depth: usize, values: DVector<T>) -> Result<Self> {
        check_dim("ssp grid", n_range * n_depth, values.len())?;
        Ok(Self {
            n_range,
            n_depth,
            values,
        })
    }

    pub fn uniform(n_range: usize, n_depth: usize, c: T) -> Self {
        Self {
            n_range,
            n_depth,
            values: DVector::from_element(n_range * n_depth, c),
        }
    }

    pub fn at(&self, ir: usize, iz: usize) -> T {
        self.values[ir * self.n_depth + iz]
    }

    pub fn check_positive(&self) -> Result<()> {
        check_positive(&self.values)
    }
}

pub(crate) fn check_positive<T: Real>(values: &DVector<T>) -> Result<()> {
    match values
        .iter()
        .position(|&c| !(c > T::zero()) || !c.is_finite())
    {
        None => Ok(()),
        Some(j) => Err(Error::Domain(format!(
            "sound speed must be positive and finite, cell {j} has {}",
            values[j]
        ))),
    }
}

/// Travel times in seconds, indexed by [`Geometry::obs_index`].
#[derive(Clone, Debug, PartialEq)]
pub struct ArrivalTimes<T>(pub DVector<T>);

/// Travel time of every path: the slowness integral `sum(len / c)` over the cells it crosses.
pub fn forward<T: Real>(ssp: &SspGrid<T>, geom: &Geometry) -> Result<ArrivalTimes<T>> {
    forward_values(&ssp.values, geom).map(ArrivalTimes)
}

pub fn forward_values<T: Real>(values: &DVector<T>, geom: &Geometry) -> Result<DVector<T>> {
    check_dim("forward input", geom.n_cells(), values.len())?;
    check_positive(values)?;
    Ok(DVector::from_iterator(
        geom.n_obs(),
        geom.paths().iter().map(|p| {
            p.segments.iter().fold(T::zero(), |acc, &(cell, len)| {
                acc + T::lit(len) / values[cell]
            })
        }),
    ))
}

/// `forward_values` applied to every column of `x`.
pub fn forward_batch<T: Real>(x: &DMatrix<T>, geom: &Geometry) -> Result<DMatrix<T>> {
    let mut out = DMatrix::zeros(geom.n_obs(), x.ncols());
    for (j, col) in x.column_iter().enumerate() {
        out.set_column(j, &forward_values(&col.into_owned(), geom)?);
    }
    Ok(out)
}

/// Adds i.i.d. Gaussian noise of standard deviation `sigma` seconds.
pub fn add_noise<T: Real, R: Rng>(times: &mut ArrivalTimes<T>, sigma: f64, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    for t in times.0.iter_mut() {
        let e: f64 = StandardNormal.sample(rng);
        *t += T::lit(sigma * e);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocean_sim::geometry::{make_geometry, GeometryConfig, PathKind, Position};

    fn pair(kind: PathKind, n_range: usize, n_depth: usize) -> Geometry {
        Geometry::new(
            5000.0,
            1000.0,
            n_range,
            n_depth,
            vec![Position::new(0.0, 500.0)],
            vec![Position::new(5000.0, 500.0)],
            vec![kind],
        )
        .unwrap()
    }

    #[test]
    fn constant_medium_times() {
        let g = pair(PathKind::Direct, 5, 21);
        let t = forward(&SspGrid::uniform(5, 21, 1500.0f64), &g).unwrap();
        assert!((t.0[0] - 5000.0 / 1500.0).abs() < 1e-12);
        let g = pair(PathKind::SurfaceBounce, 5, 21);
        let t = forward(&SspGrid::uniform(5, 21, 1500.0f64), &g).unwrap();
        assert!((t.0[0] - 5099.019513592785 / 1500.0).abs() < 1e-12);
        assert!((t.0[0] - 3.39935).abs() < 1e-5);
    }

    #[test]
    fn rejects_nonpositive_speed() {
        let g = pair(PathKind::Direct, 1, 1);
        let bad = SspGrid::uniform(1, 1, 0.0);
        assert!(matches!(forward(&bad, &g), Err(Error::Domain(_))));
        let bad = SspGrid::uniform(1, 1, -3.0);
        assert!(matches!(forward(&bad, &g), Err(Error::Domain(_))));
    }

    /// Quadrature oracle: midpoint rule on slowness along the segment.
    #[test]
    fn two_layer_matches_quadrature() {
        let g = make_geometry(&GeometryConfig::default()).unwrap();
        let mut ssp = SspGrid::uniform(5, 21, 1550.0);
        // upper half of the depth axis: cells whose centre is above 500 m
        for ir in 0..5 {
            for iz in 0..21 {
                let zc = (iz as f64 + 0.5) * 1000.0 / 21.0;
                if zc < 500.0 {
                    ssp.values[ir * 21 + iz] = 1450.0;
                }
            }
        }
        let t = forward(&ssp, &g).unwrap();
        let dz = 1000.0 / 21.0;
        let slowness = |z: f64| {
            let iz = ((z / dz) as usize).min(20);
            if (iz as f64 + 0.5) * dz < 500.0 {
                1.0 / 1450.0
            } else {
                1.0 / 1550.0
            }
        };
        let n = 10_000_000;
        for (s, src) in g.sources.iter().enumerate() {
            for (r, rcv) in g.receivers.iter().enumerate() {
                let len = (rcv.range - src.range).hypot(rcv.depth - src.depth);
                let q: f64 = (0..n)
                    .map(|k| {
                        let u = (k as f64 + 0.5) / n as f64;
                        slowness(src.depth + u * (rcv.depth - src.depth))
                    })
                    .sum::<f64>()
                    * len
                    / n as f64;
                let got = t.0[g.obs_index(s, r, 0)];
                // midpoint binning error is bounded by one sample per layer crossing
                assert!((got - q).abs() / q < 1e-8, "{got} vs {q}");
            }
        }
    }

    #[test]
    fn f32_and_f64_agree() {
        let g = make_geometry(&GeometryConfig::default()).unwrap();
        let t64 = forward(&SspGrid::uniform(5, 21, 1500.0f64), &g).unwrap();
        let t32 = forward(&SspGrid::uniform(5, 21, 1500.0f32), &g).unwrap();
        for (a, b) in t64.0.iter().zip(t32.0.iter()) {
            assert!((a - f64::from(*b)).abs() / a < 1e-6);
        }
    }
}
