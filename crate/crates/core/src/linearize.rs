//! First-order expansions of the travel-time operator around reference
//! sound-speed fields.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::io;
use crate::ocean_sim::{forward_values, Geometry, SspGrid};
use crate::scalar::Real;

/// Default central-difference step, m/s.
pub const FD_STEP: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RefTag {
    pub slice_id: usize,
    pub time_index: usize,
}

impl std::fmt::Display for RefTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "s{:03}_t{:05}", self.slice_id, self.time_index)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceLinearization<T> {
    pub x_ref: DVector<T>,
    pub y_ref: DVector<T>,
    /// `n_obs x n_cells` Jacobian at `x_ref`.
    pub a: DMatrix<T>,
    pub tag: RefTag,
}

/// Closed-form Jacobian: path lengths do not depend on the medium, so
/// `dT_p / dc_j = -len_pj / c_j^2`.
pub fn jacobian_analytic<T: Real>(x_ref: &SspGrid<T>, geom: &Geometry) -> Result<DMatrix<T>> {
    check_dim("jacobian input", geom.n_cells(), x_ref.values.len())?;
    x_ref.check_positive()?;
    let c = &x_ref.values;
    let mut a = DMatrix::zeros(geom.n_obs(), geom.n_cells());
    for (p, path) in geom.paths().iter().enumerate() {
        for &(cell, len) in &path.segments {
            a[(p, cell)] -= T::lit(len) / (c[cell] * c[cell]);
        }
    }
    Ok(a)
}

/// Central differences of an arbitrary map, one column per input coordinate.
pub fn central_difference_jacobian<T, F>(f: F, x: &DVector<T>, h: T) -> Result<DMatrix<T>>
where
    T: Real,
    F: Fn(&DVector<T>) -> Result<DVector<T>> + Sync,
{
    if !(h > T::zero()) {
        return Err(Error::Domain(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let cols: Vec<DVector<T>> = (0..x.len())
        .into_par_iter()
        .map(|j| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            Ok((f(&xp)? - f(&xm)?) / (h + h))
        })
        .collect::<Result<_>>()?;
    let rows = cols.first().map_or(0, |c| c.len());
    Ok(DMatrix::from_fn(rows, x.len(), |i, j| cols[j][i]))
}

pub fn jacobian_fd<T: Real>(x_ref: &SspGrid<T>, geom: &Geometry, h: T) -> Result<DMatrix<T>> {
    x_ref.check_positive()?;
    if let Some(j) = x_ref.values.iter().position(|&c| c - h <= T::zero()) {
        return Err(Error::Domain(format!(
            "step {h} m/s would make cell {j} nonpositive"
        )));
    }
    central_difference_jacobian(|x| forward_values(x, geom), &x_ref.values, h)
}

pub fn build_reference<T: Real>(
    x_ref: &SspGrid<T>,
    geom: &Geometry,
    tag: RefTag,
) -> Result<ReferenceLinearization<T>> {
    Ok(ReferenceLinearization {
        x_ref: x_ref.values.clone(),
        y_ref: forward_values(&x_ref.values, geom)?,
        a: jacobian_analytic(x_ref, geom)?,
        tag,
    })
}

impl<T: Real> ReferenceLinearization<T> {
    pub fn n_obs(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_cells(&self) -> usize {
        self.a.ncols()
    }

    /// `y_ref + A (x - x_ref)`.
    pub fn predict(&self, x: &DVector<T>) -> Result<DVector<T>> {
        check_dim("linearized prediction", self.n_cells(), x.len())?;
        Ok(&self.y_ref + &self.a * (x - &self.x_ref))
    }

    /// `predict` for every column of `x`.
    pub fn predict_batch(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_dim("linearized prediction", self.n_cells(), x.nrows())?;
        let offset = &self.y_ref - &self.a * &self.x_ref;
        let mut y = &self.a * x;
        for mut col in y.column_iter_mut() {
            col += &offset;
        }
        Ok(y)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = RefMeta {
            tag: self.tag,
            n_cells: self.n_cells(),
            n_obs: self.n_obs(),
            dtype: "f64-le".into(),
            layout: "x_ref | y_ref | A (row-major)".into(),
        };
        io::write_json(&dir.join(format!("ref_{}.json", self.tag)), &meta)?;
        let blob = self
            .x_ref
            .iter()
            .copied()
            .chain(self.y_ref.iter().copied())
            .chain(io::row_major(&self.a));
        io::write_f64(&dir.join(format!("ref_{}.f64", self.tag)), blob)
    }

    /// Reads `ref_<tag>.json` / `ref_<tag>.f64` given the json path.
    pub fn load(meta_path: &Path) -> Result<Self> {
        let meta: RefMeta = io::read_json(meta_path)?;
        let blob_path = meta_path.with_extension("f64");
        let data = io::read_f64::<T>(&blob_path)?;
        let mut cur = io::Cursor::new(&data);
        let x_ref = cur.vector(meta.n_cells)?;
        let y_ref = cur.vector(meta.n_obs)?;
        let a = cur.matrix(meta.n_obs, meta.n_cells)?;
        cur.finish()?;
        Ok(Self {
            x_ref,
            y_ref,
            a,
            tag: meta.tag,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RefMeta {
    tag: RefTag,
    n_cells: usize,
    n_obs: usize,
    dtype: String,
    layout: String,
}

/// Loads every `ref_*.json` in a directory, ordered by tag.
pub fn load_references<T: Real>(dir: &Path) -> Result<Vec<ReferenceLinearization<T>>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "json")
                && p.file_name()
                    .is_some_and(|n| n.to_string_lossy().starts_with("ref_"))
        })
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| ReferenceLinearization::load(p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocean_sim::{make_geometry, GeometryConfig, PathKind, Position};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn desk() -> Geometry {
        make_geometry(&GeometryConfig::default()).unwrap()
    }

    fn random_ssp(rng: &mut ChaCha8Rng) -> SspGrid<f64> {
        SspGrid::new(
            5,
            21,
            DVector::from_fn(105, |_, _| rng.random_range(1450.0..1550.0)),
        )
        .unwrap()
    }

    #[test]
    fn one_cell_formula() {
        let g = Geometry::new(
            5000.0,
            1000.0,
            1,
            1,
            vec![Position::new(0.0, 500.0)],
            vec![Position::new(5000.0, 500.0)],
            vec![PathKind::Direct],
        )
        .unwrap();
        let a = jacobian_analytic(&SspGrid::uniform(1, 1, 1500.0f64), &g).unwrap();
        assert!((a[(0, 0)] + 5000.0 / 1500.0f64.powi(2)).abs() < 1e-15);
        assert!((a[(0, 0)] + 2.2222e-3).abs() < 1e-7);
    }

    #[test]
    fn untouched_cells_have_zero_sensitivity() {
        let g = desk();
        let a = jacobian_analytic(&SspGrid::uniform(5, 21, 1500.0f64), &g).unwrap();
        for (p, path) in g.paths().iter().enumerate() {
            let touched: Vec<usize> = path.segments.iter().map(|s| s.0).collect();
            for j in 0..105 {
                if !touched.contains(&j) {
                    assert_eq!(a[(p, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn analytic_matches_finite_differences() {
        let g = desk();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..3 {
            let x = random_ssp(&mut rng);
            let a = jacobian_analytic(&x, &g).unwrap();
            let f = jacobian_fd(&x, &g, FD_STEP).unwrap();
            for (u, v) in a.iter().zip(f.iter()) {
                assert!(
                    (u - v).abs() <= 1e-6 * u.abs().max(v.abs()) + 1e-18,
                    "{u} vs {v}"
                );
            }
        }
    }

    #[test]
    fn fd_exact_on_linear_map() {
        let m = DMatrix::from_fn(3, 4, |i, j| (i as f64 + 1.0) * (j as f64 - 1.5));
        let x = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.5]);
        let jac = central_difference_jacobian(|x| Ok(&m * x), &x, 0.25).unwrap();
        assert!((jac - &m).amax() < 1e-14);
    }

    #[test]
    fn fd_error_is_second_order() {
        let f = |x: &DVector<f64>| Ok(DVector::from_vec(vec![x[0].sin() * x[1].exp()]));
        let x = DVector::from_vec(vec![0.7, -0.2]);
        let exact = [
            0.7f64.cos() * (-0.2f64).exp(),
            0.7f64.sin() * (-0.2f64).exp(),
        ];
        let err = |h: f64| {
            let j = central_difference_jacobian(f, &x, h).unwrap();
            (j[(0, 0)] - exact[0]).abs()
        };
        let ratio = err(0.02) / err(0.01);
        assert!((3.9..4.1).contains(&ratio), "{ratio}");
    }

    #[test]
    fn fd_rejects_bad_steps() {
        let g = desk();
        let x = SspGrid::uniform(5, 21, 1500.0f64);
        assert!(matches!(jacobian_fd(&x, &g, 0.0), Err(Error::Domain(_))));
        assert!(matches!(jacobian_fd(&x, &g, 1500.0), Err(Error::Domain(_))));
    }

    #[test]
    fn reference_reproduces_expansion_point() {
        let g = desk();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_ssp(&mut rng);
        let tag = RefTag {
            slice_id: 2,
            time_index: 299,
        };
        let r = build_reference(&x, &g, tag).unwrap();
        assert_eq!(r.predict(&x.values).unwrap(), r.y_ref);
        assert_eq!(r.y_ref, forward_values(&x.values, &g).unwrap());
        let again = build_reference(&x, &g, tag).unwrap();
        assert_eq!(r.a, again.a);
        assert_eq!(r.tag.to_string(), "s002_t00299");
        assert!(r.predict(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn taylor_remainder_is_second_order() {
        let g = desk();
        let x = SspGrid::new(
            5,
            21,
            DVector::from_fn(105, |i, _| 1480.0 + (i % 21) as f64),
        )
        .unwrap();
        let r = build_reference(
            &x,
            &g,
            RefTag {
                slice_id: 0,
                time_index: 0,
            },
        )
        .unwrap();
        // smooth perturbation, 5 m/s peak
        let delta = DVector::from_fn(105, |i, _| {
            let (ir, iz) = (i / 21, i % 21);
            5.0 * ((ir as f64 * 0.7).cos() * (iz as f64 * 0.3).sin()).clamp(-1.0, 1.0)
        });
        let err = |d: &DVector<f64>| {
            let x1 = &x.values + d;
            (r.predict(&x1).unwrap() - forward_values(&x1, &g).unwrap()).norm()
        };
        let ratio = err(&delta) / err(&(&delta * 0.5));
        assert!((3.5..=4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn persistence_round_trip() {
        let g = desk();
        let dir = tempfile::tempdir().unwrap();
        let x = SspGrid::uniform(5, 21, 1500.0f64);
        let r = build_reference(
            &x,
            &g,
            RefTag {
                slice_id: 1,
                time_index: 7,
            },
        )
        .unwrap();
        r.save(dir.path()).unwrap();
        let back = load_references::<f64>(dir.path()).unwrap();
        assert_eq!(back, vec![r]);
    }

    proptest::proptest! {
        #[test]
        fn prediction_is_affine(alpha in 0.0f64..1.0, s1 in 0u64..1000, s2 in 0u64..1000) {
            let g = desk();
            let mut rng = ChaCha8Rng::seed_from_u64(s1);
            let r = build_reference(&random_ssp(&mut rng), &g, RefTag { slice_id: 0, time_index: 0 }).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(s2);
            let x1 = random_ssp(&mut rng).values;
            let x2 = random_ssp(&mut rng).values;
            let mix = &x1 * alpha + &x2 * (1.0 - alpha);
            let lhs = r.predict(&mix).unwrap();
            let rhs = r.predict(&x1).unwrap() * alpha + r.predict(&x2).unwrap() * (1.0 - alpha);
            proptest::prop_assert!((lhs - rhs).amax() < 1e-12);
        }
    }
}
