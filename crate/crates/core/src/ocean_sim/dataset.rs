//! On-disk layout: one directory per series holding `meta.json`, `ssp.f64`
//! and `times.f64`. Blobs are little-endian `f64`, one snapshot per row.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::forward::{add_noise, forward_values, ArrivalTimes};
use super::generator::{sample_ssp_series, GeneratorConfig, Split, SspSeries};
use super::geometry::{make_geometry, Geometry, GeometryConfig};
use crate::error::{Error, Result};
use crate::io;
use crate::rng;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub geometry: Geometry,
    pub generator: GeneratorConfig,
    pub seed: u64,
    pub slice_id: usize,
    pub train_end: usize,
    pub val_end: usize,
    pub noise_sigma: f64,
    pub dtype: String,
    /// `[n_snapshots, n_cells]`
    pub ssp_shape: [usize; 2],
    /// `[n_snapshots, n_obs]`
    pub times_shape: [usize; 2],
}

/// A generated slice together with its observed arrival times.
#[derive(Clone, Debug)]
pub struct SeriesData<T> {
    pub series: SspSeries<T>,
    /// One observation vector per column, aligned with `series.snapshots`.
    pub times: DMatrix<T>,
    pub noise_sigma: f64,
}

impl<T: Real> SeriesData<T> {
    pub fn split_times(&self, split: Split) -> DMatrix<T> {
        let r = self.series.split_range(split);
        self.times.columns(r.start, r.len()).into_owned()
    }
}

#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub geometry: Geometry,
    pub generator: GeneratorConfig,
    pub seed: u64,
    pub series: Vec<SeriesData<T>>,
}

pub fn generate_dataset<T: Real>(
    geometry: &GeometryConfig,
    generator: &GeneratorConfig,
    seed: u64,
    noise_sigma: f64,
) -> Result<Dataset<T>> {
    let geom = make_geometry(geometry)?;
    let mut series = Vec::with_capacity(generator.n_series);
    for slice in 0..generator.n_series {
        let s = sample_ssp_series::<T>(generator, &geom, seed, slice)?;
        let mut noise_rng = rng::stream(seed, &format!("noise-{slice}"));
        let mut times = DMatrix::zeros(geom.n_obs(), s.len());
        for (t, col) in s.snapshots.column_iter().enumerate() {
            let mut y = ArrivalTimes(forward_values(&col.into_owned(), &geom)?);
            add_noise(&mut y, noise_sigma, &mut noise_rng);
            times.set_column(t, &y.0);
        }
        series.push(SeriesData {
            series: s,
            times,
            noise_sigma,
        });
    }
    Ok(Dataset {
        geometry: geom,
        generator: generator.clone(),
        seed,
        series,
    })
}

fn series_dir(root: &Path, slice: usize) -> PathBuf {
    root.join(format!("series_{slice:03}"))
}

impl<T: Real> Dataset<T> {
    pub fn n_cells(&self) -> usize {
        self.geometry.n_cells()
    }

    pub fn n_obs(&self) -> usize {
        self.geometry.n_obs()
    }

    /// Concatenates one split across all series, series-major.
    pub fn stacked(&self, split: Split) -> (DMatrix<T>, DMatrix<T>) {
        let xs: Vec<_> = self.series.iter().map(|s| s.series.split(split)).collect();
        let ys: Vec<_> = self.series.iter().map(|s| s.split_times(split)).collect();
        (hstack(self.n_cells(), &xs), hstack(self.n_obs(), &ys))
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        for s in &self.series {
            let dir = series_dir(root, s.series.slice_id);
            fs::create_dir_all(&dir)?;
            let meta = SeriesMeta {
                geometry: self.geometry.clone(),
                generator: self.generator.clone(),
                seed: self.seed,
                slice_id: s.series.slice_id,
                train_end: s.series.train_end,
                val_end: s.series.val_end,
                noise_sigma: s.noise_sigma,
                dtype: "f64-le".into(),
                ssp_shape: [s.series.len(), self.n_cells()],
                times_shape: [s.series.len(), self.n_obs()],
            };
            io::write_json(&dir.join("meta.json"), &meta)?;
            // column-major storage of a cells x snapshots matrix is snapshot-major
            io::write_f64(&dir.join("ssp.f64"), s.series.snapshots.iter().copied())?;
            io::write_f64(&dir.join("times.f64"), s.times.iter().copied())?;
        }
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Self> {
        let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_dir()
                    && p.file_name()
                        .is_some_and(|n| n.to_string_lossy().starts_with("series_"))
            })
            .collect();
        dirs.sort();
        if dirs.is_empty() {
            return Err(Error::Format(format!(
                "no series_* directories in {}",
                root.display()
            )));
        }
        let mut series = Vec::with_capacity(dirs.len());
        let mut head: Option<SeriesMeta> = None;
        for dir in dirs {
            let meta: SeriesMeta = io::read_json(&dir.join("meta.json"))?;
            if meta.dtype != "f64-le" {
                return Err(Error::Format(format!("unsupported dtype {}", meta.dtype)));
            }
            let [nt, nc] = meta.ssp_shape;
            let [nt2, no] = meta.times_shape;
            let ssp = io::read_f64::<T>(&dir.join("ssp.f64"))?;
            let times = io::read_f64::<T>(&dir.join("times.f64"))?;
            if ssp.len() != nt * nc || times.len() != nt2 * no || nt != nt2 {
                return Err(Error::Format(format!(
                    "{}: blob sizes disagree with meta.json",
                    dir.display()
                )));
            }
            let geom = meta.geometry.clone().rebuilt()?;
            series.push(SeriesData {
                series: SspSeries {
                    slice_id: meta.slice_id,
                    n_range: geom.n_range,
                    n_depth: geom.n_depth,
                    snapshots: DMatrix::from_column_slice(nc, nt, &ssp),
                    train_end: meta.train_end,
                    val_end: meta.val_end,
                },
                times: DMatrix::from_column_slice(no, nt, &times),
                noise_sigma: meta.noise_sigma,
            });
            head.get_or_insert(meta);
        }
        let head = head.expect("at least one series");
        Ok(Self {
            geometry: head.geometry.rebuilt()?,
            generator: head.generator,
            seed: head.seed,
            series,
        })
    }
}

pub(crate) fn hstack<T: Real>(rows: usize, parts: &[DMatrix<T>]) -> DMatrix<T> {
    let cols: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for p in parts {
        out.columns_mut(at, p.ncols()).copy_from(p);
        at += p.ncols();
    }
    out
}
