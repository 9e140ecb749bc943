use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::forward::SspGrid;
use super::geometry::Geometry;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Real;

/// Hard physical envelope every generated sound speed stays inside, m/s.
pub const SSP_BOUNDS: (f64, f64) = (1400.0, 1600.0);

/// Synthetic ocean: depth-only background plus AR(1)-driven smooth modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_series: usize,
    pub n_snapshots: usize,
    pub train_end: usize,
    pub val_end: usize,
    /// Background `deep + (surface - deep) * exp(-z / scale)`.
    pub background_surface: f64,
    pub background_deep: f64,
    pub background_scale: f64,
    /// Modes are `cos(pi p r / R) cos(pi q z / Z) exp(-z / depth_decay)` for
    /// `p < range_orders`, `q < depth_orders`.
    pub range_orders: usize,
    pub depth_orders: usize,
    pub mode_depth_decay: f64,
    /// Amplitude bound of mode (p, q) is `amplitude / (1 + amplitude_decay (p + q))`.
    pub amplitude: f64,
    pub amplitude_decay: f64,
    /// AR(1) coefficient.
    pub rho: f64,
    /// Per-step innovation half-width as a fraction of the mode's amplitude bound.
    pub innovation: f64,
    /// Probability that a mode is frozen at zero in a series until `train_end`.
    pub dormant_fraction: f64,
    /// Largest admissible per-cell change between consecutive snapshots, m/s.
    pub max_cell_step: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_series: 10,
            n_snapshots: 440,
            train_end: 300,
            val_end: 360,
            background_surface: 1510.0,
            background_deep: 1490.0,
            background_scale: 250.0,
            range_orders: 2,
            depth_orders: 4,
            mode_depth_decay: 400.0,
            amplitude: 20.0,
            amplitude_decay: 0.5,
            rho: 0.999,
            innovation: 0.05,
            dormant_fraction: 0.3,
            max_cell_step: 20.0,
        }
    }
}

impl GeneratorConfig {
    pub fn n_modes(&self) -> usize {
        self.range_orders * self.depth_orders
    }

    fn mode_orders(&self) -> Vec<(usize, usize)> {
        (0..self.range_orders)
            .flat_map(|p| (0..self.depth_orders).map(move |q| (p, q)))
            .collect()
    }

    fn amplitude_bounds(&self) -> Vec<f64> {
        self.mode_orders()
            .iter()
            .map(|&(p, q)| self.amplitude / (1.0 + self.amplitude_decay * (p + q) as f64))
            .collect()
    }

    pub fn background(&self, depth: f64) -> f64 {
        self.background_deep
            + (self.background_surface - self.background_deep)
                * (-depth / self.background_scale).exp()
    }

    /// Worst-case per-cell change between consecutive snapshots.
    pub fn step_bound(&self) -> f64 {
        self.amplitude_bounds()
            .iter()
            .map(|a| a * ((1.0 - self.rho).abs() + self.innovation))
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_end > 0
            && self.train_end <= self.val_end
            && self.val_end <= self.n_snapshots)
        {
            return Err(Error::Config(format!(
                "split boundaries must satisfy 0 < train_end <= val_end <= n_snapshots, got {} / {} / {}",
                self.train_end, self.val_end, self.n_snapshots
            )));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!(
                "rho must lie in [0, 1], got {}",
                self.rho
            )));
        }
        if self.innovation < 0.0 || self.amplitude < 0.0 || self.amplitude_decay < 0.0 {
            return Err(Error::Config(
                "innovation and amplitudes must be nonnegative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.dormant_fraction) {
            return Err(Error::Config("dormant_fraction must lie in [0, 1]".into()));
        }
        if !(self.background_scale > 0.0 && self.mode_depth_decay > 0.0) {
            return Err(Error::Config("depth scales must be positive".into()));
        }
        let swing: f64 = if self.n_modes() > 0 {
            self.amplitude_bounds().iter().sum()
        } else {
            0.0
        };
        let lo = self.background_deep.min(self.background_surface) - swing;
        let hi = self.background_deep.max(self.background_surface) + swing;
        if lo <= 0.0 {
            return Err(Error::Config(format!(
                "mode amplitudes can drive sound speed to {lo} m/s (must stay positive)"
            )));
        }
        if lo < SSP_BOUNDS.0 || hi > SSP_BOUNDS.1 {
            return Err(Error::Config(format!(
                "sound speed could reach [{lo}, {hi}] m/s, outside [{}, {}]",
                SSP_BOUNDS.0, SSP_BOUNDS.1
            )));
        }
        let step = self.step_bound();
        if step > self.max_cell_step {
            return Err(Error::Config(format!(
                "per-snapshot drift bound {step} m/s exceeds max_cell_step {}",
                self.max_cell_step
            )));
        }
        Ok(())
    }
}

/// Time series of sound-speed snapshots for one ocean slice.
#[derive(Clone, Debug, PartialEq)]
pub struct SspSeries<T> {
    pub slice_id: usize,
    pub n_range: usize,
    pub n_depth: usize,
    /// One snapshot per column.
    pub snapshots: DMatrix<T>,
    pub train_end: usize,
    pub val_end: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl<T: Real> SspSeries<T> {
    pub fn len(&self) -> usize {
        self.snapshots.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self, t: usize) -> SspGrid<T> {
        SspGrid {
            n_range: self.n_range,
            n_depth: self.n_depth,
            values: self.snapshots.column(t).into_owned(),
        }
    }

    pub fn split_range(&self, split: Split) -> std::ops::Range<usize> {
        match split {
            Split::Train => 0..self.train_end,
            Split::Val => self.train_end..self.val_end,
            Split::Test => self.val_end..self.len(),
        }
    }

    pub fn split(&self, split: Split) -> DMatrix<T> {
        let r = self.split_range(split);
        self.snapshots.columns(r.start, r.len()).into_owned()
    }
}

fn mode_fields(gen: &GeneratorConfig, geom: &Geometry) -> Vec<DVector<f64>> {
    let (dr, dz) = (geom.cell_range(), geom.cell_depth());
    gen.mode_orders()
        .into_iter()
        .map(|(p, q)| {
            let mut phi = DVector::from_fn(geom.n_cells(), |idx, _| {
                let (ir, iz) = (idx / geom.n_depth, idx % geom.n_depth);
                let r = (ir as f64 + 0.5) * dr;
                let z = (iz as f64 + 0.5) * dz;
                (PI * p as f64 * r / geom.range_extent).cos()
                    * (PI * q as f64 * z / geom.depth_extent).cos()
                    * (-z / gen.mode_depth_decay).exp()
            });
            let peak = phi.amax();
            if peak > 0.0 {
                phi /= peak;
            }
            phi
        })
        .collect()
}

fn background_field(gen: &GeneratorConfig, geom: &Geometry) -> DVector<f64> {
    let dz = geom.cell_depth();
    DVector::from_fn(geom.n_cells(), |idx, _| {
        gen.background((((idx % geom.n_depth) as f64) + 0.5) * dz)
    })
}

/// Generates one slice. Deterministic in `(seed, slice_id)`.
pub fn sample_ssp_series<T: Real>(
    gen: &GeneratorConfig,
    geom: &Geometry,
    seed: u64,
    slice_id: usize,
) -> Result<SspSeries<T>> {
    gen.validate()?;
    let mut rng = rng::stream(seed, &format!("ssp-series-{slice_id}"));
    let modes = mode_fields(gen, geom);
    let bounds = gen.amplitude_bounds();
    let background = background_field(gen, geom);
    let k = modes.len();

    let dormant: Vec<bool> = (0..k)
        .map(|_| rng.random::<f64>() < gen.dormant_fraction)
        .collect();
    let mut amps: Vec<f64> = (0..k)
        .map(|i| {
            let u: f64 = rng.random_range(-0.5..=0.5);
            if dormant[i] {
                0.0
            } else {
                u * bounds[i]
            }
        })
        .collect();

    let mut snapshots = DMatrix::zeros(geom.n_cells(), gen.n_snapshots);
    for t in 0..gen.n_snapshots {
        if t > 0 {
            for i in 0..k {
                let u: f64 = rng.random_range(-1.0..=1.0);
                let active = !(dormant[i] && t < gen.train_end);
                let kick = if active {
                    gen.innovation * bounds[i] * u
                } else {
                    0.0
                };
                amps[i] = (gen.rho * amps[i] + kick).clamp(-bounds[i], bounds[i]);
            }
        }
        let mut c = background.clone();
        for (a, phi) in amps.iter().zip(&modes) {
            c.axpy(*a, phi, 1.0);
        }
        snapshots.set_column(t, &c.map(T::lit));
    }
    Ok(SspSeries {
        slice_id,
        n_range: geom.n_range,
        n_depth: geom.n_depth,
        snapshots,
        train_end: gen.train_end,
        val_end: gen.val_end,
    })
}

/// Every slice of the synthetic ocean.
pub fn sample_dataset<T: Real>(
    gen: &GeneratorConfig,
    geom: &Geometry,
    seed: u64,
) -> Result<Vec<SspSeries<T>>> {
    (0..gen.n_series)
        .map(|s| sample_ssp_series(gen, geom, seed, s))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocean_sim::geometry::{make_geometry, GeometryConfig};

    fn geom() -> Geometry {
        make_geometry(&GeometryConfig::default()).unwrap()
    }

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            n_snapshots: 60,
            train_end: 40,
            val_end: 50,
            ..Default::default()
        }
    }

    #[test]
    fn frozen_dynamics() {
        let gen = GeneratorConfig {
            rho: 1.0,
            innovation: 0.0,
            ..small()
        };
        let s = sample_ssp_series::<f64>(&gen, &geom(), 3, 0).unwrap();
        for t in 1..s.len() {
            assert_eq!(s.snapshots.column(t), s.snapshots.column(0));
        }
    }

    #[test]
    fn no_modes_is_background() {
        let gen = GeneratorConfig {
            range_orders: 0,
            ..small()
        };
        let g = geom();
        let s = sample_ssp_series::<f64>(&gen, &g, 3, 0).unwrap();
        let bg = background_field(&gen, &g);
        for t in 0..s.len() {
            assert_eq!(s.snapshots.column(t).into_owned(), bg);
        }
    }

    #[test]
    fn values_within_envelope_and_steps_bounded() {
        let gen = small();
        let s = sample_ssp_series::<f64>(&gen, &geom(), 11, 2).unwrap();
        assert!(s
            .snapshots
            .iter()
            .all(|&c| (SSP_BOUNDS.0..=SSP_BOUNDS.1).contains(&c)));
        for t in 1..s.len() {
            let step = (s.snapshots.column(t) - s.snapshots.column(t - 1)).amax();
            assert!(step <= gen.max_cell_step && step <= gen.step_bound() + 1e-9);
        }
    }

    #[test]
    fn same_seed_bit_identical() {
        let g = geom();
        let a = sample_ssp_series::<f64>(&small(), &g, 5, 1).unwrap();
        let b = sample_ssp_series::<f64>(&small(), &g, 5, 1).unwrap();
        let c = sample_ssp_series::<f64>(&small(), &g, 6, 1).unwrap();
        assert!(a
            .snapshots
            .iter()
            .zip(b.snapshots.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(a.snapshots, c.snapshots);
    }

    #[test]
    fn rejects_unphysical_amplitudes() {
        let gen = GeneratorConfig {
            amplitude: 2000.0,
            max_cell_step: 1e9,
            ..small()
        };
        assert!(matches!(gen.validate(), Err(Error::Config(m)) if m.contains("positive")));
        let gen = GeneratorConfig {
            amplitude: 80.0,
            max_cell_step: 1e9,
            ..small()
        };
        assert!(matches!(gen.validate(), Err(Error::Config(_))));
        let gen = GeneratorConfig {
            train_end: 55,
            ..small()
        };
        assert!(matches!(gen.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn test_split_drifts_further_than_train() {
        let g = geom();
        let gen = GeneratorConfig::default();
        let bg = background_field(&gen, &g);
        let mean_dev = |m: &DMatrix<f64>| {
            m.column_iter().map(|c| (c - &bg).abs().mean()).sum::<f64>() / m.ncols() as f64
        };
        for seed in [0, 1, 7] {
            let data = sample_dataset::<f64>(&gen, &g, seed).unwrap();
            let train: f64 = data.iter().map(|s| mean_dev(&s.split(Split::Train))).sum();
            let test: f64 = data.iter().map(|s| mean_dev(&s.split(Split::Test))).sum();
            assert!(test > train, "seed {seed}: test {test} <= train {train}");
        }
    }
}
