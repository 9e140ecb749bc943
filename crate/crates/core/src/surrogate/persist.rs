use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::norm::NormStats;
use super::petal::{Ensemble, Petal};
use crate::diffcore::{
    load_checkpoint, save_checkpoint, Checkpoint, Linear, SpectralState, TensorSpec,
};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Petal {
        n_cells: usize,
        n_obs: usize,
        latent_dim: usize,
        n_refs: usize,
    },
    Mlp {
        n_cells: usize,
        n_obs: usize,
        hidden: Vec<usize>,
    },
}

/// A trained surrogate together with the statistics it was trained under.
#[derive(Clone, Debug, PartialEq)]
pub enum SavedModel<T: Real> {
    Petal(Petal<T>, NormStats<T>),
    Mlp(Mlp<T>, NormStats<T>),
}

struct Writer<'a, T> {
    specs: Vec<(TensorSpec, &'a [T])>,
}

impl<'a, T: Real> Writer<'a, T> {
    fn push(&mut self, name: String, shape: Vec<usize>, data: &'a [T]) {
        self.specs.push((TensorSpec { name, shape }, data));
    }

    fn matrix(&mut self, name: String, m: &'a DMatrix<T>) {
        self.push(name, vec![m.nrows(), m.ncols()], m.as_slice());
    }

    fn vector(&mut self, name: String, v: &'a DVector<T>) {
        self.push(name, vec![v.len()], v.as_slice());
    }

    fn layer(&mut self, name: &str, l: &'a Linear<T>) {
        self.matrix(format!("{name}.w"), &l.w);
        self.vector(format!("{name}.b"), &l.b);
        if let Some(st) = &l.spectral {
            self.vector(format!("{name}.u"), &st.u);
            self.vector(format!("{name}.v"), &st.v);
        }
    }

    fn stats(&mut self, s: &'a NormStats<T>) {
        self.vector("x_mean".into(), &s.x_mean);
        self.vector("x_std".into(), &s.x_std);
        self.vector("y_mean".into(), &s.y_mean);
        self.vector("y_std".into(), &s.y_std);
    }
}

fn shape<T: Real>(ck: &Checkpoint<T>, name: &str) -> Result<Vec<usize>> {
    ck.tensors
        .iter()
        .find(|(s, _)| s.name == name)
        .map(|(s, _)| s.shape.clone())
        .ok_or_else(|| Error::Format(format!("checkpoint has no tensor `{name}`")))
}

fn matrix<T: Real>(ck: &Checkpoint<T>, name: &str) -> Result<DMatrix<T>> {
    let s = shape(ck, name)?;
    if s.len() != 2 {
        return Err(Error::Format(format!("tensor `{name}` is not a matrix")));
    }
    Ok(DMatrix::from_column_slice(s[0], s[1], ck.get(name)?))
}

fn vector<T: Real>(ck: &Checkpoint<T>, name: &str) -> Result<DVector<T>> {
    Ok(DVector::from_column_slice(ck.get(name)?))
}

fn layer<T: Real>(ck: &Checkpoint<T>, name: &str) -> Result<Linear<T>> {
    let mut l = Linear::from_parts(
        matrix(ck, &format!("{name}.w"))?,
        vector(ck, &format!("{name}.b"))?,
    )?;
    if ck.get(&format!("{name}.u")).is_ok() {
        l.spectral = Some(SpectralState {
            u: vector(ck, &format!("{name}.u"))?,
            v: vector(ck, &format!("{name}.v"))?,
        });
    }
    Ok(l)
}

fn stats<T: Real>(ck: &Checkpoint<T>) -> Result<NormStats<T>> {
    Ok(NormStats {
        x_mean: vector(ck, "x_mean")?,
        x_std: vector(ck, "x_std")?,
        y_mean: vector(ck, "y_mean")?,
        y_std: vector(ck, "y_std")?,
    })
}

impl<T: Real> Petal<T> {
    /// Self-contained checkpoint: layers, spectral state, statistics and
    /// the embedded references.
    pub fn save(&self, dir: &Path, norm: &NormStats<T>) -> Result<()> {
        let arch = Architecture::Petal {
            n_cells: self.n_cells(),
            n_obs: self.n_obs(),
            latent_dim: self.latent_dim(),
            n_refs: self.ensemble.n_refs(),
        };
        let mut w = Writer { specs: Vec::new() };
        for (name, l) in Self::LAYER_NAMES.iter().zip(self.layers()) {
            w.layer(name, l);
        }
        w.matrix("ensemble.x_ref".into(), &self.ensemble.x_ref);
        w.matrix("ensemble.a_stack".into(), &self.ensemble.a_stack);
        w.vector("ensemble.offset".into(), &self.ensemble.offset);
        w.stats(norm);
        save_checkpoint(dir, serde_json::to_value(arch)?, &w.specs)
    }
}

impl<T: Real> Mlp<T> {
    pub fn save(&self, dir: &Path, norm: &NormStats<T>) -> Result<()> {
        let arch = Architecture::Mlp {
            n_cells: self.n_in(),
            n_obs: self.n_out(),
            hidden: self.hidden_widths(),
        };
        let names: Vec<String> = (0..self.layers.len())
            .map(|k| format!("layer{k}"))
            .collect();
        let mut w = Writer { specs: Vec::new() };
        for (name, l) in names.iter().zip(&self.layers) {
            w.layer(name, l);
        }
        w.stats(norm);
        save_checkpoint(dir, serde_json::to_value(arch)?, &w.specs)
    }
}

pub fn load_model<T: Real>(dir: &Path) -> Result<SavedModel<T>> {
    let ck = load_checkpoint::<T>(dir)?;
    let arch: Architecture = serde_json::from_value(ck.descriptor.clone())?;
    let norm = stats(&ck)?;
    match arch {
        Architecture::Petal { n_obs, .. } => {
            let l: Vec<Linear<T>> = Petal::<T>::LAYER_NAMES
                .iter()
                .map(|n| layer(&ck, n))
                .collect::<Result<_>>()?;
            let [ex, px, py, wout, dy, dx]: [Linear<T>; 6] = l
                .try_into()
                .map_err(|_| Error::Format("layer count".into()))?;
            let ensemble = Ensemble {
                x_ref: matrix(&ck, "ensemble.x_ref")?,
                a_stack: matrix(&ck, "ensemble.a_stack")?,
                offset: vector(&ck, "ensemble.offset")?,
                n_obs,
            };
            Ok(SavedModel::Petal(
                Petal {
                    ex,
                    px,
                    py,
                    wout,
                    dy,
                    dx,
                    ensemble,
                },
                norm,
            ))
        }
        Architecture::Mlp { hidden, .. } => {
            let layers = (0..=hidden.len())
                .map(|k| layer(&ck, &format!("layer{k}")))
                .collect::<Result<_>>()?;
            Ok(SavedModel::Mlp(Mlp::from_layers(layers)?, norm))
        }
    }
}
