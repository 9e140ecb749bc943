use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    descriptor: serde_json::Value,
    dtype: String,
    /// Matrices are flattened column by column.
    order: String,
    tensors: Vec<TensorSpec>,
}

/// A loaded checkpoint: the architecture descriptor and the named tensors
/// in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub descriptor: serde_json::Value,
    pub tensors: Vec<(TensorSpec, Vec<T>)>,
}

impl<T: Real> Checkpoint<T> {
    pub fn get(&self, name: &str) -> Result<&[T]> {
        self.tensors
            .iter()
            .find(|(s, _)| s.name == name)
            .map(|(_, d)| d.as_slice())
            .ok_or_else(|| Error::Format(format!("checkpoint has no tensor `{name}`")))
    }

    pub fn by_name(&self) -> BTreeMap<&str, &[T]> {
        self.tensors
            .iter()
            .map(|(s, d)| (s.name.as_str(), d.as_slice()))
            .collect()
    }
}

/// Writes `model.json` and `model.f64` into `dir`.
pub fn save_checkpoint<T: Real>(
    dir: &Path,
    descriptor: serde_json::Value,
    tensors: &[(TensorSpec, &[T])],
) -> Result<()> {
    for (spec, data) in tensors {
        if spec.len() != data.len() {
            return Err(Error::Dimension {
                what: "checkpoint tensor",
                expected: spec.len(),
                got: data.len(),
            });
        }
    }
    std::fs::create_dir_all(dir)?;
    let manifest = Manifest {
        descriptor,
        dtype: "f64-le".into(),
        order: "column-major".into(),
        tensors: tensors.iter().map(|(s, _)| s.clone()).collect(),
    };
    io::write_json(&dir.join("model.json"), &manifest)?;
    io::write_f64(
        &dir.join("model.f64"),
        tensors.iter().flat_map(|(_, d)| d.iter().copied()),
    )
}

pub fn load_checkpoint<T: Real>(dir: &Path) -> Result<Checkpoint<T>> {
    let manifest: Manifest = io::read_json(&dir.join("model.json"))?;
    if manifest.dtype != "f64-le" {
        return Err(Error::Format(format!(
            "unsupported dtype {}",
            manifest.dtype
        )));
    }
    let data = io::read_f64::<T>(&dir.join("model.f64"))?;
    let mut cur = io::Cursor::new(&data);
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for spec in manifest.tensors {
        let chunk = cur.take(spec.len())?.to_vec();
        tensors.push((spec, chunk));
    }
    cur.finish()?;
    Ok(Checkpoint {
        descriptor: manifest.descriptor,
        tensors,
    })
}
