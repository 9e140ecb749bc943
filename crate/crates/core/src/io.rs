//! Flat little-endian `f64` blobs and JSON sidecars.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub fn write_f64<T: Real>(path: &Path, values: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for v in values {
        let v = v.to_f64().unwrap_or(f64::NAN);
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_f64<T: Real>(path: &Path) -> Result<Vec<T>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!(
            "{}: length {} is not a multiple of 8",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
        .collect())
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<S: DeserializeOwned>(path: &Path) -> Result<S> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Row-major element order of a matrix.
pub fn row_major<T: Real>(m: &DMatrix<T>) -> impl Iterator<Item = T> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)]))
}

pub fn matrix_from_row_major<T: Real>(rows: usize, cols: usize, data: &[T]) -> Result<DMatrix<T>> {
    if data.len() != rows * cols {
        return Err(Error::Format(format!(
            "expected {} values for a {rows}x{cols} matrix, found {}",
            rows * cols,
            data.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

pub(crate) struct Cursor<'a, T> {
    data: &'a [T],
    pos: usize,
}

impl<'a, T: Real> Cursor<'a, T> {
    pub(crate) fn new(data: &'a [T]) -> Self {
        Self { data, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [T]> {
        let end = self.pos + n;
        if end > self.data.len() {
            return Err(Error::Format(format!(
                "blob truncated: wanted {end} values, have {}",
                self.data.len()
            )));
        }
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn vector(&mut self, n: usize) -> Result<DVector<T>> {
        Ok(DVector::from_column_slice(self.take(n)?))
    }

    pub(crate) fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<T>> {
        matrix_from_row_major(rows, cols, self.take(rows * cols)?)
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.pos == self.data.len() {
            Ok(())
        } else {
            Err(Error::Format(format!(
                "{} trailing values in blob",
                self.data.len() - self.pos
            )))
        }
    }
}
