use nalgebra::{DMatrix, DVector};

use crate::scalar::Real;

pub const LEAKY_SLOPE: f64 = 0.01;

pub fn leaky_relu<T: Real>(x: &DMatrix<T>, slope: T) -> DMatrix<T> {
    x.map(|v| if v > T::zero() { v } else { v * slope })
}

/// Gates `dy` by the derivative at `x`; at exactly zero the slope is used.
pub fn leaky_relu_backward<T: Real>(x: &DMatrix<T>, dy: &DMatrix<T>, slope: T) -> DMatrix<T> {
    x.zip_map(dy, |v, g| if v > T::zero() { g } else { g * slope })
}

pub fn softmax<T: Real>(s: &DVector<T>) -> DVector<T> {
    if s.is_empty() {
        return s.clone();
    }
    let max = s.max();
    let e = s.map(|v| (v - max).exp());
    let total = e.sum();
    e / total
}

pub fn softmax_columns<T: Real>(s: &DMatrix<T>) -> DMatrix<T> {
    let mut w = s.clone();
    for mut col in w.column_iter_mut() {
        let out = softmax(&col.clone_owned());
        col.copy_from(&out);
    }
    w
}

/// `ds = w ⊙ (dw − ⟨w, dw⟩)`, column by column.
pub fn softmax_backward<T: Real>(w: &DMatrix<T>, dw: &DMatrix<T>) -> DMatrix<T> {
    let mut ds = w.component_mul(dw);
    for (j, mut col) in ds.column_iter_mut().enumerate() {
        let inner = col.sum();
        col -= w.column(j) * inner;
    }
    ds
}
