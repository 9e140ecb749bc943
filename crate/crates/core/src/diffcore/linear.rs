use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::Params;
use crate::error::{check_dim, Result};
use crate::scalar::Real;

pub const SIGMA_FLOOR: f64 = 1e-12;

/// Persistent power-iteration vectors; `σ̂ = uᵀ W v`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralState<T: Real> {
    pub u: DVector<T>,
    pub v: DVector<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T: Real> {
    pub w: DMatrix<T>,
    pub b: DVector<T>,
    pub spectral: Option<SpectralState<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearGrad<T: Real> {
    pub w: DMatrix<T>,
    pub b: DVector<T>,
}

impl<T: Real> LinearGrad<T> {
    pub fn zeros_like(layer: &Linear<T>) -> Self {
        Self {
            w: DMatrix::zeros(layer.w.nrows(), layer.w.ncols()),
            b: DVector::zeros(layer.b.len()),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.w += &other.w;
        self.b += &other.b;
    }
}

fn normalized<T: Real>(v: DVector<T>) -> DVector<T> {
    let n = v.norm();
    if n > T::lit(SIGMA_FLOOR) {
        v / n
    } else {
        v
    }
}

impl<T: Real> Linear<T> {
    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn init<R: Rng>(n_in: usize, n_out: usize, spectral: bool, rng: &mut R) -> Self {
        let bound = 1.0 / (n_in.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let w = DMatrix::from_fn(n_out, n_in, |_, _| T::lit(dist.sample(rng)));
        let b = DVector::from_fn(n_out, |_, _| T::lit(dist.sample(rng)));
        let mut layer = Self {
            w,
            b,
            spectral: None,
        };
        if spectral {
            layer.enable_spectral(rng);
        }
        layer
    }

    pub fn from_parts(w: DMatrix<T>, b: DVector<T>) -> Result<Self> {
        check_dim("bias", w.nrows(), b.len())?;
        Ok(Self {
            w,
            b,
            spectral: None,
        })
    }

    /// Attaches power-iteration state from a random start and converges it.
    pub fn enable_spectral<R: Rng>(&mut self, rng: &mut R) {
        let u = DVector::from_fn(self.w.nrows(), |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            T::lit(z)
        });
        let u = normalized(u);
        let v = normalized(self.w.tr_mul(&u));
        self.spectral = Some(SpectralState { u, v });
        self.power_iterate(100);
    }

    pub fn n_in(&self) -> usize {
        self.w.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.w.nrows()
    }

    pub fn power_iterate(&mut self, iters: usize) {
        let w = &self.w;
        if let Some(st) = self.spectral.as_mut() {
            for _ in 0..iters {
                st.v = normalized(w.tr_mul(&st.u));
                st.u = normalized(w * &st.v);
            }
        }
    }

    /// Runs at least `min_iters` iterations, then continues until σ̂ changes by
    /// less than `tol` relative, up to `max_iters` in total. When that cap is
    /// reached first, `u` and `v` are reset to the exact top singular pair.
    /// Returns whether the iteration converged on its own.
    pub fn power_iterate_until(&mut self, min_iters: usize, tol: f64, max_iters: usize) -> bool {
        if self.spectral.is_none() {
            return true;
        }
        self.power_iterate(min_iters);
        let mut done = min_iters;
        let mut prev = self.sigma().unwrap_or(T::zero());
        while done < max_iters {
            self.power_iterate(1);
            done += 1;
            let s = self.sigma().unwrap_or(T::zero());
            if (s - prev).abs() <= T::lit(tol) * s {
                return true;
            }
            prev = s;
        }
        self.sync_exact();
        false
    }

    /// Sets `u`, `v` to the leading singular vectors, keeping their signs
    /// aligned with the current state.
    pub fn sync_exact(&mut self) {
        let Some(st) = self.spectral.as_mut() else {
            return;
        };
        let svd = self.w.clone().svd(true, true);
        let (Some(u), Some(vt)) = (svd.u, svd.v_t) else {
            return;
        };
        let k = svd.singular_values.imax();
        let mut nu = u.column(k).into_owned();
        let mut nv = vt.row(k).transpose();
        if nu.dot(&st.u) < T::zero() {
            nu = -nu;
            nv = -nv;
        }
        st.u = nu;
        st.v = nv;
    }

    /// Current σ̂, floored; `None` without spectral normalization.
    pub fn sigma(&self) -> Option<T> {
        self.spectral
            .as_ref()
            .map(|st| st.u.dot(&(&self.w * &st.v)).max(T::lit(SIGMA_FLOOR)))
    }

    pub fn effective_weight(&self) -> DMatrix<T> {
        match self.sigma() {
            Some(s) if s > T::lit(SIGMA_FLOOR) => &self.w / s,
            _ => self.w.clone(),
        }
    }

    pub fn forward(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_dim("linear input", self.n_in(), x.nrows())?;
        let mut y = self.effective_weight() * x;
        for mut col in y.column_iter_mut() {
            col += &self.b;
        }
        Ok(y)
    }

    pub fn forward_vec(&self, x: &DVector<T>) -> Result<DVector<T>> {
        check_dim("linear input", self.n_in(), x.len())?;
        Ok(self.effective_weight() * x + &self.b)
    }

    /// Input gradient only.
    pub fn backward_input(&self, dy: &DMatrix<T>) -> DMatrix<T> {
        self.effective_weight().tr_mul(dy)
    }

    /// Returns `(parameter gradients, input gradient)`, summed over the batch.
    /// Through spectral normalization `u` and `v` are held constant, so
    /// `dW = G/σ − (⟨G, W⟩/σ²) u vᵀ` with `G` the gradient of `W_eff`.
    pub fn backward(&self, x: &DMatrix<T>, dy: &DMatrix<T>) -> (LinearGrad<T>, DMatrix<T>) {
        let g = dy * x.transpose();
        let db = dy.column_sum();
        let dx = self.backward_input(dy);
        let dw = match (self.sigma(), &self.spectral) {
            (Some(s), Some(st)) if s > T::lit(SIGMA_FLOOR) => {
                let inner = g.dot(&self.w);
                &g / s - (&st.u * st.v.transpose()) * (inner / (s * s))
            }
            _ => g,
        };
        (LinearGrad { w: dw, b: db }, dx)
    }

    /// Largest singular value of the effective weight by full SVD.
    pub fn effective_sigma_max(&self) -> T {
        self.effective_weight()
            .singular_values()
            .iter()
            .copied()
            .fold(T::zero(), |a, b| a.max(b))
    }
}

impl<T: Real> Params<T> for Linear<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![self.w.as_slice(), self.b.as_slice()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![self.w.as_mut_slice(), self.b.as_mut_slice()]
    }
}

impl<T: Real> Params<T> for LinearGrad<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![self.w.as_slice(), self.b.as_slice()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![self.w.as_mut_slice(), self.b.as_mut_slice()]
    }
}
