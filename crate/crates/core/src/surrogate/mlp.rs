use nalgebra::DMatrix;
use rand::Rng;

use crate::diffcore::{leaky_relu, leaky_relu_backward, Linear, LinearGrad, Params, LEAKY_SLOPE};
use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

/// Fully connected baseline: linear layers with leaky-ReLU between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T: Real> {
    pub layers: Vec<Linear<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrad<T: Real> {
    pub layers: Vec<LinearGrad<T>>,
}

impl<T: Real> Mlp<T> {
    pub fn init<R: Rng>(n_in: usize, hidden: &[usize], n_out: usize, rng: &mut R) -> Result<Self> {
        if n_in == 0 || n_out == 0 || hidden.contains(&0) {
            return Err(Error::Config(format!(
                "invalid MLP widths {n_in} -> {hidden:?} -> {n_out}"
            )));
        }
        let dims: Vec<usize> = std::iter::once(n_in)
            .chain(hidden.iter().copied())
            .chain([n_out])
            .collect();
        let layers = dims
            .windows(2)
            .map(|w| Linear::init(w[0], w[1], false, rng))
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Linear<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            check_dim("MLP layer chain", w[0].n_out(), w[1].n_in())?;
        }
        Ok(Self { layers })
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_out(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.n_out())
            .collect()
    }

    fn slope() -> T {
        T::lit(LEAKY_SLOPE)
    }

    /// Layer inputs and the final output.
    fn trace(&self, x: &DMatrix<T>) -> Result<(Vec<DMatrix<T>>, Vec<DMatrix<T>>, DMatrix<T>)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for (k, l) in self.layers.iter().enumerate() {
            let z = l.forward(&a)?;
            inputs.push(a);
            a = if k + 1 < self.layers.len() {
                leaky_relu(&z, Self::slope())
            } else {
                z.clone()
            };
            pre.push(z);
        }
        Ok((inputs, pre, a))
    }

    pub fn forward(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        Ok(self.trace(x)?.2)
    }

    pub fn input_vjp(&self, x: &DMatrix<T>, dy: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_dim("output cotangent", self.n_out(), dy.nrows())?;
        let (_, pre, _) = self.trace(x)?;
        let mut g = dy.clone();
        for k in (0..self.layers.len()).rev() {
            if k + 1 < self.layers.len() {
                g = leaky_relu_backward(&pre[k], &g, Self::slope());
            }
            g = self.layers[k].backward_input(&g);
        }
        Ok(g)
    }

    /// `mean‖ỹ̂ − ỹ‖²/n` and its parameter gradient.
    pub fn loss_and_grad(&self, x: &DMatrix<T>, y: &DMatrix<T>) -> Result<(T, MlpGrad<T>)> {
        check_dim("target rows", self.n_out(), y.nrows())?;
        check_dim("batch size", x.ncols(), y.ncols())?;
        if x.ncols() == 0 {
            return Err(Error::Config("empty training batch".into()));
        }
        let (inputs, pre, out) = self.trace(x)?;
        let scale = T::lit((y.len()) as f64);
        let r = out - y;
        let loss = r.norm_squared() / scale;
        let mut g = r * (T::lit(2.0) / scale);
        let mut grads = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            if k + 1 < self.layers.len() {
                g = leaky_relu_backward(&pre[k], &g, Self::slope());
            }
            let (lg, dx) = self.layers[k].backward(&inputs[k], &g);
            grads.push(lg);
            g = dx;
        }
        grads.reverse();
        Ok((loss, MlpGrad { layers: grads }))
    }

    pub fn forward_mse(&self, x: &DMatrix<T>, y: &DMatrix<T>) -> Result<T> {
        check_dim("target rows", self.n_out(), y.nrows())?;
        Ok((self.forward(x)? - y).norm_squared() / T::lit(y.len().max(1) as f64))
    }
}

impl<T: Real> Params<T> for Mlp<T> {
    fn tensors(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.tensors_mut())
            .collect()
    }
}

impl<T: Real> Params<T> for MlpGrad<T> {
    fn tensors(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.tensors_mut())
            .collect()
    }
}
