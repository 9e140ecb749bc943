use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::norm::NormalizedReference;
use super::variant::ModelVariant;
use crate::diffcore::{softmax_backward, softmax_columns, Linear, LinearGrad, Params};
use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

/// `min(1000, ceil(0.4 m))`.
pub fn default_latent_dim(m: usize) -> usize {
    (((m as f64) * 0.4).ceil() as usize).clamp(1, 1000)
}

/// The normalized linearizations stacked for batched evaluation:
/// row block `i` of `a_stack` is `Ã_i`, and `offset` holds `ỹ_ref_i − Ã_i x̃_ref_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble<T: Real> {
    pub x_ref: DMatrix<T>,
    pub a_stack: DMatrix<T>,
    pub offset: DVector<T>,
    pub n_obs: usize,
}

impl<T: Real> Ensemble<T> {
    pub fn new(refs: &[NormalizedReference<T>]) -> Result<Self> {
        let first = refs
            .first()
            .ok_or_else(|| Error::Config("an ensemble needs at least one reference".into()))?;
        let (n, m) = first.a.shape();
        let mut a_stack = DMatrix::zeros(n * refs.len(), m);
        let mut offset = DVector::zeros(n * refs.len());
        let mut x_ref = DMatrix::zeros(m, refs.len());
        for (i, r) in refs.iter().enumerate() {
            check_dim("reference rows", n, r.a.nrows())?;
            check_dim("reference cols", m, r.a.ncols())?;
            check_dim("reference x", m, r.x_ref.len())?;
            check_dim("reference y", n, r.y_ref.len())?;
            a_stack.rows_mut(i * n, n).copy_from(&r.a);
            offset
                .rows_mut(i * n, n)
                .copy_from(&(&r.y_ref - &r.a * &r.x_ref));
            x_ref.set_column(i, &r.x_ref);
        }
        Ok(Self {
            x_ref,
            a_stack,
            offset,
            n_obs: n,
        })
    }

    pub fn n_refs(&self) -> usize {
        self.x_ref.ncols()
    }

    pub fn n_cells(&self) -> usize {
        self.x_ref.nrows()
    }

    /// Every member's prediction, stacked row-block-wise.
    pub fn predict_all(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_dim("ensemble input", self.n_cells(), x.nrows())?;
        let mut y = &self.a_stack * x;
        for mut col in y.column_iter_mut() {
            col += &self.offset;
        }
        Ok(y)
    }

    /// Column-wise convex combination of the stacked blocks.
    pub fn combine(&self, stack: &DMatrix<T>, w: &DMatrix<T>) -> DMatrix<T> {
        let n = self.n_obs;
        let mut out = DMatrix::zeros(n, stack.ncols());
        for i in 0..self.n_refs() {
            let block = stack.rows(i * n, n);
            for j in 0..stack.ncols() {
                let wij = w[(i, j)];
                out.column_mut(j).axpy(wij, &block.column(j), T::one());
            }
        }
        out
    }

    /// `⟨block_i(:, j), g(:, j)⟩` for every member `i` and column `j`.
    pub fn block_dots(&self, stack: &DMatrix<T>, g: &DMatrix<T>) -> DMatrix<T> {
        let n = self.n_obs;
        DMatrix::from_fn(self.n_refs(), stack.ncols(), |i, j| {
            stack.rows(i * n, n).column(j).dot(&g.column(j))
        })
    }

    /// Spreads `g` into every block scaled by the weights.
    pub fn spread(&self, g: &DMatrix<T>, w: &DMatrix<T>) -> DMatrix<T> {
        let n = self.n_obs;
        let mut out = DMatrix::zeros(n * self.n_refs(), g.ncols());
        for i in 0..self.n_refs() {
            for j in 0..g.ncols() {
                let wij = w[(i, j)];
                out.rows_mut(i * n, n)
                    .column_mut(j)
                    .axpy(wij, &g.column(j), T::zero());
            }
        }
        out
    }

    pub fn uniform_weights(&self, batch: usize) -> DMatrix<T> {
        DMatrix::from_element(
            self.n_refs(),
            batch,
            T::one() / T::lit(self.n_refs() as f64),
        )
    }
}

/// Physics-embedded attention ensemble. `e = E_x x̃`, `w = softmax(kᵀ P_x e)`,
/// `ỹ̂ = D_y W_out P_y Σ w_i ŷ_i`, `x̂̃ = D_x e`.
#[derive(Clone, Debug, PartialEq)]
pub struct Petal<T: Real> {
    pub ex: Linear<T>,
    pub px: Linear<T>,
    pub py: Linear<T>,
    pub wout: Linear<T>,
    pub dy: Linear<T>,
    pub dx: Linear<T>,
    pub ensemble: Ensemble<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PetalGrad<T: Real> {
    pub ex: LinearGrad<T>,
    pub px: LinearGrad<T>,
    pub py: LinearGrad<T>,
    pub wout: LinearGrad<T>,
    pub dy: LinearGrad<T>,
    pub dx: LinearGrad<T>,
}

/// Forward intermediates kept for the backward pass.
#[derive(Clone, Debug)]
pub struct PetalTrace<T: Real> {
    pub e: DMatrix<T>,
    pub q: DMatrix<T>,
    pub e_ref: DMatrix<T>,
    pub keys: DMatrix<T>,
    pub weights: DMatrix<T>,
    pub stack: DMatrix<T>,
    pub ybar: DMatrix<T>,
    pub h: DMatrix<T>,
    pub o: DMatrix<T>,
    pub yhat: DMatrix<T>,
}

impl<T: Real> Petal<T> {
    pub fn init<R: Rng>(ensemble: Ensemble<T>, latent_dim: usize, rng: &mut R) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::Config("latent dimension must be positive".into()));
        }
        let (m, n, d) = (ensemble.n_cells(), ensemble.n_obs, latent_dim);
        Ok(Self {
            ex: Linear::init(m, d, true, rng),
            px: Linear::init(d, d, true, rng),
            py: Linear::init(n, d, true, rng),
            wout: Linear::init(d, d, false, rng),
            dy: Linear::init(d, n, false, rng),
            dx: Linear::init(d, m, true, rng),
            ensemble,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.ensemble.n_cells()
    }

    pub fn n_obs(&self) -> usize {
        self.ensemble.n_obs
    }

    pub fn latent_dim(&self) -> usize {
        self.ex.n_out()
    }

    pub fn layers(&self) -> [&Linear<T>; 6] {
        [&self.ex, &self.px, &self.py, &self.wout, &self.dy, &self.dx]
    }

    pub fn layers_mut(&mut self) -> [&mut Linear<T>; 6] {
        [
            &mut self.ex,
            &mut self.px,
            &mut self.py,
            &mut self.wout,
            &mut self.dy,
            &mut self.dx,
        ]
    }

    pub const LAYER_NAMES: [&'static str; 6] = ["E_x", "P_x", "P_y", "W_out", "D_y", "D_x"];

    /// Cached keys `P_x E_x x̃_ref_i`, one column per reference.
    pub fn keys(&self) -> Result<DMatrix<T>> {
        self.px.forward(&self.ex.forward(&self.ensemble.x_ref)?)
    }

    pub fn attention(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        let q = self.px.forward(&self.ex.forward(x)?)?;
        Ok(softmax_columns(&(self.keys()?.tr_mul(&q))))
    }

    pub fn trace(&self, x: &DMatrix<T>) -> Result<PetalTrace<T>> {
        let e = self.ex.forward(x)?;
        let q = self.px.forward(&e)?;
        let e_ref = self.ex.forward(&self.ensemble.x_ref)?;
        let keys = self.px.forward(&e_ref)?;
        let weights = softmax_columns(&keys.tr_mul(&q));
        let stack = self.ensemble.predict_all(x)?;
        let ybar = self.ensemble.combine(&stack, &weights);
        let h = self.py.forward(&ybar)?;
        let o = self.wout.forward(&h)?;
        let yhat = self.dy.forward(&o)?;
        Ok(PetalTrace {
            e,
            q,
            e_ref,
            keys,
            weights,
            stack,
            ybar,
            h,
            o,
            yhat,
        })
    }

    /// Returns `(ỹ̂, x̂̃, w)` with one column per sample.
    pub fn forward(&self, x: &DMatrix<T>) -> Result<(DMatrix<T>, DMatrix<T>, DMatrix<T>)> {
        let t = self.trace(x)?;
        let xrec = self.dx.forward(&t.e)?;
        Ok((t.yhat, xrec, t.weights))
    }

    pub fn encode(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.ex.forward(x)
    }

    pub fn decode(&self, z: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.dx.forward(z)
    }

    /// Forward pass of an ablation variant, reusing this model's weights.
    pub fn variant_forward(&self, variant: ModelVariant, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        variant.validate()?;
        let stack = self.ensemble.predict_all(x)?;
        let w = if variant.learned_weights {
            self.attention(x)?
        } else {
            self.ensemble.uniform_weights(x.ncols())
        };
        let ybar = self.ensemble.combine(&stack, &w);
        if variant.at_transform {
            self.dy
                .forward(&self.wout.forward(&self.py.forward(&ybar)?)?)
        } else {
            Ok(ybar)
        }
    }

    /// Input cotangent of `variant_forward`. With `detach_attention` the
    /// weights are treated as constants.
    pub fn variant_input_vjp(
        &self,
        variant: ModelVariant,
        x: &DMatrix<T>,
        dout: &DMatrix<T>,
        detach_attention: bool,
    ) -> Result<DMatrix<T>> {
        variant.validate()?;
        check_dim("output cotangent", self.n_obs(), dout.nrows())?;
        check_dim("batch size", x.ncols(), dout.ncols())?;
        let dybar = if variant.at_transform {
            self.py
                .backward_input(&self.wout.backward_input(&self.dy.backward_input(dout)))
        } else {
            dout.clone()
        };
        if !variant.learned_weights {
            let w = self.ensemble.uniform_weights(x.ncols());
            return Ok(self
                .ensemble
                .a_stack
                .tr_mul(&self.ensemble.spread(&dybar, &w)));
        }
        let e = self.ex.forward(x)?;
        let q = self.px.forward(&e)?;
        let keys = self.keys()?;
        let w = softmax_columns(&keys.tr_mul(&q));
        let mut dx = self
            .ensemble
            .a_stack
            .tr_mul(&self.ensemble.spread(&dybar, &w));
        if !detach_attention {
            let stack = self.ensemble.predict_all(x)?;
            let ds = softmax_backward(&w, &self.ensemble.block_dots(&stack, &dybar));
            let de = self.px.backward_input(&(&keys * ds));
            dx += self.ex.backward_input(&de);
        }
        Ok(dx)
    }

    /// `mean‖ỹ̂ − ỹ‖²/n + β mean‖x̂̃ − x̃‖²/m` and its parameter gradient.
    pub fn loss_and_grad(
        &self,
        x: &DMatrix<T>,
        y: &DMatrix<T>,
        beta: T,
    ) -> Result<(T, PetalGrad<T>)> {
        check_dim("target rows", self.n_obs(), y.nrows())?;
        check_dim("batch size", x.ncols(), y.ncols())?;
        if x.ncols() == 0 {
            return Err(Error::Config("empty training batch".into()));
        }
        let t = self.trace(x)?;
        let xrec = self.dx.forward(&t.e)?;
        let b = T::lit(x.ncols() as f64);
        let (n, m) = (T::lit(self.n_obs() as f64), T::lit(self.n_cells() as f64));
        let ry = &t.yhat - y;
        let rx = &xrec - x;
        let loss = ry.norm_squared() / (n * b) + beta * rx.norm_squared() / (m * b);

        let dout = &ry * (T::lit(2.0) / (n * b));
        let dxrec = &rx * (T::lit(2.0) * beta / (m * b));
        let (g_dy, d_o) = self.dy.backward(&t.o, &dout);
        let (g_wout, dh) = self.wout.backward(&t.h, &d_o);
        let (g_py, dybar) = self.py.backward(&t.ybar, &dh);
        let ds = softmax_backward(&t.weights, &self.ensemble.block_dots(&t.stack, &dybar));
        let dq = &t.keys * &ds;
        let dkeys = &t.q * ds.transpose();
        let (mut g_px, de_q) = self.px.backward(&t.e, &dq);
        let (g_px_ref, de_ref) = self.px.backward(&t.e_ref, &dkeys);
        g_px.add_assign(&g_px_ref);
        let (g_dx, de_rec) = self.dx.backward(&t.e, &dxrec);
        let (mut g_ex, _) = self.ex.backward(x, &(de_q + de_rec));
        let (g_ex_ref, _) = self.ex.backward(&self.ensemble.x_ref, &de_ref);
        g_ex.add_assign(&g_ex_ref);
        Ok((
            loss,
            PetalGrad {
                ex: g_ex,
                px: g_px,
                py: g_py,
                wout: g_wout,
                dy: g_dy,
                dx: g_dx,
            },
        ))
    }

    /// Forward-only loss `mean‖ỹ̂ − ỹ‖²/n`.
    pub fn forward_mse(&self, x: &DMatrix<T>, y: &DMatrix<T>) -> Result<T> {
        check_dim("target rows", self.n_obs(), y.nrows())?;
        let yhat = self.variant_forward(ModelVariant::PETAL, x)?;
        Ok((yhat - y).norm_squared() / T::lit((y.len().max(1)) as f64))
    }

    /// One power-iteration pass on every spectrally normalized layer.
    pub fn refresh_spectral(&mut self, iters: usize) {
        for l in self.layers_mut() {
            l.power_iterate(iters);
        }
    }

    pub fn refresh_spectral_until(&mut self, min_iters: usize, tol: f64, max_iters: usize) {
        for l in self.layers_mut() {
            l.power_iterate_until(min_iters, tol, max_iters);
        }
    }

    /// The composed output map `D_y W_out P_y` as `(M, bias)`.
    pub fn output_map(&self) -> (DMatrix<T>, DVector<T>) {
        let m =
            self.dy.effective_weight() * self.wout.effective_weight() * self.py.effective_weight();
        let bias = self.dy.effective_weight()
            * (self.wout.effective_weight() * &self.py.b + &self.wout.b)
            + &self.dy.b;
        (m, bias)
    }
}

impl<T: Real> Params<T> for Petal<T> {
    fn tensors(&self) -> Vec<&[T]> {
        self.layers()
            .into_iter()
            .flat_map(|l| l.tensors())
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let Self {
            ex,
            px,
            py,
            wout,
            dy,
            dx,
            ..
        } = self;
        [ex, px, py, wout, dy, dx]
            .into_iter()
            .flat_map(|l| l.tensors_mut())
            .collect()
    }
}

impl<T: Real> Params<T> for PetalGrad<T> {
    fn tensors(&self) -> Vec<&[T]> {
        [&self.ex, &self.px, &self.py, &self.wout, &self.dy, &self.dx]
            .into_iter()
            .flat_map(|l| l.tensors())
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let Self {
            ex,
            px,
            py,
            wout,
            dy,
            dx,
        } = self;
        [ex, px, py, wout, dy, dx]
            .into_iter()
            .flat_map(|l| l.tensors_mut())
            .collect()
    }
}
