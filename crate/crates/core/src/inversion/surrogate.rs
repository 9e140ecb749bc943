use nalgebra::DMatrix;

use crate::diffcore::Linear;
use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;
use crate::surrogate::{Mlp, ModelVariant, NormalizedReference, Petal};

/// A differentiable forward map in normalized coordinates. Columns are
/// samples; `ids` names the sample behind each column so per-sample
/// surrogates can pick their own expansion point.
pub trait Surrogate<T: Real> {
    fn n_cells(&self) -> usize;
    fn n_obs(&self) -> usize;
    fn predict(&self, x: &DMatrix<T>, ids: &[usize]) -> Result<DMatrix<T>>;
    fn input_vjp(&self, x: &DMatrix<T>, dy: &DMatrix<T>, ids: &[usize]) -> Result<DMatrix<T>>;

    /// `(encoder, decoder)` when the inversion may run in a latent subspace.
    fn subspace(&self) -> Option<(&Linear<T>, &Linear<T>)> {
        None
    }
}

/// A trained PETAL evaluated as one of its ablation variants.
#[derive(Clone, Copy, Debug)]
pub struct VariantSurrogate<'a, T: Real> {
    pub model: &'a Petal<T>,
    pub variant: ModelVariant,
}

impl<'a, T: Real> VariantSurrogate<'a, T> {
    pub fn new(model: &'a Petal<T>, variant: ModelVariant) -> Result<Self> {
        Ok(Self {
            model,
            variant: variant.validate()?,
        })
    }
}

impl<T: Real> Surrogate<T> for VariantSurrogate<'_, T> {
    fn n_cells(&self) -> usize {
        self.model.n_cells()
    }

    fn n_obs(&self) -> usize {
        self.model.n_obs()
    }

    fn predict(&self, x: &DMatrix<T>, _ids: &[usize]) -> Result<DMatrix<T>> {
        self.model.variant_forward(self.variant, x)
    }

    fn input_vjp(&self, x: &DMatrix<T>, dy: &DMatrix<T>, _ids: &[usize]) -> Result<DMatrix<T>> {
        self.model.variant_input_vjp(self.variant, x, dy, false)
    }

    fn subspace(&self) -> Option<(&Linear<T>, &Linear<T>)> {
        self.variant
            .ssp_subspace
            .then_some((&self.model.ex, &self.model.dx))
    }
}

impl<T: Real> Surrogate<T> for Petal<T> {
    fn n_cells(&self) -> usize {
        Petal::n_cells(self)
    }

    fn n_obs(&self) -> usize {
        Petal::n_obs(self)
    }

    fn predict(&self, x: &DMatrix<T>, _ids: &[usize]) -> Result<DMatrix<T>> {
        self.variant_forward(ModelVariant::PETAL, x)
    }

    fn input_vjp(&self, x: &DMatrix<T>, dy: &DMatrix<T>, _ids: &[usize]) -> Result<DMatrix<T>> {
        self.variant_input_vjp(ModelVariant::PETAL, x, dy, false)
    }

    fn subspace(&self) -> Option<(&Linear<T>, &Linear<T>)> {
        Some((&self.ex, &self.dx))
    }
}

impl<T: Real> Surrogate<T> for Mlp<T> {
    fn n_cells(&self) -> usize {
        self.n_in()
    }

    fn n_obs(&self) -> usize {
        self.n_out()
    }

    fn predict(&self, x: &DMatrix<T>, _ids: &[usize]) -> Result<DMatrix<T>> {
        self.forward(x)
    }

    fn input_vjp(&self, x: &DMatrix<T>, dy: &DMatrix<T>, _ids: &[usize]) -> Result<DMatrix<T>> {
        Mlp::input_vjp(self, x, dy)
    }
}

/// Per-sample linearized forward model: sample `k` uses
/// `refs[assignment[k]]`.
#[derive(Clone, Debug)]
pub struct LfmSurrogate<T: Real> {
    pub refs: Vec<NormalizedReference<T>>,
    pub assignment: Vec<usize>,
}

impl<T: Real> LfmSurrogate<T> {
    pub fn new(refs: Vec<NormalizedReference<T>>, assignment: Vec<usize>) -> Result<Self> {
        let first = refs
            .first()
            .ok_or_else(|| Error::Config("LFM surrogate needs a reference".into()))?;
        let shape = first.a.shape();
        if refs.iter().any(|r| r.a.shape() != shape) {
            return Err(Error::Config("references disagree on dimensions".into()));
        }
        if let Some(&bad) = assignment.iter().find(|&&a| a >= refs.len()) {
            return Err(Error::Config(format!(
                "assignment to missing reference {bad}"
            )));
        }
        Ok(Self { refs, assignment })
    }

    /// One reference shared by `n_samples` samples.
    pub fn single(r: NormalizedReference<T>, n_samples: usize) -> Self {
        Self {
            refs: vec![r],
            assignment: vec![0; n_samples],
        }
    }

    fn groups(&self, ids: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut groups = vec![Vec::new(); self.refs.len()];
        for (col, &id) in ids.iter().enumerate() {
            let r = *self
                .assignment
                .get(id)
                .ok_or_else(|| Error::Config(format!("sample {id} has no reference assignment")))?;
            groups[r].push(col);
        }
        Ok(groups)
    }

    fn apply(
        &self,
        x: &DMatrix<T>,
        ids: &[usize],
        out_rows: usize,
        f: impl Fn(&NormalizedReference<T>, &DMatrix<T>) -> Result<DMatrix<T>>,
    ) -> Result<DMatrix<T>> {
        check_dim("sample ids", x.ncols(), ids.len())?;
        let mut out = DMatrix::zeros(out_rows, x.ncols());
        for (r, cols) in self.refs.iter().zip(self.groups(ids)?) {
            if cols.is_empty() {
                continue;
            }
            let part = f(r, &x.select_columns(&cols))?;
            for (k, &c) in cols.iter().enumerate() {
                out.set_column(c, &part.column(k));
            }
        }
        Ok(out)
    }
}

impl<T: Real> Surrogate<T> for LfmSurrogate<T> {
    fn n_cells(&self) -> usize {
        self.refs[0].a.ncols()
    }

    fn n_obs(&self) -> usize {
        self.refs[0].a.nrows()
    }

    fn predict(&self, x: &DMatrix<T>, ids: &[usize]) -> Result<DMatrix<T>> {
        check_dim("LFM input", self.n_cells(), x.nrows())?;
        self.apply(x, ids, self.n_obs(), |r, xs| r.predict(xs))
    }

    fn input_vjp(&self, _x: &DMatrix<T>, dy: &DMatrix<T>, ids: &[usize]) -> Result<DMatrix<T>> {
        check_dim("LFM cotangent", self.n_obs(), dy.nrows())?;
        self.apply(dy, ids, self.n_cells(), |r, g| Ok(r.a.tr_mul(g)))
    }
}
