use nalgebra::{Cholesky, DMatrix, DVector};

use super::regularizer::{regularizer_value_grad, RegularizerConfig};
use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

/// Smallest admissible ratio between the smallest and largest squared
/// Cholesky pivots before a normal matrix is declared singular.
const PIVOT_RATIO: f64 = 1e-13;

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult<T: Real> {
    pub x: DVector<T>,
    /// `‖y − F(x)‖` before every iteration and after the last.
    pub residual_norms: Vec<T>,
    pub iterations: usize,
}

fn spd_solve<T: Real>(a: DMatrix<T>, rhs: &DVector<T>, what: &str) -> Result<DVector<T>> {
    let chol = Cholesky::new(a).ok_or_else(|| Error::Singular(what.to_string()))?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((T::max_value().unwrap(), T::zero()), |(lo, hi), &d| {
            (lo.min(d * d), hi.max(d * d))
        });
    if !(lo > T::lit(PIVOT_RATIO) * hi) {
        return Err(Error::Singular(what.to_string()));
    }
    Ok(chol.solve(rhs))
}

/// `(JᵀJ)⁻¹ Jᵀ r`.
pub fn gauss_newton_step<T: Real>(j: &DMatrix<T>, r: &DVector<T>) -> Result<DVector<T>> {
    lm_step(j, r, T::zero())
}

/// `(JᵀJ + λI)⁻¹ Jᵀ r`.
pub fn lm_step<T: Real>(j: &DMatrix<T>, r: &DVector<T>, lambda: T) -> Result<DVector<T>> {
    check_dim("residual length", j.nrows(), r.len())?;
    if lambda < T::zero() {
        return Err(Error::Config(format!(
            "damping must be nonnegative, got {lambda}"
        )));
    }
    let mut normal = j.tr_mul(j);
    for i in 0..normal.nrows() {
        normal[(i, i)] += lambda;
    }
    spd_solve(
        normal,
        &j.tr_mul(r),
        "JᵀJ is singular at the current iterate",
    )
}

fn residual<T: Real, F>(f: &F, y: &DVector<T>, x: &DVector<T>) -> Result<DVector<T>>
where
    F: Fn(&DVector<T>) -> Result<DVector<T>>,
{
    let fx = f(x)?;
    check_dim("forward output", y.len(), fx.len())?;
    Ok(y - fx)
}

pub fn gauss_newton<T, F, J>(
    f: F,
    jac: J,
    y: &DVector<T>,
    x0: &DVector<T>,
    iters: usize,
) -> Result<SolveResult<T>>
where
    T: Real,
    F: Fn(&DVector<T>) -> Result<DVector<T>>,
    J: Fn(&DVector<T>) -> Result<DMatrix<T>>,
{
    levenberg_marquardt(f, jac, y, x0, T::zero(), iters)
}

/// Fixed-damping Levenberg-Marquardt; `λ = 0` is Gauss-Newton.
pub fn levenberg_marquardt<T, F, J>(
    f: F,
    jac: J,
    y: &DVector<T>,
    x0: &DVector<T>,
    lambda: T,
    iters: usize,
) -> Result<SolveResult<T>>
where
    T: Real,
    F: Fn(&DVector<T>) -> Result<DVector<T>>,
    J: Fn(&DVector<T>) -> Result<DMatrix<T>>,
{
    let mut x = x0.clone();
    let mut norms = Vec::with_capacity(iters + 1);
    for _ in 0..iters {
        let r = residual(&f, y, &x)?;
        norms.push(r.norm());
        x += lm_step(&jac(&x)?, &r, lambda)?;
    }
    norms.push(residual(&f, y, &x)?.norm());
    Ok(SolveResult {
        x,
        residual_norms: norms,
        iterations: iters,
    })
}

/// Steepest descent on `½‖y − F(x)‖² + R(x)`:
/// `x ← x + γ (Jᵀ(y − F(x)) − ∇R(x))`.
#[allow(clippy::too_many_arguments)]
pub fn regularized_gd<T, F, J>(
    f: F,
    jac: J,
    y: &DVector<T>,
    x0: &DVector<T>,
    gamma: T,
    reg: &RegularizerConfig,
    grid: (usize, usize),
    iters: usize,
) -> Result<SolveResult<T>>
where
    T: Real,
    F: Fn(&DVector<T>) -> Result<DVector<T>>,
    J: Fn(&DVector<T>) -> Result<DMatrix<T>>,
{
    if gamma <= T::zero() {
        return Err(Error::Config(format!(
            "step size must be positive, got {gamma}"
        )));
    }
    let objective = |x: &DVector<T>| -> Result<(T, DVector<T>, DVector<T>)> {
        let r = residual(&f, y, x)?;
        let (rv, rg) = regularizer_value_grad(x, reg, grid.0, grid.1)?;
        Ok((T::lit(0.5) * r.norm_squared() + rv, r, rg))
    };
    let mut x = x0.clone();
    let (first, _, _) = objective(&x)?;
    let limit = T::lit(10.0) * first.abs();
    let mut norms = Vec::with_capacity(iters + 1);
    for k in 0..iters {
        let (obj, r, rg) = objective(&x)?;
        if !obj.is_finite() || obj > limit && limit > T::zero() {
            return Err(Error::Diverged(format!(
                "objective {obj} exceeded 10x its initial value {first} at iteration {k}"
            )));
        }
        norms.push(r.norm());
        x += (jac(&x)?.tr_mul(&r) - rg) * gamma;
    }
    norms.push(residual(&f, y, &x)?.norm());
    Ok(SolveResult {
        x,
        residual_norms: norms,
        iterations: iters,
    })
}
