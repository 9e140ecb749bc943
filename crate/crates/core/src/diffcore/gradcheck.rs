use nalgebra::DVector;

use crate::scalar::Real;

/// Denominator floor for relative errors, so coordinates whose true
/// gradient is zero are compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

/// Central-difference step for coordinate value `x`.
pub fn fd_step<T: Real>(x: T) -> T {
    T::lit(1e-5) * (T::one() + x.abs())
}

pub fn relative_error<T: Real>(a: T, b: T) -> T {
    (a - b).abs() / a.abs().max(b.abs()).max(T::lit(GRAD_CHECK_FLOOR))
}

/// Worst relative error between `grad` and central differences of the
/// scalar function `f` at `x`.
pub fn grad_check<T, F>(f: F, x: &DVector<T>, grad: &DVector<T>) -> T
where
    T: Real,
    F: Fn(&DVector<T>) -> T,
{
    assert_eq!(x.len(), grad.len(), "gradient length must match input");
    let mut xp = x.clone();
    let mut worst = T::zero();
    for i in 0..x.len() {
        let h = fd_step(x[i]);
        xp[i] = x[i] + h;
        let up = f(&xp);
        xp[i] = x[i] - h;
        let down = f(&xp);
        xp[i] = x[i];
        let numeric = (up - down) / (h + h);
        worst = worst.max(relative_error(grad[i], numeric));
    }
    worst
}
