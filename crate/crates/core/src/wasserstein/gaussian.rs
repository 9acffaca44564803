use crate::error::{domain, Result};
use crate::numerics::psd_sqrt;
use nalgebra::DMatrix;

/// `W₂` between `N(m1, c1)` and `N(m2, c2)`:
/// `(|m1 − m2|² + tr(c1 + c2 − 2(c2^{1/2} c1 c2^{1/2})^{1/2}))^{1/2}`.
pub fn w2_gaussian(m1: &[f64], c1: &DMatrix<f64>, m2: &[f64], c2: &DMatrix<f64>) -> Result<f64> {
    let n = m1.len();
    let square = |c: &DMatrix<f64>| c.nrows() == n && c.ncols() == n;
    if m2.len() != n || !square(c1) || !square(c2) {
        return Err(domain("Gaussian parameters have inconsistent shapes"));
    }
    let tol = 1e-10;
    let r2 = psd_sqrt(c2, tol)?;
    // The cross term needs c1 to be PSD as well.
    psd_sqrt(c1, tol)?;
    let cross = psd_sqrt(&(&r2 * c1 * &r2), tol)?;
    let mean: f64 = m1.iter().zip(m2).map(|(a, b)| (a - b) * (a - b)).sum();
    let bures = c1.trace() + c2.trace() - 2.0 * cross.trace();
    Ok((mean + bures.max(0.0)).sqrt())
}
