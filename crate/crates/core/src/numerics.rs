//! Quadrature, root finding and small linear-algebra helpers shared by the
//! other modules.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, SymmetricEigen};

// Gauss-Kronrod 7/15 abscissae and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    let err = ((kronrod - gauss) * half).abs();
    (kronrod * half, err)
}

/// Tolerances for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-10, abs_tol: 1e-300, max_intervals: 4000 }
    }
}

/// Globally adaptive Gauss-Kronrod quadrature of `f` over `[a, b]`.
///
/// The interval with the largest error estimate is bisected until the summed
/// estimate drops below `max(abs_tol, rel_tol * |I|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        return integrate(f, b, a, opts).map(|v| -v);
    }
    let (v, e) = gk15(&f, a, b);
    let mut pieces = vec![(a, b, v, e)];
    let mut total = v;
    let mut err = e;
    while err > opts.abs_tol.max(opts.rel_tol * total.abs()) {
        if !total.is_finite() {
            return Err(Error::Quadrature(format!("non-finite integrand on [{a}, {b}]")));
        }
        if pieces.len() >= opts.max_intervals {
            return Err(Error::Quadrature(format!(
                "error estimate {err:.3e} above tolerance after {} subintervals on [{a}, {b}]",
                pieces.len()
            )));
        }
        let (idx, _) = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("nonempty");
        let (lo, hi, pv, pe) = pieces.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // Interval is at machine resolution; accept what we have.
            pieces.push((lo, hi, pv, 0.0));
            err -= pe;
            continue;
        }
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        total += v1 + v2 - pv;
        err += e1 + e2 - pe;
        pieces.push((lo, mid, v1, e1));
        pieces.push((mid, hi, v2, e2));
        if err < 0.0 {
            err = pieces.iter().map(|p| p.3).sum();
        }
    }
    // Re-sum to shed accumulated rounding from the incremental updates.
    Ok(pieces.iter().map(|p| p.2).sum())
}

/// Root of a nondecreasing function `g` with `g(lo) <= target`, found by
/// doubling the upper end of the bracket (capped at `lo * cap`) and then
/// bisecting.
pub fn monotone_solve<G: FnMut(f64) -> Result<f64>>(
    mut g: G,
    target: f64,
    lo: f64,
    tol: f64,
    cap: f64,
) -> Result<f64> {
    let mut lo = lo;
    let mut g_lo = g(lo)?;
    if (g_lo - target).abs() <= tol {
        return Ok(lo);
    }
    if g_lo > target {
        return Err(Error::Domain(format!("target {target} lies below g({lo}) = {g_lo}")));
    }
    let start = lo;
    let mut hi = lo.max(1.0) * 2.0;
    loop {
        let g_hi = g(hi)?;
        if g_hi >= target {
            break;
        }
        lo = hi;
        g_lo = g_hi;
        hi *= 2.0;
        if hi > start.max(1.0) * cap {
            return Err(Error::Convergence(format!(
                "bracket expansion passed {hi:e} without reaching {target}"
            )));
        }
    }
    let _ = g_lo;
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid)?;
        if (gm - target).abs() <= tol && (hi - lo) <= 1e-13 * hi {
            return Ok(mid);
        }
        if gm < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = 0.5 * (m + m.transpose());
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Principal square root of a symmetric PSD matrix; small negative
/// eigenvalues (above `-tol * max|λ|`) are projected to zero.
pub fn psd_sqrt(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let sym = 0.5 * (m + m.transpose());
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-300);
    let mut d = eig.eigenvalues.clone();
    for v in d.iter_mut() {
        if *v < -tol * scale {
            return Err(Error::Numerical(format!("matrix is not PSD (eigenvalue {v:e})")));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose())
}

/// Hilbert-Schmidt (Frobenius) norm.
pub fn hs_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Ordinary least-squares line through `(x, y)`: returns `(slope, intercept)`.
pub fn least_squares_line(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::DegenerateData("line fit needs at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateData("abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gk_integrates_polynomials_and_singular_integrands() {
        let v = integrate(|x| x * x, 0.0, 3.0, QuadOptions::default()).unwrap();
        assert!((v - 9.0).abs() < 1e-12);
        let v = integrate(|x| 1.0 / x.sqrt(), 0.0, 1.0, QuadOptions::default()).unwrap();
        assert!((v - 2.0).abs() < 1e-8, "{v}");
        let v = integrate(|x| x.sin(), 3.0, 0.0, QuadOptions::default()).unwrap();
        assert!((v + (1.0 - 3f64.cos())).abs() < 1e-12);
    }

    #[test]
    fn monotone_solve_inverts_exp() {
        let x = monotone_solve(|s: f64| Ok(s.ln()), 5.0, 1.0, 1e-12, 2f64.powi(64)).unwrap();
        assert!((x - 5f64.exp()).abs() < 1e-9 * x);
        let err = monotone_solve(|s: f64| Ok(s.ln()), 100.0, 1.0, 1e-12, 2f64.powi(10));
        assert!(matches!(err, Err(Error::Convergence(_))));
    }

    #[test]
    fn line_fit_recovers_exact_line() {
        let x = [0.0, 1.0, 2.0, 5.0];
        let y: Vec<f64> = x.iter().map(|t| 3.0 - 0.5 * t).collect();
        let (s, c) = least_squares_line(&x, &y).unwrap();
        assert!((s + 0.5).abs() < 1e-14 && (c - 3.0).abs() < 1e-14);
        assert!(least_squares_line(&[1.0, 1.0], &[0.0, 2.0]).is_err());
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let r = psd_sqrt(&m, 1e-12).unwrap();
        assert!(((&r * &r) - m).abs().max() < 1e-12);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(psd_sqrt(&bad, 1e-12).is_err());
    }
}
