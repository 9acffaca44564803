//! Closed-form objects: OU transition laws, the piecewise-linear drift of
//! piecewise OU processes, and Langevin coefficients.

use super::LangevinSpec;
use crate::error::{Error, Result};
use crate::numerics::{integrate, QuadOptions};
use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Law of `e^{Ht}x₀ + ∫₀ᵗ e^{H(t−s)} dB_s` with `B` a Brownian motion with
/// covariance `a` per unit time. The covariance `∫₀ᵗ e^{Hs} a e^{H's} ds` is
/// read off the block exponential `exp([[−H, a], [0, H']]·t)`.
pub fn ou_exact_transition(h: &DMatrix<f64>, a: &DMatrix<f64>, t: f64, x0: &[f64]) -> Result<Gaussian> {
    let n = h.nrows();
    if h.ncols() != n || a.nrows() != n || a.ncols() != n || x0.len() != n {
        return Err(crate::error::domain("OU transition inputs have inconsistent shapes"));
    }
    if !(t >= 0.0) {
        return Err(crate::error::domain("time must be nonnegative"));
    }
    let x0 = DVector::from_column_slice(x0);
    if n == 1 {
        let (h, a) = (h[(0, 0)], a[(0, 0)]);
        let var = if h == 0.0 { a * t } else { a * (2.0 * h * t).exp_m1() / (2.0 * h) };
        return Ok(Gaussian { mean: x0 * (h * t).exp(), cov: DMatrix::from_element(1, 1, var) });
    }
    // The block exponential carries e^{−Ht}, so only use it on a short step
    // and reach t by doubling: Σ(2τ) = Σ(τ) + e^{Hτ}Σ(τ)e^{H'τ}.
    let hnorm = h.iter().fold(0.0f64, |m, v| m.max(v.abs())) * n as f64;
    let mut doublings = 0;
    let mut tau = t;
    while tau * hnorm > 0.5 && doublings < 60 {
        tau *= 0.5;
        doublings += 1;
    }
    let mut c = DMatrix::zeros(2 * n, 2 * n);
    c.view_mut((0, 0), (n, n)).copy_from(&(-h));
    c.view_mut((0, n), (n, n)).copy_from(a);
    c.view_mut((n, n), (n, n)).copy_from(&h.transpose());
    let e = (c * tau).exp();
    let f22 = e.view((n, n), (n, n)).into_owned();
    let g12 = e.view((0, n), (n, n)).into_owned();
    let mut cov = f22.transpose() * &g12;
    let mut step = f22.transpose();
    for _ in 0..doublings {
        cov = &cov + &step * &cov * step.transpose();
        step = &step * &step;
    }
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(Gaussian { mean: (h * t).exp() * x0, cov })
}

/// Stationary covariance `Σ` solving `HΣ + ΣH' + a = 0` for Hurwitz `H`.
pub fn ou_stationary_covariance(h: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = h.nrows();
    let eig = h.complex_eigenvalues();
    if eig.iter().any(|z| !(z.re < 0.0)) {
        return Err(crate::error::domain("OU matrix is not Hurwitz, no stationary law"));
    }
    let id = DMatrix::<f64>::identity(n, n);
    let k = id.kronecker(h) + h.kronecker(&id);
    let rhs = -DVector::from_column_slice(a.as_slice());
    let sol = k.lu().solve(&rhs).ok_or_else(|| Error::Numerical("singular Lyapunov system".into()))?;
    let s = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&s + s.transpose()) * 0.5)
}

/// `b̄(x) = l − M(x − ⟨e,x⟩⁺v) − ⟨e,x⟩⁺Γv`, with `gamma` the diagonal of `Γ`.
pub fn piecewise_drift(l: &[f64], m: &DMatrix<f64>, gamma: &[f64], v: &[f64], x: &[f64]) -> Vec<f64> {
    let n = l.len();
    let pos = x.iter().sum::<f64>().max(0.0);
    (0..n)
        .map(|i| {
            let mx: f64 = (0..n).map(|j| m[(i, j)] * (x[j] - pos * v[j])).sum();
            l[i] - mx - pos * gamma[i] * v[i]
        })
        .collect()
}

/// Log-density profile `ℓ(r)` of the tempered target: `−ln(r)/α` for `r ≥ 1`,
/// and inside the ball the even quartic `3/(4α) − r²/α + r⁴/(4α)`, which
/// matches value, slope and curvature at `r = 1`.
fn log_profile(alpha: f64, r: f64) -> f64 {
    if r >= 1.0 {
        -r.ln() / alpha
    } else {
        let r2 = r * r;
        (0.75 - r2 + 0.25 * r2 * r2) / alpha
    }
}

/// Normalised Langevin target, holding `ln c` so that `π(x) = c·e^{ℓ(|x|)}`.
#[derive(Clone, Debug)]
pub struct LangevinField {
    pub spec: LangevinSpec,
    pub log_c: f64,
}

impl LangevinField {
    pub fn new(spec: &LangevinSpec) -> Result<Self> {
        let n = spec.dim as f64;
        let alpha = spec.alpha;
        let sphere = 2.0 * std::f64::consts::PI.powf(n / 2.0) / statrs::function::gamma::gamma(n / 2.0);
        let inner = integrate(|r| log_profile(alpha, r).exp() * r.powf(n - 1.0), 0.0, 1.0, QuadOptions::default())?;
        let outer = 1.0 / (1.0 / alpha - n);
        Ok(Self { spec: spec.clone(), log_c: -(sphere * (inner + outer)).ln() })
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.log_c + log_profile(self.spec.alpha, super::levy::norm(x))
    }

    /// `(b(x), σ(x))` with `σ(x) = π(x)^{−β}` the scalar multiple of the identity.
    pub fn coeffs(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let (alpha, beta) = (self.spec.alpha, self.spec.beta);
        let r2: f64 = x.iter().map(|v| v * v).sum();
        // ∇ln π = x·ℓ'(r)/r
        let k = if r2 >= 1.0 { -1.0 / (alpha * r2) } else { (r2 - 2.0) / alpha };
        let logp = self.log_density(x);
        let sigma = (-beta * logp).exp();
        let scale = 0.5 * (1.0 - 2.0 * beta) * (-2.0 * beta * logp).exp() * k;
        (x.iter().map(|v| scale * v).collect(), sigma)
    }
}

/// Langevin drift and (scalar) diffusion coefficient at `x`.
pub fn langevin_coeffs(spec: &LangevinSpec, x: &[f64]) -> (Vec<f64>, f64) {
    LangevinField::new(spec).expect("Langevin normaliser quadrature").coeffs(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ou_transition_basics() {
        let h = DMatrix::from_element(1, 1, -1.0);
        let a = DMatrix::from_element(1, 1, 2.0);
        let g = ou_exact_transition(&h, &a, 0.0, &[3.0]).unwrap();
        assert_eq!(g.mean[0], 3.0);
        assert_eq!(g.cov[(0, 0)], 0.0);
        let g = ou_exact_transition(&h, &a, 40.0, &[3.0]).unwrap();
        assert_relative_eq!(g.cov[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn block_exponential_matches_quadrature() {
        let h = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, -0.3, -2.0]);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let t = 1.3;
        let g = ou_exact_transition(&h, &a, t, &[1.0, -1.0]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let q = integrate(
                    |s| {
                        let e = (&h * s).exp();
                        (&e * &a * e.transpose())[(i, j)]
                    },
                    0.0,
                    t,
                    QuadOptions::default(),
                )
                .unwrap();
                assert_relative_eq!(g.cov[(i, j)], q, max_relative = 1e-9);
            }
        }
        let stat = ou_stationary_covariance(&h, &a).unwrap();
        let far = ou_exact_transition(&h, &a, 60.0, &[0.0, 0.0]).unwrap();
        let diff = (stat - far.cov).amax();
        assert!(diff < 1e-10, "{diff:e}");
    }

    #[test]
    fn piecewise_drift_examples() {
        let m = DMatrix::<f64>::identity(2, 2);
        assert_eq!(piecewise_drift(&[0.3, 0.1], &m, &[1.0, 1.0], &[1.0, 0.0], &[0.0, 0.0]), vec![0.3, 0.1]);
        assert_eq!(piecewise_drift(&[0.0, 0.0], &m, &[1.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]), vec![-1.0, -1.0]);
        assert_eq!(piecewise_drift(&[0.0, 0.0], &m, &[5.0, 5.0], &[1.0, 0.0], &[-1.0, -1.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn langevin_examples() {
        let spec = LangevinSpec { alpha: 0.25, beta: 0.0, dim: 1 };
        let (b, s) = langevin_coeffs(&spec, &[2.0]);
        assert_relative_eq!(b[0], -1.0 / (2.0 * 0.25) / 2.0, epsilon = 1e-14);
        assert_eq!(s, 1.0);
        let half = LangevinSpec { alpha: 0.25, beta: 0.5, dim: 1 };
        assert_eq!(langevin_coeffs(&half, &[0.4]).0[0], 0.0);
        let spec = LangevinSpec { alpha: 0.3, beta: 0.2, dim: 1 };
        assert_eq!(langevin_coeffs(&spec, &[0.7]).1, langevin_coeffs(&spec, &[-0.7]).1);
    }

    #[test]
    fn langevin_density_is_normalised_and_smooth() {
        let f = LangevinField::new(&LangevinSpec { alpha: 0.2, beta: 0.0, dim: 1 }).unwrap();
        let total = 2.0
            * (integrate(|r| f.log_density(&[r]).exp(), 0.0, 1.0, QuadOptions::default()).unwrap()
                + integrate(|w| f.log_density(&[1.0 / w]).exp() / (w * w), 0.0, 1.0, QuadOptions::default())
                    .unwrap());
        assert_relative_eq!(total, 1.0, max_relative = 1e-9);
        // drift continuous across the unit sphere
        let (bi, _) = f.coeffs(&[1.0 - 1e-9]);
        let (bo, _) = f.coeffs(&[1.0 + 1e-9]);
        assert!((bi[0] - bo[0]).abs() < 1e-6);
    }
}
