//! Norm-based Lyapunov functions, numerical application of the Lévy-type
//! generator, and Foster–Lyapunov drift checks.

use crate::error::{config, domain, Error, Result};
use crate::func::{serde_matrix, MatrixFn, ScalarFn, VectorFn};
use crate::numerics::{integrate, sym_eigenvalues, QuadOptions};
use crate::processes::levy::{norm, JumpDist, LevyKind, LevyMeasureSpec, StableStructure};
use crate::processes::stable::{isotropic_radial_constant, symmetric_density_constant};
use crate::rate_calculus::PhiSpec;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::cell::RefCell;

/// Symmetric positive-definite matrix with cached extreme eigenvalues.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadForm {
    q: DMatrix<f64>,
    lambda_min: f64,
    lambda_max: f64,
}

impl QuadForm {
    pub fn new(q: DMatrix<f64>) -> Result<Self> {
        if q.nrows() != q.ncols() || q.nrows() == 0 {
            return Err(config("quadratic form must be a nonempty square matrix"));
        }
        let scale = q.amax().max(1.0);
        if (&q - q.transpose()).amax() > 1e-12 * scale {
            return Err(config("quadratic form is not symmetric"));
        }
        let q = (&q + q.transpose()) * 0.5;
        let ev = sym_eigenvalues(&q);
        let (lambda_min, lambda_max) = (ev[0], ev[ev.len() - 1]);
        if !(lambda_min > 0.0) {
            return Err(config(format!("quadratic form is not positive definite (smallest eigenvalue {lambda_min})")));
        }
        Ok(Self { q, lambda_min, lambda_max })
    }

    pub fn identity(n: usize) -> Self {
        Self { q: DMatrix::identity(n, n), lambda_min: 1.0, lambda_max: 1.0 }
    }

    pub fn diagonal(d: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// `⟨x, Qx⟩`.
    pub fn quad(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += x[i] * self.q[(i, j)] * x[j];
            }
        }
        s
    }

    /// `|x|_Q`.
    pub fn norm(&self, x: &[f64]) -> f64 {
        self.quad(x).sqrt()
    }

    fn apply(&self, x: &[f64]) -> DVector<f64> {
        &self.q * DVector::from_column_slice(x)
    }

    /// Smooth convex surrogate of `|x|_Q`; see [`QuadForm::chi_all`].
    pub fn chi(&self, x: &[f64]) -> f64 {
        self.profile(self.quad(x)).0
    }

    pub fn chi_gradient(&self, x: &[f64]) -> DVector<f64> {
        self.chi_all(x).1
    }

    pub fn chi_hessian(&self, x: &[f64]) -> DMatrix<f64> {
        self.chi_all(x).2
    }

    /// Value, gradient and Hessian of `χ_Q(x) = h(⟨x,Qx⟩)`, where `h(s) = √s`
    /// for `s ≥ λ_min(Q)` and below that the quadratic
    /// `√λ·(3/8 + 3τ/4 − τ²/8)`, `τ = s/λ`, which matches `√s` to second order.
    /// Since `⟨x,Qx⟩ < λ_min` forces `|x| < 1`, `χ_Q = |·|_Q` off the unit ball.
    pub fn chi_all(&self, x: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let qx = self.apply(x);
        let s = qx.dot(&DVector::from_column_slice(x));
        let (h, h1, h2) = self.profile(s);
        let grad = &qx * (2.0 * h1);
        let hess = &self.q * (2.0 * h1) + &qx * qx.transpose() * (4.0 * h2);
        (h, grad, hess)
    }

    fn profile(&self, s: f64) -> (f64, f64, f64) {
        let lam = self.lambda_min;
        if s >= lam {
            let r = s.sqrt();
            (r, 0.5 / r, -0.25 / (s * r))
        } else {
            let sl = lam.sqrt();
            let tau = s / lam;
            (
                sl * (0.375 + 0.75 * tau - 0.125 * tau * tau),
                sl * (0.75 - 0.25 * tau) / lam,
                -0.25 * sl / (lam * lam),
            )
        }
    }
}

impl Serialize for QuadForm {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        serde_matrix::serialize(&self.q, s)
    }
}

impl<'de> Deserialize<'de> for QuadForm {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = serde_matrix::deserialize(d)?;
        QuadForm::new(m).map_err(serde::de::Error::custom)
    }
}

/// Growth of a test function at infinity, used to decide integrability
/// against a Lévy measure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "rate", rename_all = "snake_case")]
pub enum Growth {
    /// `|f(x)| ≲ 1 + |x|^θ`.
    Polynomial(f64),
    /// `|f(x)| ≲ e^{ζ|x|}`.
    Exponential(f64),
}

/// User-supplied `C²` Lyapunov function.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CustomLyapunov {
    pub value: ScalarFn,
    pub gradient: VectorFn,
    pub hessian: MatrixFn,
    pub growth: Growth,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LyapunovFn {
    /// `χ_Q^θ`.
    PolyNorm { q: QuadForm, theta: f64 },
    /// `e^{ζ χ_Q}`.
    ExpNorm { q: QuadForm, zeta: f64 },
    /// `1 + χ_Q^θ`.
    PolyNormPlusOne { q: QuadForm, theta: f64 },
    Custom(CustomLyapunov),
}

impl LyapunovFn {
    pub fn poly(q: QuadForm, theta: f64) -> Result<Self> {
        positive(theta, "theta")?;
        Ok(Self::PolyNorm { q, theta })
    }

    pub fn poly_plus_one(q: QuadForm, theta: f64) -> Result<Self> {
        positive(theta, "theta")?;
        Ok(Self::PolyNormPlusOne { q, theta })
    }

    pub fn exp(q: QuadForm, zeta: f64) -> Result<Self> {
        positive(zeta, "zeta")?;
        Ok(Self::ExpNorm { q, zeta })
    }

    pub fn custom(
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        hessian: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        growth: Growth,
    ) -> Self {
        Self::Custom(CustomLyapunov {
            value: ScalarFn::new(value),
            gradient: VectorFn::new(gradient),
            hessian: MatrixFn::new(hessian),
            growth,
        })
    }

    pub fn growth(&self) -> Growth {
        match self {
            Self::PolyNorm { theta, .. } | Self::PolyNormPlusOne { theta, .. } => Growth::Polynomial(*theta),
            Self::ExpNorm { q, zeta } => Growth::Exponential(zeta * q.lambda_max().sqrt()),
            Self::Custom(c) => c.growth,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Self::PolyNorm { q, theta } => q.chi(x).powf(*theta),
            Self::PolyNormPlusOne { q, theta } => 1.0 + q.chi(x).powf(*theta),
            Self::ExpNorm { q, zeta } => (zeta * q.chi(x)).exp(),
            Self::Custom(c) => (c.value.0)(x),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> DVector<f64> {
        match self {
            Self::Custom(c) => {
                let mut g = vec![0.0; x.len()];
                (c.gradient.0)(x, &mut g);
                DVector::from_vec(g)
            }
            _ => self.eval_all(x).1,
        }
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        match self {
            Self::Custom(c) => (c.hessian.0)(x),
            _ => self.eval_all(x).2,
        }
    }

    /// Value, gradient and Hessian together.
    pub fn eval_all(&self, x: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let (q, outer): (&QuadForm, Box<dyn Fn(f64) -> (f64, f64, f64)>) = match self {
            Self::PolyNorm { q, theta } | Self::PolyNormPlusOne { q, theta } => {
                let t = *theta;
                let shift = if matches!(self, Self::PolyNormPlusOne { .. }) { 1.0 } else { 0.0 };
                (q, Box::new(move |c: f64| (shift + c.powf(t), t * c.powf(t - 1.0), t * (t - 1.0) * c.powf(t - 2.0))))
            }
            Self::ExpNorm { q, zeta } => {
                let z = *zeta;
                (q, Box::new(move |c: f64| {
                    let e = (z * c).exp();
                    (e, z * e, z * z * e)
                }))
            }
            Self::Custom(c) => {
                let mut g = vec![0.0; x.len()];
                (c.gradient.0)(x, &mut g);
                return ((c.value.0)(x), DVector::from_vec(g), (c.hessian.0)(x));
            }
        };
        let (c, dc, hc) = q.chi_all(x);
        let (v, g1, g2) = outer(c);
        let hess = &dc * dc.transpose() * g2 + hc * g1;
        (v, dc * g1, hess)
    }
}

fn positive(v: f64, name: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config(format!("{name} must be positive, got {v}")))
    }
}

/// Lévy-type generator `⟨b,∇f⟩ + ½tr(a∇²f) + ∫(f(x+y) − f(x) − 1_B(y)⟨y,∇f(x)⟩)ν(dy)`
/// with the Lévy triplet's own drift and Gaussian part added to `b` and `a`.
#[derive(Clone, Debug)]
pub struct GeneratorSpec {
    pub dim: usize,
    pub drift: VectorFn,
    /// `None` means `a ≡ 0`.
    pub diffusion: Option<MatrixFn>,
    pub levy: LevyMeasureSpec,
    /// Whether the `1_B(y)⟨y,∇f⟩` compensator is part of the jump integral.
    pub jump_compensation: bool,
}

impl GeneratorSpec {
    pub fn new(dim: usize, drift: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        Self { dim, drift: VectorFn::new(drift), diffusion: None, levy: LevyMeasureSpec::none(), jump_compensation: true }
    }

    pub fn with_diffusion(mut self, a: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.diffusion = Some(MatrixFn::new(a));
        self
    }

    pub fn with_levy(mut self, levy: LevyMeasureSpec, jump_compensation: bool) -> Self {
        self.levy = levy;
        self.jump_compensation = jump_compensation;
        self
    }
}

/// Generator value with a Monte Carlo standard error (zero for exact or
/// quadrature-based evaluations).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorValue {
    pub value: f64,
    pub std_error: f64,
}

/// Applies the generator to `f` at `x`.
pub fn generator_apply(
    gen: &GeneratorSpec,
    f: &LyapunovFn,
    x: &[f64],
    jump_mc_samples: usize,
    seed: u64,
) -> Result<GeneratorValue> {
    if x.len() != gen.dim {
        return Err(domain(format!("point has dimension {} but the generator {}", x.len(), gen.dim)));
    }
    let (_, grad, hess) = f.eval_all(x);
    let mut b = vec![0.0; gen.dim];
    (gen.drift.0)(x, &mut b);
    let bl = gen.levy.drift_or_zero(gen.dim);
    let mut local: f64 = b.iter().zip(&bl).zip(grad.iter()).map(|((b, l), g)| (b + l) * g).sum();
    if let Some(a) = &gen.diffusion {
        local += 0.5 * (a.0(x) * &hess).trace();
    }
    if let Some(al) = &gen.levy.gaussian {
        local += 0.5 * (al * &hess).trace();
    }
    if !gen.levy.has_jumps() {
        return Ok(GeneratorValue { value: local, std_error: 0.0 });
    }
    check_integrable(&gen.levy, f.growth())?;
    let jump = jump_integral(&gen.levy, gen.jump_compensation, f, x, &grad, jump_mc_samples, seed)?;
    Ok(GeneratorValue { value: local + jump.value, std_error: jump.std_error })
}

fn check_integrable(levy: &LevyMeasureSpec, growth: Growth) -> Result<()> {
    match growth {
        Growth::Polynomial(theta) if theta > 0.0 && !levy.has_poly_moment(theta) => Err(Error::Integrability(format!(
            "polynomial growth of order {theta} is not integrable against the Lévy measure (moment supremum {})",
            levy.poly_moment_sup().0
        ))),
        Growth::Exponential(rate) if !(rate < levy.exp_moment_sup()) => Err(Error::Integrability(format!(
            "exponential growth at rate {rate} is not integrable against the Lévy measure (rate supremum {})",
            levy.exp_moment_sup()
        ))),
        _ => Ok(()),
    }
}

fn shifted(x: &[f64], dir: &[f64], r: f64) -> Vec<f64> {
    x.iter().zip(dir).map(|(a, d)| a + r * d).collect()
}

/// Keeps the first inner-quadrature failure so the outer integrand can stay infallible.
fn capture(r: Result<f64>, slot: &RefCell<Option<Error>>) -> f64 {
    r.unwrap_or_else(|e| {
        slot.borrow_mut().get_or_insert(e);
        0.0
    })
}

fn quad_opts() -> QuadOptions {
    QuadOptions { rel_tol: 1e-10, abs_tol: 1e-13, max_intervals: 4000 }
}

/// `∫₀^∞ (f(x+ru) + f(x−ru) − 2f(x)) r^{-1-α} dr`.
fn symmetric_radial(f: &LyapunovFn, x: &[f64], u: &[f64], alpha: f64) -> Result<f64> {
    let fx = f.eval(x);
    let curvature = |p: &[f64]| {
        let h = f.hessian(p);
        let hu = &h * DVector::from_column_slice(u);
        hu.dot(&DVector::from_column_slice(u))
    };
    // r² ∫₀¹ (1−s)(u'∇²f(x+sru)u + u'∇²f(x−sru)u) ds, divided by r²
    let taylor = |r: f64| -> Result<f64> {
        integrate(
            |s| (1.0 - s) * (curvature(&shifted(x, u, s * r)) + curvature(&shifted(x, u, -s * r))),
            0.0,
            1.0,
            quad_opts(),
        )
    };
    let e = 1.0 / (2.0 - alpha);
    let err = RefCell::new(None);
    let inner = integrate(|w| capture(taylor(w.powf(e)), &err), 0.0, 1.0, quad_opts())? * e;
    if let Some(e) = err.into_inner() {
        return Err(e);
    }
    let outer = integrate(
        |w| {
            let r = w.powf(-1.0 / alpha);
            f.eval(&shifted(x, u, r)) + f.eval(&shifted(x, u, -r)) - 2.0 * fx
        },
        0.0,
        1.0,
        quad_opts(),
    )? / alpha;
    Ok(inner + outer)
}

/// `∫₀^∞ (f(x+yd) − f(x) − comp·1_{y<1} y⟨d,∇f(x)⟩) y^{-1-α} dy`.
fn one_sided_radial(f: &LyapunovFn, x: &[f64], d: &[f64], alpha: f64, comp: bool) -> Result<f64> {
    let fx = f.eval(x);
    let dv = DVector::from_column_slice(d);
    let err = RefCell::new(None);
    let inner = if comp {
        let e = 1.0 / (2.0 - alpha);
        let g = |y: f64| {
            integrate(
                |s| {
                    let h = f.hessian(&shifted(x, d, s * y));
                    (1.0 - s) * (&h * &dv).dot(&dv)
                },
                0.0,
                1.0,
                quad_opts(),
            )
        };
        integrate(|w| capture(g(w.powf(e)), &err), 0.0, 1.0, quad_opts())? * e
    } else {
        let e = 1.0 / (1.0 - alpha);
        let g = |y: f64| integrate(|s| f.gradient(&shifted(x, d, s * y)).dot(&dv), 0.0, 1.0, quad_opts());
        integrate(|w| capture(g(w.powf(e)), &err), 0.0, 1.0, quad_opts())? * e
    };
    if let Some(e) = err.into_inner() {
        return Err(e);
    }
    let outer = integrate(|w| f.eval(&shifted(x, d, w.powf(-1.0 / alpha))) - fx, 0.0, 1.0, quad_opts())? / alpha;
    Ok(inner + outer)
}

fn jump_integral(
    levy: &LevyMeasureSpec,
    comp: bool,
    f: &LyapunovFn,
    x: &[f64],
    grad: &DVector<f64>,
    mc: usize,
    seed: u64,
) -> Result<GeneratorValue> {
    let n = x.len();
    let fx = f.eval(x);
    let increment = |y: &[f64]| {
        let mut v = f.eval(&shifted(x, y, 1.0)) - fx;
        if comp && norm(y) < 1.0 {
            v -= y.iter().zip(grad.iter()).map(|(a, b)| a * b).sum::<f64>();
        }
        v
    };
    let exact = |value| Ok(GeneratorValue { value, std_error: 0.0 });
    match &levy.kind {
        LevyKind::None => exact(0.0),
        LevyKind::CompoundPoisson { rate, jumps: JumpDist::Discrete { atoms, probs } } => {
            exact(rate * atoms.iter().zip(probs).map(|(a, p)| p * increment(a)).sum::<f64>())
        }
        LevyKind::CompoundPoisson { rate, jumps } => {
            if mc < 2 {
                return Err(config("Monte Carlo jump integral needs at least two samples"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut y = vec![0.0; n];
            let samples: Vec<f64> = (0..mc)
                .map(|_| {
                    jumps.sample(&mut rng, &mut y);
                    rate * increment(&y)
                })
                .collect();
            let (m, se) = mean_se(&samples);
            Ok(GeneratorValue { value: m, std_error: se })
        }
        LevyKind::SymmetricStable { alpha, scale, structure } => {
            let k = scale.powf(*alpha);
            if *structure == StableStructure::Independent || n == 1 {
                let c = k * symmetric_density_constant(*alpha);
                let mut total = 0.0;
                for i in 0..n {
                    let mut e = vec![0.0; n];
                    e[i] = 1.0;
                    total += c * symmetric_radial(f, x, &e, *alpha)?;
                }
                exact(total)
            } else {
                if mc < 2 {
                    return Err(config("Monte Carlo direction average needs at least two samples"));
                }
                let c = k * isotropic_radial_constant(*alpha, n);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let dirs: Vec<Vec<f64>> = (0..mc)
                    .map(|_| {
                        let mut u: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                        let r = norm(&u);
                        u.iter_mut().for_each(|v| *v /= r);
                        u
                    })
                    .collect();
                let samples =
                    dirs.iter().map(|u| symmetric_radial(f, x, u, *alpha).map(|v| c * v)).collect::<Result<Vec<_>>>()?;
                let (m, se) = mean_se(&samples);
                Ok(GeneratorValue { value: m, std_error: se })
            }
        }
        LevyKind::StableSubordinator { alpha, scale, direction } => {
            let c = scale.powf(*alpha) * alpha / statrs::function::gamma::gamma(1.0 - alpha);
            exact(c * one_sided_radial(f, x, direction, *alpha, comp)?)
        }
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Pointwise comparison of `ℒV` with `b·1_{B̄_r} − φ∘V`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DriftReport {
    pub grid: Vec<Vec<f64>>,
    pub lyapunov_value: Vec<f64>,
    /// `ℒV`.
    pub lhs: Vec<f64>,
    pub lhs_std_error: Vec<f64>,
    pub phi_of_v: Vec<f64>,
    /// `b·1_{B̄_r} − φ(V)`.
    pub rhs: Vec<f64>,
    pub margin: Vec<f64>,
    pub ball_radius: f64,
    pub constant_b: f64,
    pub worst_margin: f64,
}

impl DriftReport {
    /// Smallest margin over grid points outside the closed ball (`+∞` if none).
    pub fn worst_outside_margin(&self) -> f64 {
        self.grid
            .iter()
            .zip(&self.margin)
            .filter(|(x, _)| norm(x) > self.ball_radius)
            .map(|(_, m)| *m)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let n = self.grid.first().map_or(0, Vec::len);
        let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        header.extend(["lyapunov_value", "generator_value", "phi_of_v", "margin"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for (i, x) in self.grid.iter().enumerate() {
            let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            row.extend([self.lyapunov_value[i], self.lhs[i], self.phi_of_v[i], self.margin[i]].map(|v| v.to_string()));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Checks `ℒV ≤ b·1_{B̄_r} − φ∘V` on a grid.
///
/// With `ball_radius = None` the radius is the smallest one for which the
/// inequality holds at every grid point outside the ball with `b = 0`. The
/// constant `b` is then the smallest value making every margin inside the
/// ball nonnegative.
pub fn drift_check(
    gen: &GeneratorSpec,
    f: &LyapunovFn,
    phi: &PhiSpec,
    grid: &[Vec<f64>],
    ball_radius: Option<f64>,
    jump_mc_samples: usize,
    seed: u64,
) -> Result<DriftReport> {
    if grid.is_empty() {
        return Err(config("drift check grid is empty"));
    }
    let evals: Vec<(f64, GeneratorValue)> = grid
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let v = f.eval(x);
            let g = generator_apply(gen, f, x, jump_mc_samples, seed.wrapping_add(i as u64))?;
            Ok((v, g))
        })
        .collect::<Result<_>>()?;
    let mut phi_v = Vec::with_capacity(grid.len());
    for (v, _) in &evals {
        if !(*v >= 1.0) {
            return Err(domain(format!("Lyapunov value {v} below 1")));
        }
        phi_v.push(phi.eval_clamped(*v));
    }
    let excess: Vec<f64> = evals.iter().zip(&phi_v).map(|((_, g), p)| p + g.value).collect();
    let radius = ball_radius.unwrap_or_else(|| {
        grid.iter().zip(&excess).filter(|(_, e)| **e > 0.0).map(|(x, _)| norm(x)).fold(0.0, f64::max)
    });
    let inside = |x: &[f64]| norm(x) <= radius;
    let b = grid.iter().zip(&excess).filter(|(x, _)| inside(x)).map(|(_, e)| *e).fold(0.0, f64::max);
    let rhs: Vec<f64> = grid.iter().zip(&phi_v).map(|(x, p)| if inside(x) { b - p } else { -p }).collect();
    let margin: Vec<f64> = rhs.iter().zip(&evals).map(|(r, (_, g))| r - g.value).collect();
    let worst_margin = margin.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(DriftReport {
        grid: grid.to_vec(),
        lyapunov_value: evals.iter().map(|(v, _)| *v).collect(),
        lhs: evals.iter().map(|(_, g)| g.value).collect(),
        lhs_std_error: evals.iter().map(|(_, g)| g.std_error).collect(),
        phi_of_v: phi_v,
        rhs,
        margin,
        ball_radius: radius,
        constant_b: b,
        worst_margin,
    })
}

/// Worst value over `grid` of `𝔍_ν[Ṽ](x) / (Ṽ(x)·ζ^{3/2})` for `Ṽ = e^{ζχ_Q}`,
/// where `𝔍_ν f(x) = ∫(f(x+y) − f(x) − ⟨y,∇f(x)⟩)ν(dy)` is the fully
/// compensated jump integral.
pub fn exp_jump_bound_check(levy: &LevyMeasureSpec, q: &QuadForm, zeta: f64, grid: &[Vec<f64>]) -> Result<f64> {
    if !levy.has_jumps() {
        return Ok(0.0);
    }
    let f = LyapunovFn::exp(q.clone(), zeta)?;
    check_integrable(levy, f.growth())?;
    let dim = q.dim();
    let mut worst = f64::NEG_INFINITY;
    for x in grid {
        let (v, grad, _) = f.eval_all(x);
        let j = match &levy.kind {
            LevyKind::CompoundPoisson { rate, jumps: JumpDist::Discrete { atoms, probs } } => {
                rate * atoms
                    .iter()
                    .zip(probs)
                    .map(|(y, p)| {
                        let lin: f64 = y.iter().zip(grad.iter()).map(|(a, b)| a * b).sum();
                        p * (f.eval(&shifted(x, y, 1.0)) - v - lin)
                    })
                    .sum::<f64>()
            }
            _ => {
                // full compensation differs from the unit-ball one by −∫_{B^c}⟨y,∇f⟩ν(dy)
                let local = GeneratorSpec {
                    dim,
                    drift: VectorFn::new(|_, o| o.iter_mut().for_each(|v| *v = 0.0)),
                    diffusion: None,
                    levy: LevyMeasureSpec { drift: Vec::new(), gaussian: None, kind: levy.kind.clone() },
                    jump_compensation: true,
                };
                let base = generator_apply(&local, &f, x, 20_000, 0)?.value;
                base - big_jump_mean(levy, dim)?.iter().zip(grad.iter()).map(|(a, b)| a * b).sum::<f64>()
            }
        };
        worst = worst.max(j / (v * zeta.powf(1.5)));
    }
    Ok(worst)
}

/// `∫_{B^c} y ν(dy)` for measures with a first moment.
fn big_jump_mean(levy: &LevyMeasureSpec, dim: usize) -> Result<Vec<f64>> {
    match &levy.kind {
        LevyKind::CompoundPoisson { jumps: JumpDist::Laplace { .. }, .. } => Ok(vec![0.0; dim]),
        LevyKind::CompoundPoisson { jumps: JumpDist::Gaussian { mean, .. }, .. } if mean.iter().all(|m| *m == 0.0) => {
            Ok(vec![0.0; dim])
        }
        _ => Err(Error::Integrability("big-jump mean not available for this Lévy measure".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn square() -> LyapunovFn {
        LyapunovFn::custom(
            |x| x.iter().map(|v| v * v).sum(),
            |x, g| g.iter_mut().zip(x).for_each(|(g, x)| *g = 2.0 * x),
            |x| DMatrix::identity(x.len(), x.len()) * 2.0,
            Growth::Polynomial(2.0),
        )
    }

    #[test]
    fn chi_matches_norm_off_the_unit_ball() {
        let q = QuadForm::identity(1);
        assert_relative_eq!(q.chi(&[2.0]), 2.0);
        assert_eq!(q.chi(&[0.3]), q.chi(&[-0.3]));
        let q = QuadForm::diagonal(&[4.0, 1.0]).unwrap();
        assert_relative_eq!(q.chi(&[1.0, 0.0]), 2.0);
        assert_relative_eq!(QuadForm::identity(2).chi(&[0.0, 0.0]), 0.375);
    }

    #[test]
    fn lyapunov_values() {
        let q = QuadForm::identity(1);
        assert_relative_eq!(LyapunovFn::poly(q.clone(), 2.0).unwrap().eval(&[3.0]), 9.0, epsilon = 1e-12);
        assert_relative_eq!(LyapunovFn::poly_plus_one(q.clone(), 1.0).unwrap().eval(&[5.0]), 6.0);
        let e = LyapunovFn::exp(q, 1.0).unwrap().eval(&[0.0]);
        assert_relative_eq!(e, 0.375f64.exp());
        assert!(e >= 1.0);
    }

    #[test]
    fn rejects_indefinite_forms() {
        assert!(QuadForm::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])).is_err());
        assert!(QuadForm::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).is_err());
    }

    #[test]
    fn generator_examples() {
        let gen = GeneratorSpec::new(1, |_, o| o[0] = 1.0);
        assert_relative_eq!(generator_apply(&gen, &square(), &[3.0], 0, 0).unwrap().value, 6.0);
        let gen = GeneratorSpec::new(1, |_, o| o[0] = 0.0).with_diffusion(|_| DMatrix::from_element(1, 1, 2.0));
        assert_relative_eq!(generator_apply(&gen, &square(), &[-4.0], 0, 0).unwrap().value, 2.0);
        let gen = GeneratorSpec::new(1, |_, o| o[0] = 0.0).with_levy(
            LevyMeasureSpec::compound_poisson(2.0, JumpDist::Discrete { atoms: vec![vec![2.0]], probs: vec![1.0] }),
            true,
        );
        assert_relative_eq!(generator_apply(&gen, &square(), &[1.0], 0, 0).unwrap().value, 16.0);
    }

    #[test]
    fn stable_generator_on_quadratic_growth_is_rejected() {
        let gen = GeneratorSpec::new(1, |_, o| o[0] = 0.0)
            .with_levy(LevyMeasureSpec::symmetric_stable(1.5, 1.0, StableStructure::Isotropic), true);
        assert!(matches!(generator_apply(&gen, &square(), &[0.0], 0, 0), Err(Error::Integrability(_))));
    }

    #[test]
    fn stable_generator_matches_fractional_laplacian_of_gaussian() {
        // for f = e^{-x²/2}, −(−Δ)^{α/2} f(0) = −2^{α/2} Γ((1+α)/2)/√π via the Fourier transform
        let f = LyapunovFn::custom(
            |x| (-0.5 * x[0] * x[0]).exp(),
            |x, g| g[0] = -x[0] * (-0.5 * x[0] * x[0]).exp(),
            |x| DMatrix::from_element(1, 1, (x[0] * x[0] - 1.0) * (-0.5 * x[0] * x[0]).exp()),
            Growth::Polynomial(0.0),
        );
        for alpha in [0.5, 1.0, 1.5] {
            let gen = GeneratorSpec::new(1, |_, o| o[0] = 0.0)
                .with_levy(LevyMeasureSpec::symmetric_stable(alpha, 1.0, StableStructure::Isotropic), true);
            let v = generator_apply(&gen, &f, &[0.0], 0, 0).unwrap().value;
            let expect = -(2f64.powf(alpha / 2.0)) * statrs::function::gamma::gamma((1.0 + alpha) / 2.0)
                / std::f64::consts::PI.sqrt();
            assert_relative_eq!(v, expect, max_relative = 1e-7);
        }
    }

    #[test]
    fn subordinator_generator_on_exponential_matches_laplace_exponent() {
        // for f(x) = e^{-x}, ∫(f(x+y) − f(x))ν(dy) = −ψ(1) f(x) with ψ(u) = u^α
        let f = LyapunovFn::custom(
            |x| (-x[0]).exp(),
            |x, g| g[0] = -(-x[0]).exp(),
            |x| DMatrix::from_element(1, 1, (-x[0]).exp()),
            Growth::Polynomial(0.0),
        );
        let levy: LevyMeasureSpec = LevyKind::StableSubordinator { alpha: 0.5, scale: 2.0, direction: vec![1.0] }.into();
        let gen = GeneratorSpec::new(1, |_, o| o[0] = 0.0).with_levy(levy, false);
        let v = generator_apply(&gen, &f, &[0.3], 0, 0).unwrap().value;
        assert_relative_eq!(v, -(2f64).sqrt() * (-0.3f64).exp(), max_relative = 1e-7);
    }

    #[test]
    fn zero_process_drift_check_passes_only_in_ball() {
        let gen = GeneratorSpec::new(1, |_, o| o[0] = 0.0);
        let f = LyapunovFn::poly_plus_one(QuadForm::identity(1), 2.0).unwrap();
        let grid: Vec<Vec<f64>> = (-20..=20).map(|i| vec![i as f64 * 0.5]).collect();
        let rep = drift_check(&gen, &f, &PhiSpec::linear(0.1).unwrap(), &grid, Some(3.0), 0, 0).unwrap();
        assert!(rep.worst_outside_margin() < 0.0);
        assert!(rep.margin.iter().zip(&rep.grid).filter(|(_, x)| x[0].abs() <= 3.0).all(|(m, _)| *m >= 0.0));
    }

    #[test]
    fn ou_drift_check_finds_finite_ball() {
        let gen = GeneratorSpec::new(1, |x, o| o[0] = -x[0]);
        let f = LyapunovFn::poly_plus_one(QuadForm::identity(1), 2.0).unwrap();
        let grid: Vec<Vec<f64>> = (-100..=100).map(|i| vec![i as f64 * 0.1]).collect();
        let rep = drift_check(&gen, &f, &PhiSpec::linear(0.5).unwrap(), &grid, None, 0, 0).unwrap();
        // Outside the unit ball V = 1 + x², and −2x² + 0.5(x² + 1) < 0 there.
        assert!(rep.ball_radius < 1.0 && rep.ball_radius > 0.3, "{}", rep.ball_radius);
        assert!(rep.worst_margin >= 0.0);
    }

    #[test]
    fn exp_jump_ratio_two_point() {
        let q = QuadForm::identity(1);
        let levy = LevyMeasureSpec::compound_poisson(2.0, JumpDist::Discrete { atoms: vec![vec![0.5]], probs: vec![1.0] });
        let zeta = 0.1;
        let x = 3.0;
        let r = exp_jump_bound_check(&levy, &q, zeta, &[vec![x]]).unwrap();
        let expect = 2.0 * ((zeta * 0.5f64).exp() - 1.0 - zeta * 0.5) / zeta.powf(1.5);
        assert_relative_eq!(r, expect, max_relative = 1e-12);
        assert_eq!(exp_jump_bound_check(&LevyMeasureSpec::none(), &q, zeta, &[vec![x]]).unwrap(), 0.0);
    }
}
