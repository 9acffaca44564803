//! Rate-generating functions φ and the convergence rates derived from them.
//!
//! Given a nondecreasing concave `φ: [1, ∞) → (0, ∞)`, the drift condition
//! `E V(X_t) - V(x) ≤ b∫1_C - ∫φ∘V` yields the rate `r(t) = φ(Φ⁻¹(t))` with
//! `Φ(t) = ∫₁ᵗ ds/φ(s)`. This module evaluates these objects, the growth
//! multipliers that turn them into Wasserstein bounds, and the exponent of
//! the matching lower bound.

use crate::error::{domain, Result};
use crate::numerics::{integrate, monotone_solve, QuadOptions};
use serde::{Deserialize, Serialize};

const BRACKET_CAP: f64 = 18_446_744_073_709_551_616.0; // 2^64

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhiSpec {
    /// `φ(t) = slope · t`.
    Linear { slope: f64 },
    /// `φ(t) = prefactor · t^κ` with `κ ∈ (0, 1)`.
    Power { kappa: f64, prefactor: f64 },
    /// Piecewise-linear interpolation of `values` on `grid`.
    Tabulated { grid: Vec<f64>, values: Vec<f64> },
}

impl PhiSpec {
    pub fn linear(slope: f64) -> Result<Self> {
        let s = PhiSpec::Linear { slope };
        s.validate()?;
        Ok(s)
    }

    pub fn power(kappa: f64, prefactor: f64) -> Result<Self> {
        let s = PhiSpec::Power { kappa, prefactor };
        s.validate()?;
        Ok(s)
    }

    pub fn tabulated(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let s = PhiSpec::Tabulated { grid, values };
        s.validate()?;
        Ok(s)
    }

    /// Checks positivity, monotonicity and concavity.
    pub fn validate(&self) -> Result<()> {
        match self {
            PhiSpec::Linear { slope } => {
                if !(*slope > 0.0 && slope.is_finite()) {
                    return Err(domain(format!("linear slope must be positive, got {slope}")));
                }
            }
            PhiSpec::Power { kappa, prefactor } => {
                if !(*kappa > 0.0 && *kappa < 1.0) {
                    return Err(domain(format!("power exponent must lie in (0,1), got {kappa}")));
                }
                if !(*prefactor > 0.0 && prefactor.is_finite()) {
                    return Err(domain(format!("prefactor must be positive, got {prefactor}")));
                }
            }
            PhiSpec::Tabulated { grid, values } => {
                if grid.len() < 2 || grid.len() != values.len() {
                    return Err(domain("tabulated φ needs at least two nodes and one value per node"));
                }
                if grid[0] < 1.0 {
                    return Err(domain(format!("tabulated grid must start at or above 1, got {}", grid[0])));
                }
                if grid.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(domain("tabulated grid must be strictly increasing"));
                }
                if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(domain("tabulated values must be positive"));
                }
                let slopes: Vec<f64> = grid
                    .windows(2)
                    .zip(values.windows(2))
                    .map(|(g, v)| (v[1] - v[0]) / (g[1] - g[0]))
                    .collect();
                if let Some(s) = slopes.iter().find(|s| **s < 0.0) {
                    return Err(domain(format!("tabulated φ is decreasing (slope {s})")));
                }
                for w in slopes.windows(2) {
                    if w[1] > w[0] * (1.0 + 1e-12) + 1e-15 {
                        return Err(domain(format!(
                            "tabulated φ is not concave: slope increases from {} to {}",
                            w[0], w[1]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn check_t(&self, t: f64) -> Result<()> {
        if !(t >= 1.0) {
            return Err(domain(format!("φ is defined on [1, ∞), got t = {t}")));
        }
        if let PhiSpec::Tabulated { grid, .. } = self {
            let (lo, hi) = (grid[0], grid[grid.len() - 1]);
            if t < lo || t > hi {
                return Err(domain(format!("t = {t} outside tabulated range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// `φ(t)`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.eval_unchecked(t))
    }

    pub(crate) fn eval_unchecked(&self, t: f64) -> f64 {
        match self {
            PhiSpec::Linear { slope } => slope * t,
            PhiSpec::Power { kappa, prefactor } => prefactor * t.powf(*kappa),
            PhiSpec::Tabulated { grid, values } => {
                let k = grid.partition_point(|g| *g <= t).clamp(1, grid.len() - 1);
                let (x0, x1) = (grid[k - 1], grid[k]);
                let (y0, y1) = (values[k - 1], values[k]);
                y0 + (y1 - y0) * (t - x0) / (x1 - x0)
            }
        }
    }

    /// `φ(t)` extended below 1 by its value at 1; used for `φ∘V` when a
    /// Lyapunov function dips below 1 inside the unit ball.
    pub(crate) fn eval_clamped(&self, t: f64) -> f64 {
        match self {
            PhiSpec::Tabulated { grid, values } => {
                if t <= grid[0] {
                    values[0]
                } else if t >= grid[grid.len() - 1] {
                    values[values.len() - 1]
                } else {
                    self.eval_unchecked(t)
                }
            }
            _ => self.eval_unchecked(t.max(1.0)),
        }
    }

    /// Largest `t` at which φ is defined.
    pub fn upper_end(&self) -> f64 {
        match self {
            PhiSpec::Tabulated { grid, .. } => grid[grid.len() - 1],
            _ => f64::INFINITY,
        }
    }

    /// `Φ(t) = ∫₁ᵗ ds/φ(s)`, closed form for linear and power φ.
    pub fn big_phi(&self, t: f64) -> Result<f64> {
        self.check_t(t)?;
        match self {
            PhiSpec::Linear { slope } => Ok(t.ln() / slope),
            PhiSpec::Power { kappa, prefactor } => {
                Ok((t.powf(1.0 - kappa) - 1.0) / ((1.0 - kappa) * prefactor))
            }
            PhiSpec::Tabulated { .. } => self.big_phi_quadrature(t),
        }
    }

    /// `Φ(t)` by adaptive quadrature of `1/φ`, for any kind of φ.
    ///
    /// Tabulated φ are integrated node to node so that every piece is smooth.
    /// For the other kinds the range is split geometrically for the same
    /// reason the tabulated case is split: a single GK panel over `[1, 10⁶]`
    /// resolves `1/φ` poorly near 1.
    pub fn big_phi_quadrature(&self, t: f64) -> Result<f64> {
        self.check_t(t)?;
        let opts = QuadOptions { rel_tol: 1e-12, ..QuadOptions::default() };
        let f = |s: f64| 1.0 / self.eval_unchecked(s);
        let mut breaks = vec![1.0];
        match self {
            PhiSpec::Tabulated { grid, .. } => {
                if grid[0] > 1.0 {
                    return Err(domain("tabulated φ must cover t = 1 to define Φ"));
                }
                breaks.extend(grid.iter().copied().filter(|g| *g > 1.0 && *g < t));
            }
            _ => {
                let mut b = 2.0;
                while b < t {
                    breaks.push(b);
                    b *= 2.0;
                }
            }
        }
        breaks.push(t);
        let mut total = 0.0;
        for w in breaks.windows(2) {
            total += integrate(f, w[0], w[1], opts)?;
        }
        Ok(total)
    }

    /// `Φ⁻¹(u)`, closed form for linear and power φ.
    pub fn big_phi_inv(&self, u: f64) -> Result<f64> {
        if !(u >= 0.0) {
            return Err(domain(format!("Φ⁻¹ needs u ≥ 0, got {u}")));
        }
        match self {
            PhiSpec::Linear { slope } => Ok((slope * u).exp()),
            PhiSpec::Power { kappa, prefactor } => {
                Ok((1.0 + (1.0 - kappa) * prefactor * u).powf(1.0 / (1.0 - kappa)))
            }
            PhiSpec::Tabulated { .. } => self.big_phi_inv_numeric(u),
        }
    }

    /// `Φ⁻¹(u)` by bracketed bisection on the quadrature route of Φ.
    ///
    /// Returns `s` with `|Φ(s) - u| ≤ 1e-10·(1 + u)`.
    pub fn big_phi_inv_numeric(&self, u: f64) -> Result<f64> {
        if !(u >= 0.0) {
            return Err(domain(format!("Φ⁻¹ needs u ≥ 0, got {u}")));
        }
        if u == 0.0 {
            return Ok(1.0);
        }
        let top = self.upper_end();
        if top.is_finite() {
            let reach = self.big_phi_quadrature(top)?;
            if u > reach {
                return Err(domain(format!("u = {u} exceeds Φ over the tabulated range ({reach})")));
            }
        }
        let tol = 1e-10 * (1.0 + u);
        let g = |s: f64| -> Result<f64> {
            if s > top {
                Ok(f64::INFINITY)
            } else {
                self.big_phi_quadrature(s)
            }
        };
        let s = monotone_solve(g, u, 1.0, tol, BRACKET_CAP)?;
        Ok(s.min(top))
    }

    /// `r(t) = φ(Φ⁻¹(t))`.
    pub fn rate(&self, t: f64) -> Result<f64> {
        let s = self.big_phi_inv(t)?;
        self.eval(s.min(self.upper_end()))
    }

    /// `r(t)` with Φ⁻¹ always taken by the numeric route.
    pub fn rate_numeric(&self, t: f64) -> Result<f64> {
        let s = self.big_phi_inv_numeric(t)?;
        self.eval(s.min(self.upper_end()))
    }
}

/// Free-function spellings of the φ operations.
pub fn phi_eval(spec: &PhiSpec, t: f64) -> Result<f64> {
    spec.eval(t)
}

pub fn big_phi(spec: &PhiSpec, t: f64) -> Result<f64> {
    spec.big_phi(t)
}

pub fn big_phi_inv(spec: &PhiSpec, u: f64) -> Result<f64> {
    spec.big_phi_inv(u)
}

pub fn rate_r(spec: &PhiSpec, t: f64) -> Result<f64> {
    spec.rate(t)
}

/// Parameters of the upper bounds: moment order `p ∈ [1, η]`, growth `η ≥ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpperRateParams {
    pub eta: f64,
    pub p: f64,
    pub phi: PhiSpec,
}

impl UpperRateParams {
    pub fn new(eta: f64, p: f64, phi: PhiSpec) -> Result<Self> {
        if !(eta >= 1.0) {
            return Err(domain(format!("η must be ≥ 1, got {eta}")));
        }
        if !(p >= 1.0 && p <= eta) {
            return Err(domain(format!("p must lie in [1, η] = [1, {eta}], got {p}")));
        }
        phi.validate()?;
        Ok(Self { eta, p, phi })
    }
}

/// `1 ∨ r(t)^{(η-1)/η}`: the factor by which `W₁(δₓP_t, π)` is guaranteed
/// to shrink relative to `c̄·V(x)`.
pub fn upper_multiplier_w1(params: &UpperRateParams, t: f64) -> Result<f64> {
    let exponent = (params.eta - 1.0) / params.eta;
    if exponent == 0.0 {
        return Ok(1.0);
    }
    Ok(params.phi.rate(t)?.powf(exponent).max(1.0))
}

/// `1 ∨ (t^{(η-p)/p} ∧ t^{(1-p)/p}) r(t)^{(η-1)/(pη)}` for `W_p`.
pub fn upper_multiplier_wp(params: &UpperRateParams, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(domain(format!("t must be ≥ 0, got {t}")));
    }
    let (eta, p) = (params.eta, params.p);
    let r_exp = (eta - 1.0) / (p * eta);
    let r_term = if r_exp == 0.0 { 1.0 } else { params.phi.rate(t)?.powf(r_exp) };
    let t_term = t.powf((eta - p) / p).min(t.powf((1.0 - p) / p));
    let m = t_term * r_term;
    Ok(if m.is_nan() { 1.0 } else { m.max(1.0) })
}

/// `1 ∨ t^{η/p - 1}`, the `W_p` multiplier when φ is linear.
pub fn upper_multiplier_wp_linear(eta: f64, p: f64, t: f64) -> Result<f64> {
    if !(p >= 1.0 && p <= eta) {
        return Err(domain(format!("p must lie in [1, η] = [1, {eta}], got {p}")));
    }
    Ok(t.powf(eta / p - 1.0).max(1.0))
}

/// Growth constants of the lower bound: `θ > ϑ ≥ 1`, slack `ε`, `ϵ`, order `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerRateParams {
    pub theta: f64,
    pub vartheta: f64,
    pub eps_var: f64,
    pub eps_small: f64,
    pub p: f64,
}

impl LowerRateParams {
    pub fn new(theta: f64, vartheta: f64, eps_var: f64, eps_small: f64, p: f64) -> Result<Self> {
        let s = Self { theta, vartheta, eps_var, eps_small, p };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let Self { theta, vartheta, eps_var, eps_small, p } = *self;
        if !(vartheta >= 1.0 && theta > vartheta) {
            return Err(domain(format!("need θ > ϑ ≥ 1, got θ = {theta}, ϑ = {vartheta}")));
        }
        if !(eps_var > 0.0 && eps_var < theta - vartheta) {
            return Err(domain(format!("ε must lie in (0, θ-ϑ), got {eps_var}")));
        }
        if !(eps_small > 0.0 && eps_small < theta - vartheta - eps_var) {
            return Err(domain(format!("ϵ must lie in (0, θ-ϑ-ε), got {eps_small}")));
        }
        if !(p >= 1.0 && p <= vartheta) {
            return Err(domain(format!("p must lie in [1, ϑ], got {p}")));
        }
        Ok(())
    }

    /// `θ - ϑ - ε - ϵ`.
    pub fn gap(&self) -> f64 {
        self.theta - self.vartheta - self.eps_var - self.eps_small
    }
}

/// Decay exponent of the lower bound `(t_n + V(x))^{-exponent}`:
/// `(ϑ - p + ε + ϵ) / ((θ - ϑ - ε - ϵ) p)`.
pub fn lower_exponent(params: &LowerRateParams) -> Result<f64> {
    let denom = params.gap() * params.p;
    if !(denom > 0.0) {
        return Err(domain(format!("lower exponent denominator is {denom}")));
    }
    Ok((params.vartheta - params.p + params.eps_var + params.eps_small) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use std::f64::consts::E;

    fn tab() -> PhiSpec {
        PhiSpec::tabulated(vec![1.0, 2.0, 3.0], vec![1.0, 1.5, 1.75]).unwrap()
    }

    #[test]
    fn phi_eval_examples() {
        assert_eq!(PhiSpec::linear(1.0).unwrap().eval(2.0).unwrap(), 2.0);
        assert!((PhiSpec::power(0.5, 1.0).unwrap().eval(4.0).unwrap() - 2.0).abs() < 1e-15);
        // Linear interpolation between (2, 1.5) and (3, 1.75).
        assert!((tab().eval(2.5).unwrap() - 1.625).abs() < 1e-15);
    }

    #[test]
    fn phi_eval_domain_errors() {
        assert!(matches!(PhiSpec::linear(1.0).unwrap().eval(0.5), Err(Error::Domain(_))));
        assert!(matches!(tab().eval(3.5), Err(Error::Domain(_))));
    }

    #[test]
    fn concavity_validation() {
        assert!(PhiSpec::tabulated(vec![1.0, 2.0, 3.0], vec![1.0, 1.5, 2.5]).is_err());
        assert!(PhiSpec::tabulated(vec![1.0, 2.0, 3.0], vec![1.0, 0.5, 0.4]).is_err());
        assert!(PhiSpec::tabulated(vec![1.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(PhiSpec::power(1.0, 1.0).is_err());
        assert!(PhiSpec::linear(0.0).is_err());
    }

    #[test]
    fn big_phi_examples() {
        let pw = PhiSpec::power(0.5, 1.0).unwrap();
        let lin2 = PhiSpec::linear(2.0).unwrap();
        assert_eq!(pw.big_phi(1.0).unwrap(), 0.0);
        assert_eq!(tab().big_phi(1.0).unwrap(), 0.0);
        // ∫₁⁴ s^{-1/2} ds = 2 and ∫₁^{e²} ds/(2s) = 1, by quadrature.
        assert!((pw.big_phi_quadrature(4.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((lin2.big_phi_quadrature(E * E).unwrap() - 1.0).abs() < 1e-12);
        assert!((pw.big_phi(4.0).unwrap() - 2.0).abs() < 1e-14);
        assert!((lin2.big_phi(E * E).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn tabulated_big_phi_matches_segment_logs() {
        // On each linear piece ∫ ds/(y0 + m(s-x0)) = ln(y1/y0)/m.
        let expect = (1.5f64 / 1.0).ln() / 0.5 + (1.75f64 / 1.5).ln() / 0.25;
        assert!((tab().big_phi(3.0).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn big_phi_inv_examples() {
        let pw = PhiSpec::power(0.5, 1.0).unwrap();
        let lin = PhiSpec::linear(1.0).unwrap();
        assert_eq!(pw.big_phi_inv(0.0).unwrap(), 1.0);
        assert_eq!(tab().big_phi_inv(0.0).unwrap(), 1.0);
        assert!((pw.big_phi_inv_numeric(2.0).unwrap() - 4.0).abs() < 1e-9);
        assert!((lin.big_phi_inv_numeric(1.0).unwrap() - E).abs() < 1e-9);
        assert!((pw.big_phi_inv(2.0).unwrap() - 4.0).abs() < 1e-14);
        assert!((lin.big_phi_inv(1.0).unwrap() - E).abs() < 1e-14);
        assert!(matches!(tab().big_phi_inv(100.0), Err(Error::Domain(_))));
        assert!(lin.big_phi_inv(-1.0).is_err());
    }

    #[test]
    fn rate_examples() {
        let pw = PhiSpec::power(0.5, 1.0).unwrap();
        let lin = PhiSpec::linear(1.0).unwrap();
        assert!((pw.rate(2.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((pw.rate_numeric(2.0).unwrap() - 2.0).abs() < 1e-9);
        // r(t) = ĉ e^{ĉt}.
        assert!((lin.rate(1.0).unwrap() - E).abs() < 1e-12);
        assert!((lin.rate_numeric(1.0).unwrap() - E).abs() < 1e-9);
        assert_eq!(tab().rate(0.0).unwrap(), 1.0);
        let lin3 = PhiSpec::linear(3.0).unwrap();
        assert_eq!(lin3.rate(0.0).unwrap(), 3.0);
    }

    #[test]
    fn multiplier_examples() {
        let pw = PhiSpec::power(0.5, 1.0).unwrap();
        let p1 = UpperRateParams::new(1.0, 1.0, pw.clone()).unwrap();
        assert_eq!(upper_multiplier_w1(&p1, 123.0).unwrap(), 1.0);
        let p2 = UpperRateParams::new(2.0, 1.0, pw.clone()).unwrap();
        assert!((upper_multiplier_w1(&p2, 2.0).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(upper_multiplier_w1(&p2, 0.0).unwrap(), 1.0);

        for t in [0.0, 0.5, 3.0, 50.0] {
            assert_eq!(upper_multiplier_wp(&p1, t).unwrap(), 1.0);
        }
        let p22 = UpperRateParams::new(2.0, 2.0, pw.clone()).unwrap();
        let r4 = pw.rate(4.0).unwrap();
        let want = (4f64.powf(-0.5) * r4.powf(0.25)).max(1.0);
        assert!((upper_multiplier_wp(&p22, 4.0).unwrap() - want).abs() < 1e-14);
        // p = η collapses the min onto t^{(1-p)/p} once t ≥ 1.
        for t in [1.0f64, 10.0, 1000.0] {
            let want = (t.powf(-0.5) * pw.rate(t).unwrap().powf(0.25)).max(1.0);
            assert!((upper_multiplier_wp(&p22, t).unwrap() - want).abs() < 1e-12);
        }

        assert_eq!(upper_multiplier_wp_linear(2.0, 2.0, 17.0).unwrap(), 1.0);
        assert!((upper_multiplier_wp_linear(2.0, 1.0, 3.0).unwrap() - 3.0).abs() < 1e-14);
        assert!((upper_multiplier_wp_linear(3.0, 2.0, 4.0).unwrap() - 2.0).abs() < 1e-14);
        assert!(upper_multiplier_wp_linear(2.0, 3.0, 4.0).is_err());
        assert!(UpperRateParams::new(2.0, 3.0, pw).is_err());
    }

    #[test]
    fn lower_exponent_examples() {
        let p = LowerRateParams::new(3.0, 1.0, 0.5, 0.5, 1.0).unwrap();
        // (1 - 1 + 0.5 + 0.5) / ((3 - 1 - 0.5 - 0.5) * 1) = 1
        assert!((lower_exponent(&p).unwrap() - 1.0).abs() < 1e-15);

        // Backward recurrence: θ = 1+α-ρ, ϑ = α-ρ.
        let (alpha, rho, e1, e2, pp) = (3.0, 0.1, 0.2, 0.3, 1.5);
        let p = LowerRateParams::new(1.0 + alpha - rho, alpha - rho, e1, e2, pp).unwrap();
        let want = (alpha - rho - pp + e1 + e2) / ((1.0 - e1 - e2) * pp);
        assert!((lower_exponent(&p).unwrap() - want).abs() < 1e-14);

        // p = ϑ with vanishing slack gives a vanishing exponent.
        let p = LowerRateParams::new(3.0, 2.0, 1e-9, 1e-9, 2.0).unwrap();
        assert!(lower_exponent(&p).unwrap() < 1e-8);

        assert!(LowerRateParams::new(2.0, 2.0, 0.1, 0.1, 1.0).is_err());
        assert!(LowerRateParams::new(3.0, 1.0, 1.5, 0.6, 1.0).is_err());
        assert!(LowerRateParams::new(3.0, 1.5, 0.5, 0.5, 2.0).is_err());
    }
}
