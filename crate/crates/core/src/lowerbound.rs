//! Constructive lower bounds on `W_p(δ_x P_t, π)` from heavy invariant tails:
//! test functions `f_s = (L − s/2)⁺`, a grid choice of levels `s_n`, and the
//! matching times `t_n`.

use crate::error::{domain, Error, Result};
use crate::func::ScalarFn;
use crate::rate_calculus::LowerRateParams;
use crate::wasserstein::EmpiricalMeasure;
use std::io::Write;

/// The Lipschitz level function `L ≥ 0`.
#[derive(Clone, Debug)]
pub enum LevelFn {
    /// `L(x) = |x|`, Lipschitz constant 1.
    Norm,
    Custom { f: ScalarFn, lip: f64 },
}

impl LevelFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            LevelFn::Norm => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            LevelFn::Custom { f, .. } => (f.0)(x),
        }
    }

    pub fn lip(&self) -> f64 {
        match self {
            LevelFn::Norm => 1.0,
            LevelFn::Custom { lip, .. } => *lip,
        }
    }
}

/// Invariant law, as far as its tail `π(L > s)` is concerned.
#[derive(Clone, Debug)]
pub enum InvariantTail {
    /// Exact discrete law or an empirical sample.
    Measure(EmpiricalMeasure),
    /// Synthetic tail `π(L > s) = min(1, (s/scale)^{−exponent})`.
    Power { scale: f64, exponent: f64 },
    /// Any other tail function `s ↦ π(L > s)`.
    Custom(ScalarFn),
}

/// Everything the construction needs. The divergence of `∫L^{ϑ+ε}dπ` is an
/// assumption on `pi`; only the finite-level inequality is checked.
#[derive(Clone, Debug)]
pub struct LowerBoundInstance {
    pub pi: InvariantTail,
    pub level: LevelFn,
    /// `c` with `V ≥ c·L^θ` and `φ∘V ≥ c·L^ϑ`.
    pub c: f64,
    /// Drift constant: `E_x V(X_t) ≤ V(x) + b·t`.
    pub b: f64,
    pub params: LowerRateParams,
    pub x0: Vec<f64>,
    /// `V(x0)`.
    pub v_x0: f64,
}

impl LowerBoundInstance {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.c > 0.0 && self.b > 0.0 && self.v_x0 >= 0.0) {
            return Err(domain("need c > 0, b > 0 and V(x0) ≥ 0"));
        }
        if !(self.level.lip() > 0.0) || !self.level.lip().is_finite() {
            return Err(domain("level function needs a positive Lipschitz constant"));
        }
        if let InvariantTail::Power { scale, exponent } = self.pi {
            if !(scale > 0.0 && exponent > 0.0) {
                return Err(domain("power tail needs positive scale and exponent"));
            }
        }
        Ok(())
    }
}

/// `π({x : L(x) > s})`.
pub fn tail_mass(pi: &InvariantTail, level: &LevelFn, s: f64) -> f64 {
    match pi {
        InvariantTail::Measure(m) => {
            (0..m.len()).filter(|&i| level.eval(m.point(i)) > s).map(|i| m.weights()[i]).sum::<f64>().min(1.0)
        }
        InvariantTail::Power { scale, exponent } => (s / scale).powf(-exponent).min(1.0),
        InvariantTail::Custom(f) => (f.0)(&[s]).clamp(0.0, 1.0),
    }
}

/// `ln` of both sides of `(s/2)^p·π(L > s) ≥ 2^p·s^{p−ϑ−ε−ϵ}`.
fn level_inequality(inst: &LowerBoundInstance, s: f64) -> (f64, f64) {
    let LowerRateParams { vartheta, eps_var, eps_small, p, .. } = inst.params;
    let mass = tail_mass(&inst.pi, &inst.level, s);
    let lhs = p * (s / 2.0).ln() + mass.ln();
    let rhs = p * 2f64.ln() + (p - vartheta - eps_var - eps_small) * s.ln();
    (lhs, rhs)
}

/// The smallest `n_terms` levels of `s_grid` (sorted ascending) at which the
/// tail inequality holds.
pub fn select_sn(inst: &LowerBoundInstance, n_terms: usize, s_grid: &[f64]) -> Result<Vec<f64>> {
    inst.validate()?;
    let qualifying = qualifying_levels(inst, s_grid)?;
    if qualifying.len() < n_terms {
        return Err(insufficient(inst, n_terms, qualifying.len(), s_grid));
    }
    Ok(qualifying[..n_terms].to_vec())
}

fn qualifying_levels(inst: &LowerBoundInstance, s_grid: &[f64]) -> Result<Vec<f64>> {
    if s_grid.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(domain("level grid must be positive and finite"));
    }
    let mut grid = s_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(grid
        .into_iter()
        .filter(|&s| {
            let (l, r) = level_inequality(inst, s);
            l >= r
        })
        .collect())
}

fn insufficient(inst: &LowerBoundInstance, want: usize, got: usize, s_grid: &[f64]) -> Error {
    let worst = s_grid
        .iter()
        .map(|&s| (s, level_inequality(inst, s)))
        .max_by(|a, b| (a.1 .0 - a.1 .1).total_cmp(&(b.1 .0 - b.1 .1)));
    let detail = match worst {
        Some((s, (l, r))) => format!("; closest level s = {s:e} has ln lhs = {l:.4}, ln rhs = {r:.4}"),
        None => String::new(),
    };
    Error::InsufficientTail(format!("{got} of {want} levels satisfy the tail inequality{detail}"))
}

/// Time `t` with `s^{θ−ϑ−ε−ϵ} = (2^{θ−p}/c)(b·t + V(x0))`.
pub fn tn_from_sn(inst: &LowerBoundInstance, s: f64) -> Result<f64> {
    let LowerRateParams { theta, p, .. } = inst.params;
    let t = (inst.c * 2f64.powf(p - theta) * s.powf(inst.params.gap()) - inst.v_x0) / inst.b;
    if !(t >= 0.0) {
        return Err(domain(format!("level s = {s:e} is too small for V(x0) = {}: t = {t:e}", inst.v_x0)));
    }
    Ok(t)
}

/// `(1/Lip L)·[((s/2)^p π(L>s))^{1/p} − ((2^{θ−p}/c)·s^{p−θ}·(b·t + V(x0)))^{1/p}]`,
/// a lower bound on `W_p(δ_{x0} P_t, π)` for any `s, t > 0`.
pub fn bound_at(inst: &LowerBoundInstance, s: f64, t: f64) -> f64 {
    let LowerRateParams { theta, p, .. } = inst.params;
    let mass = tail_mass(&inst.pi, &inst.level, s);
    let stationary = (s / 2.0) * mass.powf(1.0 / p);
    let transient =
        (2f64.powf(theta - p) / inst.c * s.powf(p - theta) * (inst.b * t + inst.v_x0)).powf(1.0 / p);
    (stationary - transient) / inst.level.lip()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LowerBoundCurve {
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    pub bound: Vec<f64>,
}

impl LowerBoundCurve {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,s_n,t_n,bound")?;
        for k in 0..self.s.len() {
            writeln!(w, "{},{},{},{}", k + 1, self.s[k], self.t[k], self.bound[k])?;
        }
        Ok(())
    }
}

/// Pairs `(t_n, bound_n)` for the first `n_terms` qualifying levels of
/// `s_grid` whose matching time is nonnegative.
pub fn lower_bound_curve(inst: &LowerBoundInstance, n_terms: usize, s_grid: &[f64]) -> Result<LowerBoundCurve> {
    inst.validate()?;
    if n_terms == 0 {
        return Err(domain("need at least one term"));
    }
    let qualifying = qualifying_levels(inst, s_grid)?;
    if qualifying.len() < n_terms {
        return Err(insufficient(inst, n_terms, qualifying.len(), s_grid));
    }
    let mut curve = LowerBoundCurve { s: Vec::new(), t: Vec::new(), bound: Vec::new() };
    for s in qualifying {
        if curve.len() == n_terms {
            break;
        }
        let Ok(t) = tn_from_sn(inst, s) else { continue };
        curve.s.push(s);
        curve.t.push(t);
        curve.bound.push(bound_at(inst, s, t));
    }
    if curve.len() < n_terms {
        return Err(domain(format!(
            "only {} qualifying levels give nonnegative times; extend the grid upwards",
            curve.len()
        )));
    }
    Ok(curve)
}
