use super::{w_1d, EmpiricalMeasure};
use crate::error::{domain, Result};

/// Piecewise-linear function on the line: linear interpolation between
/// knots, continued with the given end slopes outside them.
#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzFn {
    knots: Vec<f64>,
    values: Vec<f64>,
    left_slope: f64,
    right_slope: f64,
}

impl LipschitzFn {
    /// Flat outside `[knots[0], knots[last]]`.
    pub fn piecewise(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.is_empty() || knots.len() != values.len() {
            return Err(domain("need matching, nonempty knots and values"));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(domain("knots must be strictly increasing"));
        }
        Ok(Self { knots, values, left_slope: 0.0, right_slope: 0.0 })
    }

    pub fn affine(slope: f64, intercept: f64) -> Self {
        Self { knots: vec![0.0], values: vec![intercept], left_slope: slope, right_slope: slope }
    }

    pub fn constant(c: f64) -> Self {
        Self::affine(0.0, c)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = &self.knots;
        let last = k.len() - 1;
        if x <= k[0] {
            return self.values[0] + self.left_slope * (x - k[0]);
        }
        if x >= k[last] {
            return self.values[last] + self.right_slope * (x - k[last]);
        }
        let i = k.partition_point(|&t| t <= x) - 1;
        let w = (x - k[i]) / (k[i + 1] - k[i]);
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    pub fn lipschitz_constant(&self) -> f64 {
        let inner = self
            .knots
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(k, v)| ((v[1] - v[0]) / (k[1] - k[0])).abs())
            .fold(0.0, f64::max);
        inner.max(self.left_slope.abs()).max(self.right_slope.abs())
    }
}

#[derive(Clone, Debug)]
pub struct DualityReport {
    /// `max_f |∫f dμ − ∫f dν|` over the supplied test functions.
    pub lower_bound: f64,
    /// Index of the maximising test function.
    pub best: usize,
    pub w1: f64,
    /// `w1 − lower_bound`; nonnegative up to rounding.
    pub gap: f64,
}

/// Compares the Kantorovich–Rubinstein lower bound from a family of
/// 1-Lipschitz test functions against the exact `W₁`.
pub fn kr_duality_check(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, test_fns: &[LipschitzFn]) -> Result<DualityReport> {
    if test_fns.is_empty() {
        return Err(domain("need at least one test function"));
    }
    if let Some((i, f)) = test_fns.iter().enumerate().find(|(_, f)| f.lipschitz_constant() > 1.0 + 1e-12) {
        return Err(domain(format!("test function {i} has Lipschitz constant {}", f.lipschitz_constant())));
    }
    let w1 = w_1d(mu, nu, 1.0)?;
    let (best, lower_bound) = test_fns
        .iter()
        .map(|f| (mu.integrate(|x| f.eval(x[0])) - nu.integrate(|x| f.eval(x[0]))).abs())
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    Ok(DualityReport { lower_bound, best, w1, gap: w1 - lower_bound })
}
