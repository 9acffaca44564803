//! Backward recurrence time chain on `{0, 1, …}`: from `i` move to `i + 1`
//! with probability `p_i`, otherwise reset to `0`.

use crate::error::{config, Result};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

/// Chain with `p_0 = 1`, `p_i = 1/2` for `1 ≤ i < i0` and
/// `p_i = 1 − (1+α)/i` for `i ≥ i0`, whose invariant law has tail
/// `π(i) ~ i^{−(1+α)}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackwardRecurrence {
    pub alpha: f64,
    pub i0: u64,
}

impl BackwardRecurrence {
    pub fn new(alpha: f64, i0: u64) -> Result<Self> {
        let b = Self { alpha, i0 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 1.0) || !self.alpha.is_finite() {
            return Err(config(format!("backward recurrence needs alpha > 1, got {}", self.alpha)));
        }
        if !(self.i0 as f64 > 1.0 + self.alpha) {
            return Err(config(format!("backward recurrence needs i0 > 1 + alpha, got i0 = {}", self.i0)));
        }
        Ok(())
    }

    /// Probability of moving up from state `i`.
    pub fn p(&self, i: u64) -> f64 {
        if i == 0 {
            1.0
        } else if i < self.i0 {
            0.5
        } else {
            1.0 - (1.0 + self.alpha) / i as f64
        }
    }
}

/// Invariant law on `{0, …, truncation}`, renormalised after truncation.
///
/// Errors when the discarded tail mass could reach `1e-12`, using the bound
/// `Σ_{k≥N} Π_{j≤k} p_j ≤ Π_{j≤N} p_j·(1 + (N+1)/α)`.
pub fn invariant_exact(chain: &BackwardRecurrence, truncation: u64) -> Result<Vec<f64>> {
    chain.validate()?;
    if truncation < chain.i0 {
        return Err(config("truncation must reach at least i0"));
    }
    let n = truncation as usize;
    let mut w = Vec::with_capacity(n + 1);
    w.push(1.0);
    // w[i] = Π_{j=0}^{i-1} p_j
    let mut prod = 1.0;
    for i in 1..=n {
        prod *= chain.p(i as u64 - 1);
        w.push(prod);
    }
    let last = prod * chain.p(truncation);
    let tail = last * (1.0 + (truncation as f64 + 1.0) / chain.alpha);
    let total: f64 = w.iter().sum();
    if tail / total >= 1e-12 {
        return Err(config(format!("truncation {truncation} leaves tail mass up to {:.3e}", tail / total)));
    }
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// Exact invariant mass of `{k ≥ m}`, with no truncation.
///
/// Past `i0` the unnormalised weights are `w_k = w_{i0}·Γ(k−a)Γ(i0)/(Γ(i0−a)Γ(k))`
/// with `a = 1 + α`, and they telescope:
/// `Σ_{k≥m} Γ(k−a)/Γ(k) = Γ(m−a)/((a−1)Γ(m−1))`.
pub fn invariant_tail(chain: &BackwardRecurrence, m: u64) -> f64 {
    let a = 1.0 + chain.alpha;
    let i0 = chain.i0;
    // head[k] = w_k for k < i0, and w_{i0}
    let mut head = Vec::with_capacity(i0 as usize + 1);
    let mut prod = 1.0;
    head.push(prod);
    for k in 1..=i0 {
        prod *= chain.p(k - 1);
        head.push(prod);
    }
    let w_i0 = head[i0 as usize];
    let log_c = ln_gamma(i0 as f64) - ln_gamma(i0 as f64 - a);
    let tail_from = |m: u64| -> f64 {
        let m = m as f64;
        w_i0 * (log_c + ln_gamma(m - a) - ln_gamma(m - 1.0)).exp() / (a - 1.0)
    };
    let total = head[..i0 as usize].iter().sum::<f64>() + tail_from(i0);
    if m >= i0 {
        tail_from(m) / total
    } else {
        (head[m as usize..i0 as usize].iter().sum::<f64>() + tail_from(i0)) / total
    }
}

/// `sup_{i ≤ up_to} (PV(i) − V(i))⁺`, the additive drift constant `b` in
/// `E_i V(X_1) ≤ V(i) + b`. Beyond the scan the drift of `V(i) = i^θ + 1` with
/// `θ < 1 + α` is negative, so a moderate `up_to` is enough for those `V`.
pub fn drift_bound(chain: &BackwardRecurrence, v: impl Fn(f64) -> f64, up_to: u64) -> f64 {
    (0..=up_to)
        .map(|i| {
            let p = chain.p(i);
            p * v(i as f64 + 1.0) + (1.0 - p) * v(0.0) - v(i as f64)
        })
        .fold(0.0, f64::max)
}

/// Exact law of `X_t` started from `x0`, on `{0, …, x0 + t}`.
pub fn exact_marginal(chain: &BackwardRecurrence, x0: u64, t: u64) -> Vec<f64> {
    exact_marginals(chain, x0, &[t]).pop().unwrap()
}

/// Exact laws of `X_t` for each `t` in `times` (any order), from one sweep.
pub fn exact_marginals(chain: &BackwardRecurrence, x0: u64, times: &[u64]) -> Vec<Vec<f64>> {
    let horizon = times.iter().copied().max().unwrap_or(0);
    let size = (x0 + horizon) as usize + 1;
    let mut cur = vec![0.0; size];
    cur[x0 as usize] = 1.0;
    let mut top = x0 as usize;
    let mut next = vec![0.0; size];
    let mut out = vec![Vec::new(); times.len()];
    let mut record = |t: u64, cur: &[f64], top: usize| {
        for (k, &tk) in times.iter().enumerate() {
            if tk == t {
                out[k] = cur[..=top].to_vec();
            }
        }
    };
    record(0, &cur, top);
    for t in 1..=horizon {
        let mut reset = 0.0;
        for i in 0..=top {
            let p = chain.p(i as u64);
            next[i + 1] = cur[i] * p;
            reset += cur[i] * (1.0 - p);
        }
        next[0] = reset;
        top += 1;
        std::mem::swap(&mut cur, &mut next);
        record(t, &cur, top);
    }
    out
}
