//! Random time changes by subordinators and the induced transfer of
//! convergence rates, `r_ψ(t) = (E[r(S(t))^p])^{1/p}`.

use crate::error::{config, domain, Error, Result};
use crate::func::ScalarFn;
use crate::processes::stable::positive_stable_draw;
use crate::processes::TrajectoryBatch;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const CHUNK: usize = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SubordinatorKind {
    /// One-sided stable, `ψ(u) = u^α`.
    Stable { alpha: f64 },
    /// Gamma process, `ψ(u) = a·ln(1 + u/b̂)`.
    Gamma { shape_rate: f64, scale_rate: f64 },
    /// Pure drift.
    DriftOnly,
}

/// Subordinator with Laplace exponent `ψ(u) = b_S·u + ψ_kind(u)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubordinatorSpec {
    pub kind: SubordinatorKind,
    #[serde(default)]
    pub drift: f64,
}

impl SubordinatorSpec {
    pub fn stable(alpha: f64) -> Result<Self> {
        Self::new(SubordinatorKind::Stable { alpha }, 0.0)
    }

    pub fn gamma(shape_rate: f64, scale_rate: f64) -> Result<Self> {
        Self::new(SubordinatorKind::Gamma { shape_rate, scale_rate }, 0.0)
    }

    pub fn drift_only(drift: f64) -> Result<Self> {
        Self::new(SubordinatorKind::DriftOnly, drift)
    }

    pub fn new(kind: SubordinatorKind, drift: f64) -> Result<Self> {
        let s = Self { kind, drift };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.drift >= 0.0) || !self.drift.is_finite() {
            return Err(config("subordinator drift must be nonnegative"));
        }
        match self.kind {
            SubordinatorKind::Stable { alpha } if !(alpha > 0.0 && alpha < 1.0) => {
                Err(config(format!("stable subordinator index must lie in (0, 1), got {alpha}")))
            }
            SubordinatorKind::Gamma { shape_rate, scale_rate } if !(shape_rate > 0.0 && scale_rate > 0.0) => {
                Err(config("gamma subordinator rates must be positive"))
            }
            _ => Ok(()),
        }
    }

    /// Laplace exponent: `E e^{−uS(t)} = e^{−tψ(u)}`.
    pub fn laplace_exponent(&self, u: f64) -> f64 {
        self.drift * u
            + match self.kind {
                SubordinatorKind::Stable { alpha } => u.powf(alpha),
                SubordinatorKind::Gamma { shape_rate, scale_rate } => shape_rate * (u / scale_rate).ln_1p(),
                SubordinatorKind::DriftOnly => 0.0,
            }
    }

    /// One draw of `S(t)`.
    pub fn draw(&self, t: f64, rng: &mut ChaCha8Rng) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        let jump = match self.kind {
            SubordinatorKind::Stable { alpha } => t.powf(1.0 / alpha) * positive_stable_draw(alpha, rng),
            SubordinatorKind::Gamma { shape_rate, scale_rate } => {
                Gamma::new(shape_rate * t, 1.0 / scale_rate).expect("validated gamma parameters").sample(rng)
            }
            SubordinatorKind::DriftOnly => 0.0,
        };
        self.drift * t + jump
    }
}

/// `n` independent draws of `S(t)`.
pub fn sample_subordinator(spec: &SubordinatorSpec, t: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(domain(format!("time must be nonnegative, got {t}")));
    }
    let mut out = vec![0.0; n];
    out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        for v in chunk.iter_mut() {
            *v = spec.draw(t, &mut rng);
        }
    });
    Ok(out)
}

/// Bound profile `r(t)` of a convergence estimate `W_p(δ_x P_t, π) ≤ c(x)r(t)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateFunction {
    /// `scale·e^{−γt}`.
    Exponential { gamma: f64, scale: f64 },
    /// `scale·(1 + t)^{−exponent}`.
    Polynomial { exponent: f64, scale: f64 },
    Custom(ScalarFn),
}

impl RateFunction {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            RateFunction::Exponential { gamma, scale } => scale * (-gamma * t).exp(),
            RateFunction::Polynomial { exponent, scale } => scale * (1.0 + t).powf(-exponent),
            RateFunction::Custom(f) => (f.0)(&[t]),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            RateFunction::Exponential { gamma, scale } if !(*gamma > 0.0 && *scale > 0.0) => {
                Err(config("exponential rate needs positive γ and scale"))
            }
            RateFunction::Polynomial { exponent, scale } if !(*exponent > 0.0 && *scale > 0.0) => {
                Err(config("polynomial rate needs positive exponent and scale"))
            }
            _ => Ok(()),
        }
    }
}

/// Monte Carlo value of `r_ψ(t)` with a 95% interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateEstimate {
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Standard error of the `p`-th power mean before taking the root.
    pub std_error: f64,
    /// Closed form, when one is available for this rate/subordinator pair.
    pub exact: Option<f64>,
}

/// `r_ψ(t)` in closed form: `scale·e^{−tψ(pγ)/p}` for exponential rates, and
/// `r(b_S·t)` when the subordinator is a pure drift.
pub fn subordinate_rate_exact(r: &RateFunction, p: f64, spec: &SubordinatorSpec, t: f64) -> Option<f64> {
    match (r, spec.kind) {
        (RateFunction::Exponential { gamma, scale }, _) => Some(scale * (-t * spec.laplace_exponent(p * gamma) / p).exp()),
        (_, SubordinatorKind::DriftOnly) => Some(r.eval(spec.drift * t)),
        _ => None,
    }
}

/// Monte Carlo estimate of `r_ψ(t) = (E[r(S(t))^p])^{1/p}`.
pub fn subordinate_rate(
    r: &RateFunction,
    p: f64,
    spec: &SubordinatorSpec,
    t: f64,
    n_mc: usize,
    seed: u64,
) -> Result<RateEstimate> {
    r.validate()?;
    if !(p >= 1.0) {
        return Err(domain(format!("order p must be ≥ 1, got {p}")));
    }
    if n_mc < 2 {
        return Err(domain("need at least two Monte Carlo samples"));
    }
    let s = sample_subordinator(spec, t, n_mc, seed)?;
    let vals: Vec<f64> = s.par_iter().map(|&x| r.eval(x).powf(p)).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("r(S(t))^p is not finite for some samples".into()));
    }
    let n = n_mc as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    let root = |m: f64| m.max(0.0).powf(1.0 / p);
    Ok(RateEstimate {
        value: root(mean),
        ci_lo: root(mean - 1.96 * se),
        ci_hi: root(mean + 1.96 * se),
        std_error: se,
        exact: subordinate_rate_exact(r, p, spec, t),
    })
}

/// Result of a path-level time change.
#[derive(Clone, Debug)]
pub struct SubordinatedBatch {
    pub batch: TrajectoryBatch,
    /// Indices, in the source batch, of the paths that were kept.
    pub kept: Vec<usize>,
    /// Paths whose clock ran past the simulated horizon.
    pub dropped: usize,
}

/// `X^ψ(t) = X(S(t))` on `t_grid`, with an independent subordinator per path
/// built from increments (so `S` is nondecreasing along the grid) and the
/// path read at the last grid time not after `S(t)`.
pub fn subordinate_paths(
    batch: &TrajectoryBatch,
    spec: &SubordinatorSpec,
    t_grid: &[f64],
    seed: u64,
) -> Result<SubordinatedBatch> {
    spec.validate()?;
    if t_grid.is_empty() || t_grid.iter().any(|t| !(*t >= 0.0)) || t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(domain("time grid must be nonnegative and nondecreasing"));
    }
    let times = &batch.times;
    let Some(&horizon) = times.last() else {
        return Err(domain("source batch has no times"));
    };
    let clocks: Vec<Option<Vec<usize>>> = (0..batch.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(path as u64);
            let (mut s, mut prev) = (0.0, 0.0);
            let mut idx = Vec::with_capacity(t_grid.len());
            for &t in t_grid {
                s += spec.draw(t - prev, &mut rng);
                prev = t;
                let tol = 1e-9 * s.max(1.0);
                if s > horizon + tol {
                    return None;
                }
                let k = times.partition_point(|&u| u <= s + tol);
                if k == 0 {
                    return None;
                }
                idx.push(k - 1);
            }
            Some(idx)
        })
        .collect();
    let kept: Vec<usize> = (0..batch.n_paths).filter(|&p| clocks[p].is_some()).collect();
    let dropped = batch.n_paths - kept.len();
    if kept.is_empty() {
        return Err(Error::Horizon(format!(
            "all {} paths ran past the simulated horizon {horizon}",
            batch.n_paths
        )));
    }
    let mut data = Vec::with_capacity(kept.len() * t_grid.len() * batch.dim);
    for &p in &kept {
        for &k in clocks[p].as_ref().expect("kept") {
            data.extend_from_slice(batch.state(p, k));
        }
    }
    let mut hasher = Sha256::new();
    hasher.update(batch.spec_hash);
    hasher.update(serde_json::to_vec(spec)?);
    let out = TrajectoryBatch {
        times: t_grid.to_vec(),
        n_paths: kept.len(),
        dim: batch.dim,
        data,
        spec_hash: hasher.finalize().into(),
        seed,
    };
    Ok(SubordinatedBatch { batch: out, kept, dropped })
}
