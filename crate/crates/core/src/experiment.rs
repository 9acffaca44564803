//! Config-driven experiments: simulate from a point, measure the distance of
//! the marginal law to a reference on a time grid, fit a rate and compare it
//! with the exponents predicted by the rate calculus.

use crate::error::{config, Error, Result};
use crate::numerics::least_squares_line;
use crate::processes::{
    exact_marginals, invariant_exact, ou_exact_transition, ou_stationary_covariance, simulate_with, LevyKind,
    ProcessKind, ProcessSpec, SimOptions, TrajectoryBatch,
};
use crate::rate_calculus::{lower_exponent, upper_multiplier_w1, upper_multiplier_wp, LowerRateParams, UpperRateParams};
use crate::wasserstein::{
    sinkhorn_with, w2_gaussian, w_1d, w_exact_lp, w_p_to_normal_1d, EmpiricalMeasure, SinkhornOptions,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

const REFERENCE_SALT: u64 = 0x7265_6665_7265_6e63;
const FLOOR_SALT: u64 = 0x666c_6f6f_7200_0001;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeGrid {
    Explicit { times: Vec<f64> },
    Geometric { start: f64, end: f64, points: usize },
    Arithmetic { start: f64, end: f64, points: usize },
}

impl TimeGrid {
    /// Grid times in increasing order; for discrete-time processes they are
    /// rounded to integers and duplicates removed.
    pub fn times(&self, discrete: bool) -> Result<Vec<f64>> {
        let mut t: Vec<f64> = match *self {
            TimeGrid::Explicit { ref times } => times.clone(),
            TimeGrid::Geometric { start, end, points } => {
                if !(start > 0.0 && end > start) || points < 2 {
                    return Err(config("geometric grid needs 0 < start < end and at least 2 points"));
                }
                let r = (end / start).ln() / (points - 1) as f64;
                (0..points).map(|k| start * (r * k as f64).exp()).collect()
            }
            TimeGrid::Arithmetic { start, end, points } => {
                if !(start >= 0.0 && end > start) || points < 2 {
                    return Err(config("arithmetic grid needs 0 ≤ start < end and at least 2 points"));
                }
                let h = (end - start) / (points - 1) as f64;
                (0..points).map(|k| start + h * k as f64).collect()
            }
        };
        if t.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(config("grid times must be finite and nonnegative"));
        }
        if discrete {
            for x in t.iter_mut() {
                *x = x.round();
            }
        }
        t.sort_by(f64::total_cmp);
        t.dedup();
        if t.is_empty() {
            return Err(config("time grid is empty"));
        }
        Ok(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistanceKind {
    W1d,
    ExactLp,
    Sinkhorn { epsilon: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceSpec {
    /// Closed-form invariant law: the backward chain's product form, or the
    /// Gaussian law of an OU process driven by Brownian noise only.
    ExactInvariant,
    /// Empirical law at `t_burn` from independent paths.
    LongRunEmpirical { t_burn: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateModel {
    /// `log d` against `log t`; the estimate is the slope.
    Polynomial,
    /// `log d` against `t`; the estimate is the decay rate.
    Exponential,
}

fn default_slack() -> f64 {
    0.15
}

/// Parameters producing the predicted exponent interval of a polynomial fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BracketSpec {
    #[serde(default)]
    pub upper: Option<UpperRateParams>,
    #[serde(default)]
    pub lower: Option<LowerRateParams>,
    #[serde(default = "default_slack")]
    pub slack: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub process: ProcessSpec,
    pub x0: Vec<f64>,
    pub t_grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
    pub distance: DistanceKind,
    pub p: f64,
    pub reference: ReferenceSpec,
    pub rate_model: RateModel,
    #[serde(default)]
    pub bracket: Option<BracketSpec>,
    #[serde(default)]
    pub antithetic: bool,
    /// Drop grid points whose distance is below this multiple of the noise floor before fitting.
    #[serde(default)]
    pub fit_min_snr: Option<f64>,
    /// Directory for `distances.csv` and `summary.json`.
    #[serde(default)]
    pub out_dir: Option<String>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.process.validate()?;
        if self.x0.len() != self.process.dim() {
            return Err(config(format!("x0 has length {}, process has dimension {}", self.x0.len(), self.process.dim())));
        }
        if self.n_paths < 2 {
            return Err(config("need at least two paths"));
        }
        if !(self.p >= 1.0) || !self.p.is_finite() {
            return Err(config(format!("order p must be ≥ 1, got {}", self.p)));
        }
        self.t_grid.times(self.process.is_discrete_time())?;
        if let DistanceKind::Sinkhorn { epsilon } = self.distance {
            if !(epsilon > 0.0) {
                return Err(config("sinkhorn epsilon must be positive"));
            }
        }
        if matches!(self.distance, DistanceKind::W1d) && self.process.dim() != 1 {
            return Err(config("w1d distance needs a one-dimensional process"));
        }
        if let ReferenceSpec::LongRunEmpirical { t_burn } = self.reference {
            if !(t_burn > 0.0 && t_burn.is_finite()) {
                return Err(config("t_burn must be positive"));
            }
        }
        if self.reference == ReferenceSpec::ExactInvariant && !has_exact_invariant(&self.process) {
            return Err(config("exact_invariant reference needs a backward chain or a Brownian OU process"));
        }
        if let Some(b) = &self.bracket {
            if self.rate_model != RateModel::Polynomial {
                return Err(config("exponent brackets apply to polynomial fits only"));
            }
            if !(b.slack >= 0.0) {
                return Err(config("bracket slack must be nonnegative"));
            }
            if let Some(l) = &b.lower {
                l.validate()?;
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the JSON form.
    pub fn hash_hex(&self) -> String {
        let text = serde_json::to_string(self).unwrap_or_else(|_| format!("{self:?}"));
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn brownian_ou(spec: &ProcessSpec) -> Option<(&DMatrix<f64>, DMatrix<f64>)> {
    match &spec.kind {
        ProcessKind::OuJump { h, levy } if levy.kind == LevyKind::None && levy.drift.iter().all(|d| *d == 0.0) => {
            let n = h.nrows();
            Some((h, levy.gaussian.clone().unwrap_or_else(|| DMatrix::zeros(n, n))))
        }
        _ => None,
    }
}

fn has_exact_invariant(spec: &ProcessSpec) -> bool {
    matches!(spec.kind, ProcessKind::BackwardRecurrence(_)) || brownian_ou(spec).is_some()
}

/// Exponent interval a polynomial fit is compared against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    /// `lower_exponent` of the lower-bound parameters, if given.
    pub lower_exponent: Option<f64>,
    /// Log-log slope of the upper envelope `1/multiplier` over the fitted times.
    pub upper_slope: Option<f64>,
    /// Admissible slopes after slack, `None` meaning unbounded on that side.
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub slack: f64,
    pub contains: bool,
    pub lower_params: Option<LowerRateParams>,
    pub upper_params: Option<UpperRateParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub model: RateModel,
    /// Slope for polynomial fits, decay rate (positive when decaying) for exponential ones.
    pub estimate: f64,
    /// Prefactor on the original scale.
    pub intercept: f64,
    pub r_squared: f64,
    /// Residuals in the transformed domain, one per fitted point.
    pub residuals: Vec<f64>,
    pub times: Vec<f64>,
    pub bracket: Option<Bracket>,
}

/// Least-squares fit of `log values` against `log t` or `t`.
pub fn fit_rate(times: &[f64], values: &[f64], model: RateModel) -> Result<RateFit> {
    if times.len() != values.len() {
        return Err(config("times and values differ in length"));
    }
    let (ts, vs): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(values)
        .filter(|(t, v)| **v > 0.0 && v.is_finite() && (model == RateModel::Exponential || **t > 0.0))
        .map(|(t, v)| (*t, *v))
        .unzip();
    if ts.len() < 4 {
        return Err(Error::DegenerateData(format!("{} usable positive values, need 4", ts.len())));
    }
    let (vmin, vmax) = vs.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
    let span = vmax / vmin;
    let need = match model {
        RateModel::Polynomial => 10.0,
        RateModel::Exponential => std::f64::consts::E,
    };
    if span < need {
        return Err(Error::DegenerateData(format!("values span a factor {span:.3}, need {need:.3}")));
    }
    let x: Vec<f64> = match model {
        RateModel::Polynomial => ts.iter().map(|t| t.ln()).collect(),
        RateModel::Exponential => ts.clone(),
    };
    let y: Vec<f64> = vs.iter().map(|v| v.ln()).collect();
    let (slope, icpt) = least_squares_line(&x, &y)?;
    let residuals: Vec<f64> = x.iter().zip(&y).map(|(x, y)| y - (icpt + slope * x)).collect();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let r_squared = (1.0 - ss_res / ss_tot).clamp(0.0, 1.0);
    let estimate = match model {
        RateModel::Polynomial => slope,
        RateModel::Exponential => -slope,
    };
    Ok(RateFit { model, estimate, intercept: icpt.exp(), r_squared, residuals, times: ts, bracket: None })
}

/// Slope interval `[-lower_exponent, upper_slope]`, each end widened by `slack` times its size.
pub fn bracket_for(spec: &BracketSpec, p: f64, times: &[f64], slope: f64) -> Result<Bracket> {
    let lower_exponent = spec.lower.as_ref().map(lower_exponent).transpose()?;
    let upper_slope = match &spec.upper {
        Some(u) => {
            let pos: Vec<f64> = times.iter().copied().filter(|t| *t > 0.0).collect();
            let x: Vec<f64> = pos.iter().map(|t| t.ln()).collect();
            let y = pos
                .iter()
                .map(|t| {
                    let m = if p == 1.0 { upper_multiplier_w1(u, *t) } else { upper_multiplier_wp(u, *t) }?;
                    Ok(-m.ln())
                })
                .collect::<Result<Vec<f64>>>()?;
            Some(least_squares_line(&x, &y)?.0)
        }
        None => None,
    };
    let lo = lower_exponent.map(|l| -l - spec.slack * l.abs());
    let hi = upper_slope.map(|u| u + spec.slack * u.abs());
    let contains = lo.is_none_or(|lo| slope >= lo) && hi.is_none_or(|hi| slope <= hi);
    Ok(Bracket {
        lower_exponent,
        upper_slope,
        lo,
        hi,
        slack: spec.slack,
        contains,
        lower_params: spec.lower.clone(),
        upper_params: spec.upper.clone(),
    })
}

enum Reference {
    Measure(EmpiricalMeasure),
    Gaussian { mean: DVector<f64>, cov: DMatrix<f64> },
}

impl Reference {
    fn sample(&self, n: usize, seed: u64) -> Result<EmpiricalMeasure> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            Reference::Measure(m) => {
                let mut cdf = Vec::with_capacity(m.len());
                let mut acc = 0.0;
                for w in m.weights() {
                    acc += w;
                    cdf.push(acc);
                }
                let d = m.dim();
                let mut pts = Vec::with_capacity(n * d);
                for _ in 0..n {
                    let u: f64 = rng.random::<f64>() * acc;
                    let k = cdf.partition_point(|c| *c <= u).min(m.len() - 1);
                    pts.extend_from_slice(m.point(k));
                }
                EmpiricalMeasure::uniform(pts, d)
            }
            Reference::Gaussian { mean, cov } => {
                let d = mean.len();
                let l = cov
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::Numerical("reference covariance is not positive definite".into()))?
                    .l();
                let mut pts = Vec::with_capacity(n * d);
                for _ in 0..n {
                    let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                    pts.extend((mean + &l * z).iter());
                }
                EmpiricalMeasure::uniform(pts, d)
            }
        }
    }
}

fn build_reference(cfg: &ExperimentConfig) -> Result<Reference> {
    match cfg.reference {
        ReferenceSpec::ExactInvariant => match &cfg.process.kind {
            ProcessKind::BackwardRecurrence(chain) => {
                let mut n = (chain.i0 * 10).max(10_000);
                loop {
                    match invariant_exact(chain, n) {
                        Ok(pi) => return Ok(Reference::Measure(EmpiricalMeasure::on_integers(&pi)?)),
                        Err(_) if n < 1 << 26 => n *= 2,
                        Err(e) => return Err(e),
                    }
                }
            }
            _ => {
                let (h, a) = brownian_ou(&cfg.process).ok_or_else(|| config("no closed-form invariant law"))?;
                let cov = ou_stationary_covariance(h, &a)?;
                Ok(Reference::Gaussian { mean: DVector::zeros(h.nrows()), cov })
            }
        },
        ReferenceSpec::LongRunEmpirical { t_burn } => {
            let t = if cfg.process.is_discrete_time() { t_burn.round() } else { t_burn };
            let b = simulate_with(&cfg.process, &cfg.x0, &[t], cfg.n_paths, cfg.seed ^ REFERENCE_SALT, &sim_opts(cfg))?;
            Ok(Reference::Measure(EmpiricalMeasure::uniform(b.marginal(0), b.dim)?))
        }
    }
}

fn sim_opts(cfg: &ExperimentConfig) -> SimOptions {
    SimOptions { antithetic: cfg.antithetic }
}

fn distance(cfg: &ExperimentConfig, mu: &EmpiricalMeasure, reference: &Reference, seed: u64) -> Result<f64> {
    if let (DistanceKind::W1d, Reference::Gaussian { mean, cov }) = (&cfg.distance, reference) {
        return w_p_to_normal_1d(mu, mean[0], cov[(0, 0)].sqrt(), cfg.p);
    }
    let sampled;
    let nu = match reference {
        Reference::Measure(m) => m,
        Reference::Gaussian { .. } => {
            sampled = reference.sample(mu.len(), seed)?;
            &sampled
        }
    };
    match cfg.distance {
        DistanceKind::W1d => w_1d(mu, nu, cfg.p),
        DistanceKind::ExactLp => Ok(w_exact_lp(mu, nu, cfg.p)?.distance()),
        DistanceKind::Sinkhorn { epsilon } => Ok(sinkhorn_with(mu, nu, cfg.p, &SinkhornOptions::new(epsilon))?.distance()),
    }
}

/// Closed-form distance of the exact marginal law to the exact invariant law, where available.
fn exact_column(cfg: &ExperimentConfig, times: &[f64], reference: &Reference) -> Result<Option<Vec<f64>>> {
    if cfg.reference != ReferenceSpec::ExactInvariant {
        return Ok(None);
    }
    match (&cfg.process.kind, reference) {
        (ProcessKind::BackwardRecurrence(chain), Reference::Measure(pi)) if cfg.distance == DistanceKind::W1d => {
            let x0 = cfg.x0[0];
            if !(x0 >= 0.0 && x0.fract() == 0.0) {
                return Err(config("backward chain starts from a nonnegative integer"));
            }
            let ts: Vec<u64> = times.iter().map(|t| *t as u64).collect();
            let laws = exact_marginals(chain, x0 as u64, &ts);
            let d = laws
                .par_iter()
                .map(|law| w_1d(&EmpiricalMeasure::on_integers(law)?, pi, cfg.p))
                .collect::<Result<Vec<f64>>>()?;
            Ok(Some(d))
        }
        (_, Reference::Gaussian { mean, cov }) if cfg.p == 2.0 => {
            let (h, a) = brownian_ou(&cfg.process).expect("Gaussian reference comes from an OU spec");
            let d = times
                .iter()
                .map(|t| {
                    let g = ou_exact_transition(h, &a, *t, &cfg.x0)?;
                    w2_gaussian(g.mean.as_slice(), &g.cov, mean.as_slice(), cov)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(Some(d))
        }
        _ => Ok(None),
    }
}

/// One grid point of `distances.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub t: f64,
    pub distance: f64,
    pub exact: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config_hash: String,
    pub fit: Option<RateFit>,
    /// Why the fit is missing, when it is.
    pub fit_error: Option<String>,
    pub bracket: Option<Bracket>,
    /// Fit of the closed-form column, when there is one.
    pub exact_fit: Option<RateFit>,
    pub noise_floor: f64,
    pub runtime_s: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub rows: Vec<DistanceRow>,
    pub summary: ExperimentSummary,
    pub batch: TrajectoryBatch,
}

pub fn write_distances_csv<W: Write>(rows: &[DistanceRow], mut w: W) -> Result<()> {
    writeln!(w, "t,distance,exact")?;
    for r in rows {
        match r.exact {
            Some(e) => writeln!(w, "{},{},{}", r.t, r.distance, e)?,
            None => writeln!(w, "{},{},", r.t, r.distance)?,
        }
    }
    Ok(())
}

/// Runs the experiment without touching the file system.
pub fn evaluate(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let start = Instant::now();
    cfg.validate()?;
    let times = cfg.t_grid.times(cfg.process.is_discrete_time())?;
    let reference = build_reference(cfg)?;
    let batch = simulate_with(&cfg.process, &cfg.x0, &times, cfg.n_paths, cfg.seed, &sim_opts(cfg))?;
    let distances = (0..times.len())
        .into_par_iter()
        .map(|k| {
            let mu = EmpiricalMeasure::uniform(batch.marginal(k), batch.dim)?;
            distance(cfg, &mu, &reference, cfg.seed ^ REFERENCE_SALT ^ k as u64)
        })
        .collect::<Result<Vec<f64>>>()?;

    let noise_floor = match cfg.reference {
        ReferenceSpec::ExactInvariant => {
            let s = reference.sample(cfg.n_paths, cfg.seed ^ FLOOR_SALT)?;
            distance(cfg, &s, &reference, cfg.seed ^ FLOOR_SALT ^ 1)?
        }
        ReferenceSpec::LongRunEmpirical { t_burn } => {
            let t = if cfg.process.is_discrete_time() { t_burn.round() } else { t_burn };
            let b = simulate_with(&cfg.process, &cfg.x0, &[t], cfg.n_paths, cfg.seed ^ FLOOR_SALT, &sim_opts(cfg))?;
            distance(cfg, &EmpiricalMeasure::uniform(b.marginal(0), b.dim)?, &reference, 0)?
        }
    };

    let exact = exact_column(cfg, &times, &reference)?;
    let rows: Vec<DistanceRow> = times
        .iter()
        .enumerate()
        .map(|(k, t)| DistanceRow { t: *t, distance: distances[k], exact: exact.as_ref().map(|e| e[k]) })
        .collect();

    let kept: Vec<&DistanceRow> =
        rows.iter().filter(|r| cfg.fit_min_snr.is_none_or(|snr| r.distance > snr * noise_floor)).collect();
    let fit_t: Vec<f64> = kept.iter().map(|r| r.t).collect();
    let fit_v: Vec<f64> = kept.iter().map(|r| r.distance).collect();
    let (fit, fit_error) = match fit_rate(&fit_t, &fit_v, cfg.rate_model) {
        Ok(mut f) => {
            if let Some(b) = &cfg.bracket {
                f.bracket = Some(bracket_for(b, cfg.p, &f.times, f.estimate)?);
            }
            (Some(f), None)
        }
        Err(e @ Error::DegenerateData(_)) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    let exact_fit = match &exact {
        Some(e) => fit_rate(&times, e, cfg.rate_model).ok().map(|mut f| {
            if let Some(b) = &cfg.bracket {
                f.bracket = bracket_for(b, cfg.p, &f.times, f.estimate).ok();
            }
            f
        }),
        None => None,
    };
    let summary = ExperimentSummary {
        config_hash: cfg.hash_hex(),
        bracket: fit.as_ref().and_then(|f| f.bracket.clone()),
        fit,
        fit_error,
        exact_fit,
        noise_floor,
        runtime_s: start.elapsed().as_secs_f64(),
    };
    Ok(ExperimentOutcome { rows, summary, batch })
}

/// Runs the experiment and writes `distances.csv` and `summary.json` into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutcome> {
    let outcome = evaluate(cfg)?;
    std::fs::create_dir_all(out_dir)?;
    let csv = std::fs::File::create(out_dir.join("distances.csv"))?;
    let mut csv = std::io::BufWriter::new(csv);
    write_distances_csv(&outcome.rows, &mut csv)?;
    csv.flush()?;
    let json = serde_json::to_string_pretty(&outcome.summary)?;
    std::fs::write(out_dir.join("summary.json"), json)?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processes::LevyMeasureSpec;
    use approx::assert_relative_eq;
    use rand_distr::Distribution;

    #[test]
    fn exact_power_law_fit() {
        let t: Vec<f64> = (1..=20).map(|k| k as f64).collect();
        let v: Vec<f64> = t.iter().map(|t| t.powi(-2)).collect();
        let f = fit_rate(&t, &v, RateModel::Polynomial).unwrap();
        assert_relative_eq!(f.estimate, -2.0, epsilon = 1e-12);
        assert_relative_eq!(f.r_squared, 1.0, epsilon = 1e-12);
        assert_relative_eq!(f.intercept, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn exact_exponential_fit() {
        let t: Vec<f64> = (0..10).map(|k| k as f64 * 0.5).collect();
        let v: Vec<f64> = t.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        let f = fit_rate(&t, &v, RateModel::Exponential).unwrap();
        assert_relative_eq!(f.estimate, 0.7, epsilon = 1e-12);
        assert_relative_eq!(f.intercept, 3.0, epsilon = 1e-10);
    }

    #[test]
    fn noisy_power_law_within_a_tenth() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = rand_distr::Normal::new(0.0, 0.1).unwrap();
        let t: Vec<f64> = (0..30).map(|k| 10f64.powf(k as f64 / 10.0)).collect();
        let v: Vec<f64> = t.iter().map(|t| 5.0 * t.powf(-1.5) * (1.0 + noise.sample(&mut rng))).collect();
        let f = fit_rate(&t, &v, RateModel::Polynomial).unwrap();
        assert!((f.estimate + 1.5).abs() < 0.1, "{}", f.estimate);
    }

    #[test]
    fn degenerate_inputs() {
        let t = [1.0, 2.0, 3.0, 4.0];
        assert!(matches!(fit_rate(&t, &[1.0, 0.9, 0.8, 0.7], RateModel::Polynomial), Err(Error::DegenerateData(_))));
        assert!(matches!(fit_rate(&t[..3], &[1.0, 0.1, 0.01], RateModel::Polynomial), Err(Error::DegenerateData(_))));
        assert!(matches!(fit_rate(&t, &[1.0, 0.9, 0.8, 0.5], RateModel::Exponential), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn grids() {
        let g = TimeGrid::Geometric { start: 10.0, end: 1e4, points: 4 }.times(false).unwrap();
        assert_relative_eq!(g[1], 100.0, max_relative = 1e-12);
        let d = TimeGrid::Geometric { start: 1.0, end: 3.0, points: 20 }.times(true).unwrap();
        assert_eq!(d, vec![1.0, 2.0, 3.0]);
        assert!(TimeGrid::Arithmetic { start: 1.0, end: 0.0, points: 3 }.times(false).is_err());
    }

    fn ou_config() -> ExperimentConfig {
        let h = DMatrix::from_element(1, 1, -1.0);
        let spec = ProcessSpec::ou(h, LevyMeasureSpec::gaussian(DMatrix::from_element(1, 1, 1.0))).unwrap();
        ExperimentConfig {
            process: spec.with_max_step(1e-2).unwrap(),
            x0: vec![2.0],
            t_grid: TimeGrid::Arithmetic { start: 0.5, end: 3.0, points: 6 },
            n_paths: 4000,
            seed: 9,
            distance: DistanceKind::W1d,
            p: 2.0,
            reference: ReferenceSpec::ExactInvariant,
            rate_model: RateModel::Exponential,
            bracket: None,
            antithetic: true,
            fit_min_snr: None,
            out_dir: None,
        }
    }

    #[test]
    fn config_round_trip_is_idempotent() {
        let cfg = ou_config();
        let a = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&a).unwrap();
        assert_eq!(a, serde_json::to_string(&back).unwrap());
    }

    #[test]
    fn ou_decay_rate_is_recovered() {
        let out = evaluate(&ou_config()).unwrap();
        let fit = out.summary.fit.unwrap();
        assert!((fit.estimate - 1.0).abs() < 0.15, "{}", fit.estimate);
        let exact = out.summary.exact_fit.unwrap();
        assert!((exact.estimate - 1.0).abs() < 0.02, "{}", exact.estimate);
        assert!(out.summary.noise_floor < out.rows.last().unwrap().distance);
    }

    #[test]
    fn exact_reference_rejected_without_closed_form() {
        let mut cfg = ou_config();
        cfg.process = ProcessSpec::ou(
            DMatrix::from_element(1, 1, -1.0),
            LevyMeasureSpec::compound_poisson(1.0, crate::processes::JumpDist::Laplace { scale: 1.0, dim: 1 }),
        )
        .unwrap();
        assert!(matches!(evaluate(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn backward_chain_is_deterministic_and_has_exact_column() {
        let cfg = ExperimentConfig {
            process: ProcessSpec::backward_recurrence(3.0, 5).unwrap(),
            x0: vec![0.0],
            t_grid: TimeGrid::Geometric { start: 2.0, end: 200.0, points: 8 },
            n_paths: 2000,
            seed: 3,
            distance: DistanceKind::W1d,
            p: 1.0,
            reference: ReferenceSpec::ExactInvariant,
            rate_model: RateModel::Polynomial,
            bracket: None,
            antithetic: false,
            fit_min_snr: None,
            out_dir: None,
        };
        let dir = std::env::temp_dir().join(format!("ergorate-exp-{}", std::process::id()));
        let a = run_experiment(&cfg, &dir.join("a")).unwrap();
        let b = run_experiment(&cfg, &dir.join("b")).unwrap();
        let ca = std::fs::read(dir.join("a/distances.csv")).unwrap();
        let cb = std::fs::read(dir.join("b/distances.csv")).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a.rows, b.rows);
        assert!(a.rows.iter().all(|r| r.exact.is_some()));
        let exact = a.summary.exact_fit.unwrap();
        assert!(exact.estimate < -1.0, "{}", exact.estimate);
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn zero_noise_piecewise_flow_contracts_to_minus_one() {
        use crate::processes::{Control, PiecewiseOuSpec, SigmaSpec};
        let spec = PiecewiseOuSpec {
            l: vec![-1.0],
            m: DMatrix::from_element(1, 1, 1.0),
            gamma: vec![0.0],
            control: Control::Constant { v: vec![1.0] },
            sigma: SigmaSpec::zero(1),
            levy: LevyMeasureSpec::none(),
        };
        let process = ProcessSpec::new(ProcessKind::PiecewiseOu(spec)).unwrap().with_max_step(1e-3).unwrap();
        let t_grid = vec![0.0, 1.0, 2.0, 3.0, 5.0, 8.0];
        let b = simulate_with(&process, &[2.0], &t_grid, 2, 1, &SimOptions::default()).unwrap();
        // x − t up to t = x, then e^{x−t} − 1
        let flow = |t: f64| if t <= 2.0 { 2.0 - t } else { (2.0 - t).exp() - 1.0 };
        for (k, t) in t_grid.iter().enumerate() {
            assert!((b.state(0, k)[0] - flow(*t)).abs() < 5e-3, "t = {t}");
        }
        let d: Vec<f64> = t_grid.iter().enumerate().skip(3).map(|(k, _)| (b.state(0, k)[0] + 1.0).abs()).collect();
        assert!(d.windows(2).all(|w| w[1] < w[0]));
    }
}
