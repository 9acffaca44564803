//! Synchronous coupling experiments and the uniform dissipativity calculus
//! behind exponential `W_p` contraction.

use crate::error::{domain, Error, Result};
use crate::func::{KernelFn, MatrixFn, VectorFn};
use crate::lyapunov::QuadForm;
use crate::numerics::{hs_norm, least_squares_line, psd_sqrt, sym_eigenvalues};
use crate::processes::{
    is_nonsingular_m_matrix, piecewise_drift_spec, simulate_pair, LangevinField, PairedBatch, ProcessKind, ProcessSpec,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;

/// Bootstrap resamples used for the moment-curve confidence band.
pub const BOOTSTRAP_RESAMPLES: usize = 200;
/// Fewest coupled paths accepted by [`contraction_estimate`].
pub const MIN_PATHS: usize = 100;

/// Runs the processes started at `x` and `y` on the same Brownian increments
/// and the same jump times and marks, path by path.
pub fn synchronous_pair_sim(
    spec: &ProcessSpec,
    x: &[f64],
    y: &[f64],
    t_grid: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<PairedBatch> {
    simulate_pair(spec, x, y, t_grid, n_paths, seed)
}

/// A quadratic form `Q`, an order `p` and the contraction constant `c(p)`.
#[derive(Clone, Debug)]
pub struct DissipativityParams {
    pub q: QuadForm,
    pub p: f64,
    pub c_p: f64,
}

impl DissipativityParams {
    pub fn new(q: QuadForm, p: f64, c_p: f64) -> Result<Self> {
        if !(p >= 1.0) {
            return Err(domain(format!("order p must be ≥ 1, got {p}")));
        }
        Ok(Self { q, p, c_p })
    }

    /// `(λ̄_Q/λ̲_Q)^{1/2}·|x − y|·e^{−c(p)t/p}`.
    pub fn envelope(&self, initial_distance: f64, t: f64) -> f64 {
        (self.q.lambda_max() / self.q.lambda_min()).sqrt() * initial_distance * (-self.c_p * t / self.p).exp()
    }
}

#[derive(Clone, Debug)]
pub struct CouplingReport {
    pub p: f64,
    pub times: Vec<f64>,
    /// `Ê[|X^x_t − X^y_t|^p]^{1/p}`.
    pub moment: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub std_error: Vec<f64>,
    /// Decay rate from a least-squares fit of `ln moment` on `t`, if at least
    /// two grid times clear ten standard errors.
    pub fitted_rate: Option<f64>,
    /// Grid indices used in the fit.
    pub fit_indices: Vec<usize>,
    pub envelope: Option<Vec<f64>>,
    /// Grid times where the moment exceeds the envelope by more than three
    /// bootstrap standard errors.
    pub violations: usize,
}

impl CouplingReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time,moment,ci_lo,ci_hi,envelope")?;
        for k in 0..self.times.len() {
            let env = self.envelope.as_ref().map_or(String::new(), |e| e[k].to_string());
            writeln!(w, "{},{},{},{},{}", self.times[k], self.moment[k], self.ci_lo[k], self.ci_hi[k], env)?;
        }
        Ok(())
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Empirical `p`-th moment curve of a coupled batch with a bootstrap band,
/// a fitted exponential rate, and (given `params`) the analytic envelope.
pub fn contraction_estimate(pairs: &PairedBatch, p: f64, params: Option<&DissipativityParams>) -> Result<CouplingReport> {
    let (a, b) = (&pairs.first, &pairs.second);
    if !(p >= 1.0) {
        return Err(domain(format!("order p must be ≥ 1, got {p}")));
    }
    if a.n_paths != b.n_paths || a.times != b.times || a.dim != b.dim {
        return Err(domain("coupled batches do not share a grid"));
    }
    if a.n_paths < MIN_PATHS {
        return Err(Error::InsufficientPaths { got: a.n_paths, need: MIN_PATHS });
    }
    let (n, nt) = (a.n_paths, a.n_times());
    let powered: Vec<f64> = (0..n)
        .flat_map(|i| (0..nt).map(move |k| (i, k)))
        .map(|(i, k)| {
            let d2: f64 = a.state(i, k).iter().zip(b.state(i, k)).map(|(u, v)| (u - v) * (u - v)).sum();
            d2.sqrt().powf(p)
        })
        .collect();
    let curve = |idx: &mut dyn Iterator<Item = usize>| -> Vec<f64> {
        let mut acc = vec![0.0; nt];
        for i in idx {
            for (k, s) in acc.iter_mut().enumerate() {
                *s += powered[i * nt + k];
            }
        }
        acc.iter().map(|s| (s / n as f64).powf(1.0 / p)).collect()
    };
    let moment = curve(&mut (0..n));

    let mut rng = ChaCha8Rng::seed_from_u64(pairs.first.seed ^ 0x5eed_b007);
    let boots: Vec<Vec<f64>> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            let picks: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            curve(&mut picks.into_iter())
        })
        .collect();
    let (mut ci_lo, mut ci_hi, mut std_error) = (Vec::with_capacity(nt), Vec::with_capacity(nt), Vec::with_capacity(nt));
    for k in 0..nt {
        let mut col: Vec<f64> = boots.iter().map(|c| c[k]).collect();
        col.sort_by(f64::total_cmp);
        ci_lo.push(percentile(&col, 0.025));
        ci_hi.push(percentile(&col, 0.975));
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (col.len() - 1) as f64;
        std_error.push(var.sqrt());
    }

    let fit_indices: Vec<usize> = (0..nt).filter(|&k| moment[k] > 0.0 && moment[k] > 10.0 * std_error[k]).collect();
    let fitted_rate = if fit_indices.len() >= 2 {
        let ts: Vec<f64> = fit_indices.iter().map(|&k| a.times[k]).collect();
        let ls: Vec<f64> = fit_indices.iter().map(|&k| moment[k].ln()).collect();
        least_squares_line(&ts, &ls).ok().map(|(slope, _)| -slope)
    } else {
        None
    };

    let (envelope, violations) = match params {
        Some(par) => {
            if a.times.first() != Some(&0.0) {
                return Err(domain("the envelope needs a grid starting at t = 0"));
            }
            let d0 = a.state(0, 0).iter().zip(b.state(0, 0)).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
            let env: Vec<f64> = a.times.iter().map(|&t| par.envelope(d0, t)).collect();
            let bad = (0..nt).filter(|&k| moment[k] - 3.0 * std_error[k] > env[k] * (1.0 + 1e-12)).count();
            (Some(env), bad)
        }
        None => (None, 0),
    };
    Ok(CouplingReport {
        p,
        times: a.times.clone(),
        moment,
        ci_lo,
        ci_hi,
        std_error,
        fitted_rate,
        fit_indices,
        envelope,
        violations,
    })
}

/// State-dependent jump representation `k(x, v)` over finitely many marks
/// `v` carrying intensities `rates`.
#[derive(Clone, Debug)]
pub struct JumpKernel {
    pub marks: Vec<f64>,
    pub rates: Vec<f64>,
    pub k: KernelFn,
}

/// Drift, diffusion matrix and optional state-dependent jumps of an Itô
/// equation, in the form needed by [`dissipativity_lhs`].
#[derive(Clone, Debug)]
pub struct ItoCoefficients {
    pub dim: usize,
    pub drift: VectorFn,
    pub sigma: MatrixFn,
    pub jumps: Option<JumpKernel>,
}

impl ItoCoefficients {
    pub fn new(dim: usize, drift: VectorFn, sigma: MatrixFn) -> Self {
        Self { dim, drift, sigma, jumps: None }
    }

    pub fn with_jumps(mut self, jumps: JumpKernel) -> Result<Self> {
        if jumps.marks.len() != jumps.rates.len() || jumps.rates.iter().any(|r| !(*r >= 0.0)) {
            return Err(domain("jump marks need matching nonnegative rates"));
        }
        self.jumps = Some(jumps);
        Ok(self)
    }

    /// Coefficients of a continuous-time spec. Its Lévy driver does not
    /// depend on the state, so no jump kernel is attached.
    pub fn from_spec(spec: &ProcessSpec) -> Result<Self> {
        let n = spec.dim();
        match &spec.kind {
            ProcessKind::LangevinTempered(s) => {
                let f1 = LangevinField::new(s)?;
                let f2 = f1.clone();
                Ok(Self::new(
                    n,
                    VectorFn::new(move |x, o| o.copy_from_slice(&f1.coeffs(x).0)),
                    MatrixFn::new(move |x| DMatrix::identity(x.len(), x.len()) * f2.coeffs(x).1),
                ))
            }
            ProcessKind::OuJump { h, .. } => {
                let h = h.clone();
                Ok(Self::new(
                    n,
                    VectorFn::new(move |x, o| o.copy_from_slice((&h * DVector::from_column_slice(x)).as_slice())),
                    MatrixFn::new(move |_| DMatrix::zeros(n, 1)),
                ))
            }
            ProcessKind::PiecewiseOu(s) => {
                let (s1, s2) = (s.clone(), s.sigma.clone());
                Ok(Self::new(
                    n,
                    VectorFn::new(move |x, o| o.copy_from_slice(&piecewise_drift_spec(&s1, x))),
                    MatrixFn::new(move |x| s2.eval(x)),
                ))
            }
            ProcessKind::GenericIto(s) => {
                let (d, sg) = (s.drift.clone(), s.sigma.clone());
                Ok(Self::new(n, VectorFn::new(move |x, o| d.eval_into(x, o)), MatrixFn::new(move |x| sg.eval(x))))
            }
            ProcessKind::NonlinearSs(_) | ProcessKind::BackwardRecurrence(_) => {
                Err(domain("dissipativity is defined for continuous-time specs only"))
            }
        }
    }
}

/// Left side of the uniform dissipativity inequality at `(x, z)`:
///
/// `2⟨Δ_z b̃(x), Qz⟩ + tr(ã(x;z)Q) + (p−2)‖√Q Δ_zσ(x)‖²`
/// `+ 2^{p−3}(1+(p−2)‖Q⁻¹‖) ∫|Δ_z k|²_Q dν`
/// `+ 2^{p−2}/(p(p−1))·(1+(p−2)‖Q⁻¹‖)·|z|_Q^{2−p} ∫|Δ_z k|^p_Q dν`,
///
/// with `Δ_z b̃` including the change in large jumps and `‖·‖` the
/// Hilbert–Schmidt norm. Orders below 2 need constant `σ` and
/// state-independent jumps.
pub fn dissipativity_lhs(coef: &ItoCoefficients, q: &QuadForm, p: f64, x: &[f64], z: &[f64]) -> Result<f64> {
    let n = coef.dim;
    if x.len() != n || z.len() != n || q.dim() != n {
        return Err(domain("state, increment and Q must share the dimension"));
    }
    if !(p >= 1.0) {
        return Err(domain(format!("order p must be ≥ 1, got {p}")));
    }
    if z.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    let xz: Vec<f64> = x.iter().zip(z).map(|(a, b)| a + b).collect();
    let (mut b0, mut b1) = (vec![0.0; n], vec![0.0; n]);
    (coef.drift.0)(x, &mut b0);
    (coef.drift.0)(&xz, &mut b1);
    let mut db: Vec<f64> = b1.iter().zip(&b0).map(|(a, b)| a - b).collect();

    let qm = q.matrix();
    let mut jump_sq = 0.0;
    let mut jump_p = 0.0;
    if let Some(jk) = &coef.jumps {
        let (mut k0, mut k1) = (vec![0.0; n], vec![0.0; n]);
        let big = |k: &[f64]| k.iter().map(|v| v * v).sum::<f64>() > 1.0;
        for (&v, &w) in jk.marks.iter().zip(&jk.rates) {
            (jk.k.0)(x, v, &mut k0);
            (jk.k.0)(&xz, v, &mut k1);
            for i in 0..n {
                let hi = if big(&k1) { k1[i] } else { 0.0 };
                let lo = if big(&k0) { k0[i] } else { 0.0 };
                db[i] += w * (hi - lo);
            }
            let dk: Vec<f64> = k1.iter().zip(&k0).map(|(a, b)| a - b).collect();
            let dq = q.norm(&dk);
            jump_sq += w * dq * dq;
            jump_p += w * dq.powf(p);
        }
    }

    let zq: Vec<f64> = (0..n).map(|i| (0..n).map(|j| qm[(i, j)] * z[j]).sum()).collect();
    let drift_term = 2.0 * db.iter().zip(&zq).map(|(a, b)| a * b).sum::<f64>();

    let ds = (coef.sigma.0)(&xz) - (coef.sigma.0)(x);
    let sqrt_q = psd_sqrt(qm, 1e-12)?;
    let sq_ds = hs_norm(&(&sqrt_q * &ds)).powi(2);
    // tr(Δσ Δσ' Q) = ‖√Q Δσ‖²
    let diffusion_term = (p - 1.0) * sq_ds;

    if p < 2.0 && (sq_ds > 0.0 || jump_sq > 0.0) {
        return Err(domain("orders below 2 need constant diffusion and state-independent jumps"));
    }
    let jump_term = if jump_sq > 0.0 {
        let q_inv = qm.clone().try_inverse().ok_or_else(|| Error::Numerical("Q is singular".into()))?;
        let factor = 1.0 + (p - 2.0) * hs_norm(&q_inv);
        let zq_norm = q.norm(z);
        2f64.powf(p - 3.0) * factor * jump_sq
            + 2f64.powf(p - 2.0) / (p * (p - 1.0)) * factor * zq_norm.powf(2.0 - p) * jump_p
    } else {
        0.0
    };
    Ok(drift_term + diffusion_term + jump_term)
}

/// `M − (M − Γ)v e'` with `e` the all-ones vector.
fn reflected_matrix(m: &DMatrix<f64>, gamma: &[f64], v: &[f64]) -> DMatrix<f64> {
    let n = m.nrows();
    let mut mg = m.clone();
    for i in 0..n {
        mg[(i, i)] -= gamma[i];
    }
    let w = &mg * DVector::from_column_slice(v);
    let mut out = m.clone();
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] -= w[i];
        }
    }
    out
}

/// Smallest eigenvalue over `M'Q + QM` and `B'Q + QB`, `B = M − (M−Γ)ve'`.
fn kappa(m: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    let first = m.transpose() * q + q * m;
    let second = b.transpose() * q + q * b;
    sym_eigenvalues(&first)[0].min(sym_eigenvalues(&second)[0])
}

fn check_piecewise_inputs(m: &DMatrix<f64>, gamma: &[f64], v: &[f64]) -> Result<()> {
    let n = m.nrows();
    if m.ncols() != n || gamma.len() != n || v.len() != n {
        return Err(domain("M, Γ and v must share the dimension"));
    }
    Ok(())
}

/// Contraction constant `c(p) = (p/2)(κ̲/λ̄_Q − (p−1)·lip²/λ̲_Q)` for the
/// piecewise OU drift, where `κ̲` is the smallest eigenvalue of `M'Q + QM`
/// and `B'Q + QB` with `B = M − (M−Γ)ve'`, and `lip` bounds the Lipschitz
/// constant of `√Q σ`. The result may be nonpositive.
pub fn piecewise_ou_contraction(m: &DMatrix<f64>, gamma: &[f64], v: &[f64], q: &QuadForm, lip_sqrt_q_sigma: f64, p: f64) -> Result<f64> {
    check_piecewise_inputs(m, gamma, v)?;
    if q.dim() != m.nrows() {
        return Err(domain("Q must match the state dimension"));
    }
    if !(p >= 1.0) || !(lip_sqrt_q_sigma >= 0.0) {
        return Err(domain("need p ≥ 1 and a nonnegative Lipschitz constant"));
    }
    let b = reflected_matrix(m, gamma, v);
    let k = kappa(m, &b, q.matrix());
    let scale = m.iter().fold(0.0f64, |a, x| a.max(x.abs())) * q.lambda_max();
    if !(k > 1e-12 * scale) {
        return Err(Error::NotDissipative(format!("smallest eigenvalue {k:e} is not positive")));
    }
    Ok(0.5 * p * (k / q.lambda_max() - (p - 1.0) * lip_sqrt_q_sigma.powi(2) / q.lambda_min()))
}

/// Log-spaced search grid for the diagonal of `Q`.
#[derive(Clone, Copy, Debug)]
pub struct DiagonalGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for DiagonalGrid {
    fn default() -> Self {
        Self { lo: 1e-2, hi: 1e2, points: 41 }
    }
}

/// Searches diagonal `Q` (first entry fixed to 1, the criterion being
/// scale-free) for the one maximising `κ̲/λ̄_Q` with both matrices positive
/// definite. `Ok(None)` when no grid point qualifies.
pub fn find_q(m: &DMatrix<f64>, gamma: &[f64], v: &[f64], grid: &DiagonalGrid) -> Result<Option<QuadForm>> {
    check_piecewise_inputs(m, gamma, v)?;
    if !is_nonsingular_m_matrix(m) {
        return Err(domain("M must be a nonsingular M-matrix"));
    }
    if !(grid.lo > 0.0 && grid.hi >= grid.lo && grid.points >= 1) {
        return Err(domain("grid needs 0 < lo ≤ hi and at least one point"));
    }
    let n = m.nrows();
    let total = (grid.points as f64).powi(n as i32 - 1);
    if total > 1e6 {
        return Err(Error::Size(format!("diagonal grid has {total:e} candidates")));
    }
    let (llo, lhi) = (grid.lo.ln(), grid.hi.ln());
    let values: Vec<f64> = (0..grid.points)
        .map(|i| {
            if grid.points == 1 {
                grid.lo
            } else {
                (llo + (lhi - llo) * i as f64 / (grid.points - 1) as f64).exp()
            }
        })
        .collect();
    let b = reflected_matrix(m, gamma, v);
    let scale = m.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut idx = vec![0usize; n.saturating_sub(1)];
    loop {
        let mut d = vec![1.0];
        d.extend(idx.iter().map(|&i| values[i]));
        let qd = DMatrix::from_diagonal(&DVector::from_column_slice(&d));
        let k = kappa(m, &b, &qd);
        let lmax = d.iter().copied().fold(0.0, f64::max);
        if k > 1e-10 * scale * lmax {
            let score = k / lmax;
            if best.as_ref().is_none_or(|(s, _)| score > *s) {
                best = Some((score, d));
            }
        }
        // odometer over the free diagonal entries
        let mut pos = 0;
        loop {
            if pos == idx.len() {
                return best.map(|(_, d)| QuadForm::diagonal(&d)).transpose();
            }
            idx[pos] += 1;
            if idx[pos] < values.len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}
