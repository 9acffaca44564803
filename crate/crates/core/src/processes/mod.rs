//! Process specifications, simulators and exact reference objects.

pub mod backward;
pub mod exact;
pub mod levy;
pub mod simulate;
pub mod stable;

pub use backward::{drift_bound, exact_marginal, exact_marginals, invariant_exact, invariant_tail, BackwardRecurrence};
pub use exact::{langevin_coeffs, LangevinField, ou_exact_transition, ou_stationary_covariance, piecewise_drift, Gaussian};
pub use levy::{JumpDist, LevyKind, LevyMeasureSpec, StableStructure};
pub use simulate::{simulate, simulate_pair, simulate_with, PairedBatch, SimOptions, TrajectoryBatch};
pub use stable::sample_stable;

use crate::error::{config, Result};
use crate::func::{serde_matrix, MatrixFn, SamplerFn, VectorFn};
use crate::lyapunov::GeneratorSpec;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Langevin diffusion tempered towards a density with polynomial tails
/// `π(x) = c|x|^{-1/α}` off the unit ball, with `σ = π^{-β} I`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LangevinSpec {
    pub alpha: f64,
    pub beta: f64,
    pub dim: usize,
}

/// Control of a piecewise OU process: a fixed point of the simplex or a
/// state feedback.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Control {
    Constant { v: Vec<f64> },
    Markov { v: VectorFn, locally_lipschitz: bool },
}

/// Diffusion coefficient `σ: ℝⁿ → ℝ^{n×m}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaSpec {
    Constant {
        #[serde(with = "serde_matrix")]
        matrix: DMatrix<f64>,
    },
    Custom { noise_dim: usize, sigma: MatrixFn },
}

impl SigmaSpec {
    pub fn zero(n: usize) -> Self {
        SigmaSpec::Constant { matrix: DMatrix::zeros(n, 1) }
    }

    pub fn noise_dim(&self) -> usize {
        match self {
            SigmaSpec::Constant { matrix } => matrix.ncols(),
            SigmaSpec::Custom { noise_dim, .. } => *noise_dim,
        }
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        match self {
            SigmaSpec::Constant { matrix } => matrix.clone(),
            SigmaSpec::Custom { sigma, .. } => (sigma.0)(x),
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, SigmaSpec::Constant { matrix } if matrix.iter().all(|v| *v == 0.0))
    }
}

/// Vector field `ℝⁿ → ℝⁿ`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VectorField {
    /// `x ↦ Ax + c`.
    Affine {
        #[serde(with = "serde_matrix")]
        matrix: DMatrix<f64>,
        offset: Vec<f64>,
    },
    Custom(VectorFn),
}

impl VectorField {
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            VectorField::Affine { matrix, offset } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = offset[i] + (0..x.len()).map(|j| matrix[(i, j)] * x[j]).sum::<f64>();
                }
            }
            VectorField::Custom(f) => (f.0)(x, out),
        }
    }
}

/// Piecewise OU process `dX = b̄(X)dt + σ(X)dW + dL` with
/// `b̄(x) = l − M(x − ⟨e,x⟩⁺v) − ⟨e,x⟩⁺Γv`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PiecewiseOuSpec {
    pub l: Vec<f64>,
    #[serde(with = "serde_matrix")]
    pub m: DMatrix<f64>,
    /// Diagonal of `Γ`.
    pub gamma: Vec<f64>,
    pub control: Control,
    pub sigma: SigmaSpec,
    pub levy: LevyMeasureSpec,
}

/// `F` of the state-space recursion, with growth constants such that
/// `|F(x)| ≤ c̄|x| − c̃|x|^{1−ε}` for `|x| ≥ r`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateMap {
    /// `F(x) = x(c̄ − c̃ max(|x|, r)^{-ε})`.
    Sublinear { c_bar: f64, c_tilde: f64, eps: f64, r: f64 },
    Custom { f: VectorFn, c_bar: f64, c_tilde: f64, eps: f64, r: f64 },
}

impl StateMap {
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            StateMap::Sublinear { c_bar, c_tilde, eps, r } => {
                let k = c_bar - c_tilde * levy::norm(x).max(*r).powf(-eps);
                out.iter_mut().zip(x).for_each(|(o, x)| *o = k * x);
            }
            StateMap::Custom { f, .. } => (f.0)(x, out),
        }
    }
}

/// Law of the additive noise of a state-space model.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    Gaussian { std: f64, dim: usize },
    Laplace { scale: f64, dim: usize },
    Custom { sampler: SamplerFn, dim: usize },
}

impl NoiseSpec {
    pub fn dim(&self) -> usize {
        match self {
            NoiseSpec::Gaussian { dim, .. } | NoiseSpec::Laplace { dim, .. } | NoiseSpec::Custom { dim, .. } => *dim,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NonlinearSsSpec {
    pub map: StateMap,
    pub noise: NoiseSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenericItoSpec {
    pub dim: usize,
    pub drift: VectorField,
    pub sigma: SigmaSpec,
    pub levy: LevyMeasureSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProcessKind {
    LangevinTempered(LangevinSpec),
    OuJump {
        #[serde(with = "serde_matrix")]
        h: DMatrix<f64>,
        levy: LevyMeasureSpec,
    },
    PiecewiseOu(PiecewiseOuSpec),
    NonlinearSs(NonlinearSsSpec),
    BackwardRecurrence(BackwardRecurrence),
    GenericIto(GenericItoSpec),
}

fn default_max_step() -> f64 {
    1e-2
}

/// A simulatable Markov process together with the largest Euler step allowed
/// for continuous-time kinds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub kind: ProcessKind,
    #[serde(default = "default_max_step")]
    pub max_step: f64,
}

impl ProcessSpec {
    pub fn new(kind: ProcessKind) -> Result<Self> {
        let spec = Self { kind, max_step: default_max_step() };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_max_step(mut self, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(config("maximum step must be positive"));
        }
        self.max_step = dt;
        Ok(self)
    }

    pub fn ou(h: DMatrix<f64>, levy: LevyMeasureSpec) -> Result<Self> {
        Self::new(ProcessKind::OuJump { h, levy })
    }

    pub fn backward_recurrence(alpha: f64, i0: u64) -> Result<Self> {
        Self::new(ProcessKind::BackwardRecurrence(BackwardRecurrence::new(alpha, i0)?))
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            ProcessKind::LangevinTempered(s) => s.dim,
            ProcessKind::OuJump { h, .. } => h.nrows(),
            ProcessKind::PiecewiseOu(s) => s.l.len(),
            ProcessKind::NonlinearSs(s) => s.noise.dim(),
            ProcessKind::BackwardRecurrence(_) => 1,
            ProcessKind::GenericIto(s) => s.dim,
        }
    }

    /// Whether time runs over the nonnegative integers.
    pub fn is_discrete_time(&self) -> bool {
        matches!(self.kind, ProcessKind::NonlinearSs(_) | ProcessKind::BackwardRecurrence(_))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_step > 0.0) {
            return Err(config("maximum step must be positive"));
        }
        let n = self.dim();
        if n == 0 {
            return Err(config("state dimension must be positive"));
        }
        match &self.kind {
            ProcessKind::LangevinTempered(s) => {
                let nf = n as f64;
                if !(s.alpha > 0.0 && s.alpha < 1.0 / nf) {
                    return Err(config(format!("Langevin alpha must lie in (0, 1/n), got {}", s.alpha)));
                }
                let beta_max = (1.0 + s.alpha * (2.0 - nf)) / 2.0;
                if !(s.beta >= 0.0 && s.beta <= beta_max) {
                    return Err(config(format!("Langevin beta must lie in [0, {beta_max}], got {}", s.beta)));
                }
            }
            ProcessKind::OuJump { h, levy } => {
                if h.ncols() != n {
                    return Err(config("OU matrix must be square"));
                }
                levy.validate(n)?;
            }
            ProcessKind::PiecewiseOu(s) => validate_piecewise(s)?,
            ProcessKind::NonlinearSs(s) => match &s.map {
                StateMap::Sublinear { c_bar, c_tilde, eps, r } | StateMap::Custom { c_bar, c_tilde, eps, r, .. } => {
                    if !(*c_bar > 0.0 && *c_tilde > 0.0 && *eps > 0.0 && *eps < 1.0 && *r > 0.0) {
                        return Err(config("state-space growth constants out of range"));
                    }
                    if matches!(s.map, StateMap::Sublinear { .. }) && c_tilde * r.powf(-eps) > *c_bar {
                        return Err(config("sublinear map needs c_tilde·r^(-eps) ≤ c_bar"));
                    }
                    match s.noise {
                        NoiseSpec::Gaussian { std, .. } if !(std > 0.0) => return Err(config("noise std must be positive")),
                        NoiseSpec::Laplace { scale, .. } if !(scale > 0.0) => {
                            return Err(config("noise scale must be positive"))
                        }
                        _ => {}
                    }
                }
            },
            ProcessKind::BackwardRecurrence(b) => b.validate()?,
            ProcessKind::GenericIto(s) => {
                if let VectorField::Affine { matrix, offset } = &s.drift {
                    if matrix.nrows() != n || matrix.ncols() != n || offset.len() != n {
                        return Err(config("affine drift has the wrong shape"));
                    }
                }
                check_sigma(&s.sigma, n)?;
                s.levy.validate(n)?;
            }
        }
        Ok(())
    }

    /// Generator of a continuous-time spec, with the compensator convention
    /// matching the simulator (raw jumps for one-sided and compound Poisson
    /// drivers).
    pub fn generator(&self) -> Result<GeneratorSpec> {
        let n = self.dim();
        let (drift, diffusion, levy): (VectorFn, Option<MatrixFn>, LevyMeasureSpec) = match &self.kind {
            ProcessKind::LangevinTempered(s) => {
                let f1 = LangevinField::new(s)?;
                let f2 = f1.clone();
                (
                    VectorFn::new(move |x, o| o.copy_from_slice(&f1.coeffs(x).0)),
                    Some(MatrixFn::new(move |x| {
                        let sig = f2.coeffs(x).1;
                        DMatrix::identity(x.len(), x.len()) * (sig * sig)
                    })),
                    LevyMeasureSpec::none(),
                )
            }
            ProcessKind::OuJump { h, levy } => {
                let h = h.clone();
                (
                    VectorFn::new(move |x, o| {
                        let y = &h * DVector::from_column_slice(x);
                        o.copy_from_slice(y.as_slice());
                    }),
                    None,
                    levy.clone(),
                )
            }
            ProcessKind::PiecewiseOu(s) => {
                let s1 = s.clone();
                (
                    VectorFn::new(move |x, o| o.copy_from_slice(&piecewise_drift_spec(&s1, x))),
                    sigma_to_diffusion(&s.sigma),
                    s.levy.clone(),
                )
            }
            ProcessKind::GenericIto(s) => {
                let d = s.drift.clone();
                (VectorFn::new(move |x, o| d.eval_into(x, o)), sigma_to_diffusion(&s.sigma), s.levy.clone())
            }
            ProcessKind::NonlinearSs(_) | ProcessKind::BackwardRecurrence(_) => {
                return Err(config("discrete-time processes have no generator"))
            }
        };
        Ok(GeneratorSpec { dim: n, drift, diffusion, levy, jump_compensation: false })
    }
}

fn sigma_to_diffusion(sigma: &SigmaSpec) -> Option<MatrixFn> {
    if sigma.is_zero() {
        return None;
    }
    let s = sigma.clone();
    Some(MatrixFn::new(move |x| {
        let m = s.eval(x);
        &m * m.transpose()
    }))
}

fn check_sigma(sigma: &SigmaSpec, n: usize) -> Result<()> {
    if let SigmaSpec::Constant { matrix } = sigma {
        if matrix.nrows() != n {
            return Err(config("diffusion matrix must have one row per state coordinate"));
        }
    }
    if sigma.noise_dim() == 0 {
        return Err(config("diffusion needs at least one noise coordinate"));
    }
    Ok(())
}

/// Nonsingular M-matrix test: nonpositive off-diagonal entries and an
/// entrywise nonnegative inverse.
pub fn is_nonsingular_m_matrix(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    if m.ncols() != n {
        return false;
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && m[(i, j)] > 0.0 {
                return false;
            }
        }
    }
    match m.clone().try_inverse() {
        Some(inv) => inv.iter().all(|v| *v >= -1e-12 * inv.amax()),
        None => false,
    }
}

fn validate_simplex(v: &[f64], n: usize) -> Result<()> {
    if v.len() != n || v.iter().any(|x| !(*x >= 0.0)) || (v.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(config("control must be a probability vector of the state dimension"));
    }
    Ok(())
}

fn validate_piecewise(s: &PiecewiseOuSpec) -> Result<()> {
    let n = s.l.len();
    if s.m.nrows() != n || s.m.ncols() != n || s.gamma.len() != n {
        return Err(config("piecewise OU parameters have inconsistent dimensions"));
    }
    if !is_nonsingular_m_matrix(&s.m) {
        return Err(config("M must be a nonsingular M-matrix"));
    }
    if (0..n).any(|j| s.m.column(j).sum() < -1e-12) {
        return Err(config("column sums of M must be nonnegative"));
    }
    if s.gamma.iter().any(|g| !(*g >= 0.0)) {
        return Err(config("Gamma must be nonnegative"));
    }
    match &s.control {
        Control::Constant { v } => validate_simplex(v, n)?,
        Control::Markov { v, locally_lipschitz } => {
            if !locally_lipschitz {
                return Err(config("Markov controls must be locally Lipschitz"));
            }
            let mut out = vec![0.0; n];
            (v.0)(&vec![0.0; n], &mut out);
            validate_simplex(&out, n)?;
        }
    }
    check_sigma(&s.sigma, n)?;
    s.levy.validate(n)
}

pub(crate) fn piecewise_drift_spec(s: &PiecewiseOuSpec, x: &[f64]) -> Vec<f64> {
    let v = match &s.control {
        Control::Constant { v } => v.clone(),
        Control::Markov { v, .. } => {
            let mut out = vec![0.0; x.len()];
            (v.0)(x, &mut out);
            out
        }
    };
    piecewise_drift(&s.l, &s.m, &s.gamma, &v, x)
}
