//! State-independent Lévy measures together with their drift and Gaussian parts.

use super::stable::{positive_stable_draw, stable_draw};
use crate::error::{config, Result};
use crate::func::serde_matrix;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

/// Law of the marks of a compound Poisson process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpDist {
    /// Finitely many atoms with probabilities.
    Discrete { atoms: Vec<Vec<f64>>, probs: Vec<f64> },
    /// `N(mean, std²·I)`.
    Gaussian { mean: Vec<f64>, std: f64 },
    /// Independent symmetric Laplace coordinates with the given scale.
    Laplace { scale: f64, dim: usize },
}

impl JumpDist {
    pub fn dim(&self) -> usize {
        match self {
            JumpDist::Discrete { atoms, .. } => atoms.first().map_or(0, Vec::len),
            JumpDist::Gaussian { mean, .. } => mean.len(),
            JumpDist::Laplace { dim, .. } => *dim,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            JumpDist::Discrete { atoms, probs } => {
                if atoms.is_empty() || atoms.len() != probs.len() {
                    return Err(config("discrete jump law needs matching, nonempty atoms and probs"));
                }
                if atoms.iter().any(|a| a.len() != atoms[0].len()) {
                    return Err(config("discrete jump atoms have mixed dimensions"));
                }
                if probs.iter().any(|&p| !(p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(config("discrete jump probabilities must be nonnegative and sum to 1"));
                }
            }
            JumpDist::Gaussian { std, .. } if !(*std >= 0.0) => return Err(config("jump std must be nonnegative")),
            JumpDist::Laplace { scale, .. } if !(*scale > 0.0) => return Err(config("Laplace scale must be positive")),
            _ => {}
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            JumpDist::Discrete { atoms, probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut k = atoms.len() - 1;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        k = i;
                        break;
                    }
                }
                out.copy_from_slice(&atoms[k]);
            }
            JumpDist::Gaussian { mean, std } => {
                for (o, m) in out.iter_mut().zip(mean) {
                    let z: f64 = StandardNormal.sample(rng);
                    *o = m + std * z;
                }
            }
            JumpDist::Laplace { scale, .. } => {
                for o in out.iter_mut() {
                    let e: f64 = Exp1.sample(rng);
                    *o = if rng.random::<bool>() { scale * e } else { -scale * e };
                }
            }
        }
    }
}

/// How a multidimensional symmetric stable measure spreads its mass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StableStructure {
    /// Rotation invariant, symbol `scale^α |ξ|^α`.
    Isotropic,
    /// Independent one-dimensional stable coordinates, symbol `scale^α Σ|ξ_i|^α`.
    Independent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LevyKind {
    None,
    CompoundPoisson { rate: f64, jumps: JumpDist },
    SymmetricStable { alpha: f64, scale: f64, structure: StableStructure },
    /// One-sided stable jumps along `direction`, Laplace exponent `(scale·u)^α`.
    StableSubordinator { alpha: f64, scale: f64, direction: Vec<f64> },
}

/// Lévy triplet `(b_L, a_L, ν)` of a state-independent driver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevyMeasureSpec {
    pub kind: LevyKind,
    /// Empty means zero.
    #[serde(default)]
    pub drift: Vec<f64>,
    /// Absent means zero.
    #[serde(default, with = "opt_matrix", skip_serializing_if = "Option::is_none")]
    pub gaussian: Option<DMatrix<f64>>,
}

mod opt_matrix {
    use super::serde_matrix;
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        match m {
            Some(m) => serde_matrix::serialize(m, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        let rows = Option::<Vec<Vec<f64>>>::deserialize(d)?;
        rows.map(|r| serde_matrix::to_matrix(&r).map_err(serde::de::Error::custom)).transpose()
    }
}

impl LevyMeasureSpec {
    pub fn none() -> Self {
        Self { kind: LevyKind::None, drift: Vec::new(), gaussian: None }
    }

    pub fn gaussian(a: DMatrix<f64>) -> Self {
        Self { kind: LevyKind::None, drift: Vec::new(), gaussian: Some(a) }
    }

    pub fn compound_poisson(rate: f64, jumps: JumpDist) -> Self {
        Self { kind: LevyKind::CompoundPoisson { rate, jumps }, drift: Vec::new(), gaussian: None }
    }

    pub fn symmetric_stable(alpha: f64, scale: f64, structure: StableStructure) -> Self {
        Self { kind: LevyKind::SymmetricStable { alpha, scale, structure }, drift: Vec::new(), gaussian: None }
    }

    pub fn with_drift(mut self, drift: Vec<f64>) -> Self {
        self.drift = drift;
        self
    }

    pub fn with_gaussian(mut self, a: DMatrix<f64>) -> Self {
        self.gaussian = Some(a);
        self
    }

    /// Checks parameter ranges and that every part lives in dimension `dim`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !self.drift.is_empty() && self.drift.len() != dim {
            return Err(config(format!("Lévy drift has length {} but the state has dimension {dim}", self.drift.len())));
        }
        if let Some(a) = &self.gaussian {
            if a.nrows() != dim || a.ncols() != dim {
                return Err(config("Gaussian covariance has the wrong shape"));
            }
            crate::numerics::psd_sqrt(a, 1e-10).map_err(|_| config("Gaussian covariance is not PSD"))?;
        }
        match &self.kind {
            LevyKind::None => {}
            LevyKind::CompoundPoisson { rate, jumps } => {
                if !(*rate > 0.0) {
                    return Err(config("compound Poisson rate must be positive"));
                }
                jumps.validate()?;
                if jumps.dim() != dim {
                    return Err(config("jump law dimension differs from the state dimension"));
                }
            }
            LevyKind::SymmetricStable { alpha, scale, .. } => {
                if !(*alpha > 0.0 && *alpha < 2.0) || !(*scale > 0.0) {
                    return Err(config("symmetric stable needs alpha in (0,2) and positive scale"));
                }
            }
            LevyKind::StableSubordinator { alpha, scale, direction } => {
                if !(*alpha > 0.0 && *alpha < 1.0) || !(*scale > 0.0) {
                    return Err(config("stable subordinator needs alpha in (0,1) and positive scale"));
                }
                if direction.len() != dim || (norm(direction) - 1.0).abs() > 1e-9 {
                    return Err(config("subordinator direction must be a unit vector of the state dimension"));
                }
            }
        }
        Ok(())
    }

    pub fn has_jumps(&self) -> bool {
        !matches!(self.kind, LevyKind::None)
    }

    /// Supremum of the polynomial moment orders `θ` with `∫_{B^c}|y|^θ ν(dy) < ∞`,
    /// and whether it is attained.
    pub fn poly_moment_sup(&self) -> (f64, bool) {
        match &self.kind {
            LevyKind::None | LevyKind::CompoundPoisson { .. } => (f64::INFINITY, true),
            LevyKind::SymmetricStable { alpha, .. } | LevyKind::StableSubordinator { alpha, .. } => (*alpha, false),
        }
    }

    pub fn has_poly_moment(&self, theta: f64) -> bool {
        let (sup, attained) = self.poly_moment_sup();
        theta < sup || (attained && theta <= sup)
    }

    /// Supremum of the rates `ζ` with `∫_{B^c} e^{ζ|y|} ν(dy) < ∞` (open).
    pub fn exp_moment_sup(&self) -> f64 {
        match &self.kind {
            LevyKind::None => f64::INFINITY,
            LevyKind::CompoundPoisson { jumps, .. } => match jumps {
                JumpDist::Discrete { .. } | JumpDist::Gaussian { .. } => f64::INFINITY,
                // |y| ≤ Σ|y_i| and each coordinate has exponential moments below 1/scale
                JumpDist::Laplace { scale, .. } => 1.0 / scale,
            },
            LevyKind::SymmetricStable { .. } | LevyKind::StableSubordinator { .. } => 0.0,
        }
    }

    /// Drift `b_L`, with an empty vector read as zero.
    pub fn drift_or_zero(&self, dim: usize) -> Vec<f64> {
        if self.drift.is_empty() {
            vec![0.0; dim]
        } else {
            self.drift.clone()
        }
    }

    /// Adds the jump part of a driver increment over a step of length `dt`
    /// for the infinitely active kinds. Compound Poisson jumps are handled by
    /// the caller through event times.
    pub(crate) fn add_stable_increment<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R, out: &mut [f64]) {
        match &self.kind {
            LevyKind::SymmetricStable { alpha, scale, structure } => {
                let s = scale * dt.powf(1.0 / alpha);
                match structure {
                    StableStructure::Independent => {
                        for o in out.iter_mut() {
                            *o += stable_draw(*alpha, 0.0, s, rng);
                        }
                    }
                    StableStructure::Isotropic if out.len() == 1 => out[0] += stable_draw(*alpha, 0.0, s, rng),
                    StableStructure::Isotropic => {
                        // sub-Gaussian representation with a positive (α/2)-stable mixing variable
                        let a = positive_stable_draw(alpha / 2.0, rng);
                        let c = std::f64::consts::SQRT_2 * s * a.sqrt();
                        for o in out.iter_mut() {
                            let z: f64 = StandardNormal.sample(rng);
                            *o += c * z;
                        }
                    }
                }
            }
            LevyKind::StableSubordinator { alpha, scale, direction } => {
                let jump = scale * dt.powf(1.0 / alpha) * positive_stable_draw(*alpha, rng);
                for (o, d) in out.iter_mut().zip(direction) {
                    *o += jump * d;
                }
            }
            LevyKind::None | LevyKind::CompoundPoisson { .. } => {}
        }
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl From<LevyKind> for LevyMeasureSpec {
    fn from(kind: LevyKind) -> Self {
        Self { kind, drift: Vec::new(), gaussian: None }
    }
}
