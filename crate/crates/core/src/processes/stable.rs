//! Stable random variables via the Chambers–Mallows–Stuck transform.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use std::f64::consts::{FRAC_PI_2, PI};

/// One draw from `S_α(scale, skew, 0)` in the parameterisation whose
/// characteristic function is `exp(-|scale·ξ|^α (1 - i·skew·sign(ξ)·tan(πα/2)))`
/// (`α ≠ 1`), with the usual logarithmic correction at `α = 1`.
///
/// `α = 2` gives `N(0, 2·scale²)`.
pub fn stable_draw<R: Rng + ?Sized>(alpha: f64, skew: f64, scale: f64, rng: &mut R) -> f64 {
    let u = PI * (rng.random::<f64>() - 0.5);
    let w: f64 = Exp1.sample(rng);
    standard_stable(alpha, skew, u, w) * scale
        + if alpha == 1.0 && skew != 0.0 { 2.0 / PI * skew * scale * scale.ln() } else { 0.0 }
}

fn standard_stable(alpha: f64, skew: f64, u: f64, w: f64) -> f64 {
    if alpha == 1.0 {
        let a = FRAC_PI_2 + skew * u;
        return (a * u.tan() - skew * (FRAC_PI_2 * w * u.cos() / a).ln()) / FRAC_PI_2;
    }
    let zeta = -skew * (PI * alpha / 2.0).tan();
    let xi = (-zeta).atan() / alpha;
    let front = (1.0 + zeta * zeta).powf(1.0 / (2.0 * alpha));
    let a = alpha * (u + xi);
    front * a.sin() / u.cos().powf(1.0 / alpha) * ((u - a).cos() / w).powf((1.0 - alpha) / alpha)
}

/// Positive stable variable with `E[e^{-uS}] = e^{-u^α}` for `α ∈ (0, 1)`,
/// sampled with Kanter's representation.
pub fn positive_stable_draw<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    // U uniform on (0, π); avoid the endpoints where sin vanishes
    let u = PI * rng.random::<f64>().max(f64::MIN_POSITIVE);
    let e: f64 = Exp1.sample(rng);
    let a = (alpha * u).sin() / u.sin().powf(1.0 / alpha);
    let b = ((1.0 - alpha) * u).sin() / e;
    a * b.powf((1.0 - alpha) / alpha)
}

/// `n` independent stable draws from a ChaCha stream seeded with `seed`.
pub fn sample_stable(alpha: f64, skew: f64, scale: f64, n: usize, seed: u64) -> crate::Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(crate::error::domain(format!("stable index {alpha} outside (0, 2]")));
    }
    if !(-1.0..=1.0).contains(&skew) {
        return Err(crate::error::domain(format!("skewness {skew} outside [-1, 1]")));
    }
    if !(scale > 0.0) {
        return Err(crate::error::domain(format!("scale {scale} must be positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| stable_draw(alpha, skew, scale, &mut rng)).collect())
}

/// Constant `c_α` of the one-dimensional symmetric stable Lévy density
/// `c_α |y|^{-1-α}` for the symbol `|ξ|^α`.
pub fn symmetric_density_constant(alpha: f64) -> f64 {
    statrs::function::gamma::gamma(1.0 + alpha) * (PI * alpha / 2.0).sin() / PI
}

/// Radial constant `k` such that the isotropic `n`-dimensional stable measure
/// with symbol `|ξ|^α` integrates `g` as `k·E_u ∫_0^∞ (g(ru) + g(-ru)) r^{-1-α} dr`
/// with `u` uniform on the sphere.
pub fn isotropic_radial_constant(alpha: f64, dim: usize) -> f64 {
    use statrs::function::gamma::gamma;
    let n = dim as f64;
    alpha * 2f64.powf(alpha - 1.0) * gamma((n + alpha) / 2.0) / (gamma(1.0 - alpha / 2.0) * gamma(n / 2.0))
}
