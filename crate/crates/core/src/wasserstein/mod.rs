//! Wasserstein distances between empirical measures: exact one-dimensional
//! quantile coupling, exact network simplex, entropic Sinkhorn, Gaussian
//! closed forms and a Kantorovich–Rubinstein dual check.

mod duality;
mod gaussian;
mod measure;
mod one_d;
mod simplex;
mod sinkhorn;

pub use duality::{kr_duality_check, DualityReport, LipschitzFn};
pub use gaussian::w2_gaussian;
pub use measure::EmpiricalMeasure;
pub use one_d::{w_1d, w_p_to_normal_1d};
pub use simplex::{w_exact_lp, TransportPlan, MAX_LP_CELLS};
pub use sinkhorn::{sinkhorn, sinkhorn_with, SinkhornOptions, SinkhornReport};

pub(crate) fn dist_p(x: &[f64], y: &[f64], p: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    if p == 2.0 {
        d2
    } else {
        d2.sqrt().powf(p)
    }
}

pub(crate) fn check_order(p: f64) -> crate::Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(crate::error::domain(format!("Wasserstein order must be ≥ 1, got {p}")))
    }
}
