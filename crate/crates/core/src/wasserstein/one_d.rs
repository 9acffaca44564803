use super::{check_order, EmpiricalMeasure};
use crate::error::{domain, Result};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

fn sorted_atoms(mu: &EmpiricalMeasure) -> Result<Vec<(f64, f64)>> {
    if mu.dim() != 1 {
        return Err(domain("one-dimensional distance needs one-dimensional measures"));
    }
    let mut atoms: Vec<(f64, f64)> =
        mu.points().iter().copied().zip(mu.weights().iter().copied()).filter(|(_, w)| *w > 0.0).collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(atoms)
}

/// Exact `W_p` on the line through the quantile coupling, summed over the
/// merged breakpoints of the two distribution functions.
pub fn w_1d(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> Result<f64> {
    check_order(p)?;
    let a = sorted_atoms(mu)?;
    let b = sorted_atoms(nu)?;
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut acc = 0.0;
    while i < a.len() && j < b.len() {
        let m = ra.min(rb);
        let d = (a[i].0 - b[j].0).abs();
        acc += m * if p == 1.0 { d } else { d.powf(p) };
        ra -= m;
        rb -= m;
        if ra <= 0.0 {
            i += 1;
            ra = a.get(i).map_or(0.0, |x| x.1);
        }
        if rb <= 0.0 {
            j += 1;
            rb = b.get(j).map_or(0.0, |x| x.1);
        }
    }
    Ok(acc.max(0.0).powf(1.0 / p))
}

/// Exact `W_p`, `p ∈ {1, 2}`, between a one-dimensional empirical measure and
/// `N(mean, std²)`, integrating the quantile coupling in closed form on each
/// atom's quantile interval.
pub fn w_p_to_normal_1d(mu: &EmpiricalMeasure, mean: f64, std: f64, p: f64) -> Result<f64> {
    if p != 1.0 && p != 2.0 {
        return Err(domain("closed-form distance to a normal law is available for p = 1 and p = 2"));
    }
    if !(std > 0.0) {
        return Err(domain("normal reference needs a positive standard deviation"));
    }
    let z = Normal::standard();
    let atoms = sorted_atoms(mu)?;
    let mut lo = 0.0f64;
    let mut acc = 0.0;
    let (mut z_lo, mut pdf_lo) = (f64::NEG_INFINITY, 0.0);
    for (k, (x, w)) in atoms.iter().enumerate() {
        let hi = if k + 1 == atoms.len() { 1.0 } else { (lo + w).min(1.0) };
        let z_hi = if hi >= 1.0 { f64::INFINITY } else { z.inverse_cdf(hi) };
        let pdf_hi = if z_hi.is_finite() { z.pdf(z_hi) } else { 0.0 };
        let d = x - mean;
        let du = hi - lo;
        if p == 2.0 {
            // ∫Z du = −[φ(z)], ∫Z² du = [Φ(z) − zφ(z)]
            let int_z = pdf_lo - pdf_hi;
            let zp = |zz: f64, pdf: f64| if zz.is_finite() { zz * pdf } else { 0.0 };
            let int_z2 = du - (zp(z_hi, pdf_hi) - zp(z_lo, pdf_lo));
            acc += d * d * du - 2.0 * d * std * int_z + std * std * int_z2;
        } else {
            let zs = (d / std).clamp(z_lo, z_hi);
            let (cdf_s, pdf_s) = if zs.is_finite() { (z.cdf(zs).clamp(lo, hi), z.pdf(zs)) } else if zs > 0.0 { (hi, 0.0) } else { (lo, 0.0) };
            acc += d * (cdf_s - lo) + std * (pdf_s - pdf_lo) + std * (pdf_s - pdf_hi) - d * (hi - cdf_s);
        }
        lo = hi;
        z_lo = z_hi;
        pdf_lo = pdf_hi;
    }
    Ok(acc.max(0.0).powf(1.0 / p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn examples() {
        let a = EmpiricalMeasure::dirac(vec![1.0]).unwrap();
        let b = EmpiricalMeasure::dirac(vec![4.0]).unwrap();
        for p in [1.0, 2.0, 3.5] {
            assert_relative_eq!(w_1d(&a, &b, p).unwrap(), 3.0, epsilon = 1e-12);
        }
        let mu = EmpiricalMeasure::uniform(vec![0.0, 2.0], 1).unwrap();
        let nu = EmpiricalMeasure::uniform(vec![1.0, 3.0], 1).unwrap();
        assert_relative_eq!(w_1d(&mu, &nu, 1.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(w_1d(&mu, &mu, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn unequal_weights() {
        // μ = 0.3δ0 + 0.7δ1, ν = δ0.5: W1 = 0.5
        let mu = EmpiricalMeasure::new(vec![0.0, 1.0], 1, vec![0.3, 0.7]).unwrap();
        let nu = EmpiricalMeasure::dirac(vec![0.5]).unwrap();
        assert_relative_eq!(w_1d(&mu, &nu, 1.0).unwrap(), 0.5, epsilon = 1e-12);
        // ν = 0.5δ0 + 0.5δ1: mass 0.2 moves distance 1
        let nu = EmpiricalMeasure::uniform(vec![0.0, 1.0], 1).unwrap();
        assert_relative_eq!(w_1d(&mu, &nu, 2.0).unwrap(), 0.2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn dirac_to_normal() {
        // W2(δ_a, N(m, s²))² = (a − m)² + s², W1 = E|a − m − sZ|
        let d = EmpiricalMeasure::dirac(vec![1.0]).unwrap();
        assert_relative_eq!(w_p_to_normal_1d(&d, 0.0, 2.0, 2.0).unwrap(), 5.0f64.sqrt(), epsilon = 1e-12);
        let expect = 2.0 * (2.0 / std::f64::consts::PI).sqrt();
        assert_relative_eq!(w_p_to_normal_1d(&EmpiricalMeasure::dirac(vec![0.0]).unwrap(), 0.0, 2.0, 1.0).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn quantile_grid_converges_to_zero() {
        let z = Normal::standard();
        let k = 20_000;
        let pts: Vec<f64> = (0..k).map(|i| z.inverse_cdf((i as f64 + 0.5) / k as f64)).collect();
        let mu = EmpiricalMeasure::uniform(pts, 1).unwrap();
        let w2 = w_p_to_normal_1d(&mu, 0.0, 1.0, 2.0).unwrap();
        let w1 = w_p_to_normal_1d(&mu, 0.0, 1.0, 1.0).unwrap();
        // The two extreme quantile cells dominate: each adds about Var(Z | Z > 3.9)/k.
        assert!(w2 < 3e-3, "{w2}");
        assert!(w1 < 2e-4, "{w1}");
    }
}
