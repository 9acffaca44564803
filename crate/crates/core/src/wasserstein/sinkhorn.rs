use super::simplex::cost_matrix;
use super::{check_order, EmpiricalMeasure};
use crate::error::{domain, Error, Result};
use rayon::prelude::*;

/// Settings for [`sinkhorn_with`].
#[derive(Clone, Debug)]
pub struct SinkhornOptions {
    /// Final entropic regularisation.
    pub epsilon: f64,
    /// Iteration budget for the final stage.
    pub max_iter: usize,
    /// Stop once the L¹ marginal violation drops below this.
    pub tol: f64,
    /// Start at `ε = max C` and halve down to `epsilon`, warm-starting the potentials.
    pub anneal: bool,
    /// Also compute `OT_ε(μ,ν) − ½OT_ε(μ,μ) − ½OT_ε(ν,ν)`.
    pub debiased: bool,
}

impl SinkhornOptions {
    pub fn new(epsilon: f64) -> Self {
        Self { epsilon, max_iter: 10_000, tol: 1e-9, anneal: true, debiased: false }
    }
}

#[derive(Clone, Debug)]
pub struct SinkhornReport {
    /// `⟨P, C⟩` for the entropic plan `P`.
    pub cost: f64,
    /// Dual objective `⟨a, f⟩ + ⟨b, g⟩`, the entropic transport value.
    pub entropic_cost: f64,
    pub debiased_cost: Option<f64>,
    pub epsilon: f64,
    pub p: f64,
    pub iterations: usize,
    pub marginal_violation: f64,
    /// L¹ row-marginal violation after each iteration of the final stage.
    pub violation_trace: Vec<f64>,
}

impl SinkhornReport {
    pub fn distance(&self) -> f64 {
        self.cost.max(0.0).powf(1.0 / self.p)
    }
}

/// Log-domain Sinkhorn at fixed `epsilon`, without annealing.
pub fn sinkhorn(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    p: f64,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<SinkhornReport> {
    let opts = SinkhornOptions { epsilon, max_iter, tol, anneal: false, debiased: false };
    sinkhorn_with(mu, nu, p, &opts)
}

pub fn sinkhorn_with(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64, opts: &SinkhornOptions) -> Result<SinkhornReport> {
    check_order(p)?;
    if !(opts.epsilon > 0.0) || !opts.epsilon.is_finite() {
        return Err(domain(format!("epsilon must be positive, got {}", opts.epsilon)));
    }
    if mu.dim() != nu.dim() {
        return Err(domain("measures live in different dimensions"));
    }
    let solved = solve(mu, nu, p, opts)?;
    let debiased_cost = if opts.debiased {
        let plain = SinkhornOptions { debiased: false, ..opts.clone() };
        let xx = solve(mu, mu, p, &plain)?;
        let yy = solve(nu, nu, p, &plain)?;
        Some(solved.entropic_cost - 0.5 * (xx.entropic_cost + yy.entropic_cost))
    } else {
        None
    };
    Ok(SinkhornReport { debiased_cost, ..solved })
}

fn log_sum_exp(it: impl Iterator<Item = f64>) -> f64 {
    let vals: Vec<f64> = it.collect();
    let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

struct Problem {
    k1: usize,
    k2: usize,
    cost: Vec<f64>,
    log_a: Vec<f64>,
    log_b: Vec<f64>,
}

impl Problem {
    fn update_f(&self, g: &[f64], eps: f64, f: &mut [f64]) {
        f.par_iter_mut().enumerate().for_each(|(i, fi)| {
            let row = &self.cost[i * self.k2..(i + 1) * self.k2];
            *fi = -eps * log_sum_exp((0..self.k2).map(|j| (g[j] - row[j]) / eps + self.log_b[j]));
        });
    }

    fn update_g(&self, f: &[f64], eps: f64, g: &mut [f64]) {
        g.par_iter_mut().enumerate().for_each(|(j, gj)| {
            *gj = -eps * log_sum_exp((0..self.k1).map(|i| (f[i] - self.cost[i * self.k2 + j]) / eps + self.log_a[i]));
        });
    }

    fn log_plan(&self, f: &[f64], g: &[f64], eps: f64, i: usize, j: usize) -> f64 {
        (f[i] + g[j] - self.cost[i * self.k2 + j]) / eps + self.log_a[i] + self.log_b[j]
    }

    /// Row-marginal L¹ error; columns are exact right after a `g` update.
    fn row_violation(&self, f: &[f64], g: &[f64], eps: f64) -> f64 {
        (0..self.k1)
            .into_par_iter()
            .map(|i| {
                let s: f64 = (0..self.k2).map(|j| self.log_plan(f, g, eps, i, j).exp()).sum();
                (s - self.log_a[i].exp()).abs()
            })
            .sum()
    }
}

fn solve(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64, opts: &SinkhornOptions) -> Result<SinkhornReport> {
    // Zero-mass atoms have log-weight −∞ and drop out of every sum.
    let prob = Problem {
        k1: mu.len(),
        k2: nu.len(),
        cost: cost_matrix(mu, nu, p),
        log_a: mu.weights().iter().map(|w| w.ln()).collect(),
        log_b: nu.weights().iter().map(|w| w.ln()).collect(),
    };
    let mut f = vec![0.0; prob.k1];
    let mut g = vec![0.0; prob.k2];

    if opts.anneal {
        let mut eps = prob.cost.iter().copied().fold(0.0, f64::max);
        while eps > opts.epsilon {
            for _ in 0..10 {
                prob.update_f(&g, eps, &mut f);
                prob.update_g(&f, eps, &mut g);
            }
            eps *= 0.5;
        }
    }

    let eps = opts.epsilon;
    let mut trace = Vec::new();
    let mut violation = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        prob.update_f(&g, eps, &mut f);
        prob.update_g(&f, eps, &mut g);
        iterations += 1;
        violation = prob.row_violation(&f, &g, eps);
        trace.push(violation);
        if violation < opts.tol {
            break;
        }
    }
    if !(violation < opts.tol) {
        return Err(Error::NonConvergence { iterations, violation });
    }

    let mut cost = 0.0;
    for i in 0..prob.k1 {
        for j in 0..prob.k2 {
            let lp = prob.log_plan(&f, &g, eps, i, j);
            if lp > f64::NEG_INFINITY {
                cost += lp.exp() * prob.cost[i * prob.k2 + j];
            }
        }
    }
    let dual = |pot: &[f64], w: &[f64]| pot.iter().zip(w).filter(|(_, w)| **w > 0.0).map(|(x, w)| x * w).sum::<f64>();
    let entropic_cost = dual(&f, mu.weights()) + dual(&g, nu.weights());
    Ok(SinkhornReport {
        cost,
        entropic_cost,
        debiased_cost: None,
        epsilon: eps,
        p,
        iterations,
        marginal_violation: violation,
        violation_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wasserstein::w_exact_lp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(k: usize, shift: f64, rng: &mut ChaCha8Rng) -> EmpiricalMeasure {
        let pts = (0..2 * k).map(|_| rng.random_range(0.0..1.0) + shift).collect();
        EmpiricalMeasure::uniform(pts, 2).unwrap()
    }

    #[test]
    fn matches_exact_transport_on_small_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mu = cloud(32, 0.0, &mut rng);
        let nu = cloud(32, 0.3, &mut rng);
        let exact = w_exact_lp(&mu, &nu, 2.0).unwrap().cost;
        let diam2 = 2.0 * 1.3f64.powi(2);
        let rep = sinkhorn_with(&mu, &nu, 2.0, &SinkhornOptions::new(1e-3 * diam2)).unwrap();
        assert!(((rep.cost - exact) / exact).abs() < 0.01, "{} vs {exact}", rep.cost);
    }

    #[test]
    fn self_cost_vanishes_with_epsilon() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mu = cloud(16, 0.0, &mut rng);
        for eps in [1e-2, 1e-3] {
            let opts = SinkhornOptions { tol: 1e-4, ..SinkhornOptions::new(eps) };
            let rep = sinkhorn_with(&mu, &mu, 2.0, &opts).unwrap();
            assert!(rep.cost <= eps * 16f64.ln() + 1e-9, "{}", rep.cost);
        }
    }

    #[test]
    fn violations_shrink_along_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mu = cloud(20, 0.0, &mut rng);
        let nu = cloud(25, 0.5, &mut rng);
        let rep = sinkhorn(&mu, &nu, 2.0, 0.05, 5000, 1e-10).unwrap();
        assert!(rep.violation_trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-15));
    }

    #[test]
    fn budget_exhaustion_reports_violation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mu = cloud(20, 0.0, &mut rng);
        let nu = cloud(20, 0.5, &mut rng);
        match sinkhorn(&mu, &nu, 2.0, 1e-3, 2, 1e-14) {
            Err(Error::NonConvergence { iterations, violation }) => {
                assert_eq!(iterations, 2);
                assert!(violation > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(sinkhorn(&mu, &nu, 2.0, 0.0, 2, 1e-3).is_err());
    }

    #[test]
    fn debiased_value_is_small_for_identical_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mu = cloud(10, 0.0, &mut rng);
        let opts = SinkhornOptions { debiased: true, ..SinkhornOptions::new(0.05) };
        let rep = sinkhorn_with(&mu, &mu, 2.0, &opts).unwrap();
        assert!(rep.debiased_cost.unwrap().abs() < 1e-8);
    }
}
