use super::{check_order, dist_p, EmpiricalMeasure};
use crate::error::{domain, Error, Result};
use nalgebra::DMatrix;
use rayon::prelude::*;
use std::collections::VecDeque;

/// Largest `k₁·k₂` accepted by [`w_exact_lp`].
pub const MAX_LP_CELLS: usize = 10_000;

// Switch from Dantzig to Bland pricing after this many degenerate pivots in a row.
const DEGENERATE_RUN: usize = 50;

/// Optimal coupling between two empirical measures.
#[derive(Clone, Debug)]
pub struct TransportPlan {
    pub source: EmpiricalMeasure,
    pub target: EmpiricalMeasure,
    /// `plan[(i, j)]` is the mass moved from source atom `i` to target atom `j`.
    pub plan: DMatrix<f64>,
    /// `Σ plan_ij · |x_i − y_j|^p`.
    pub cost: f64,
    pub p: f64,
    pub pivots: usize,
}

impl TransportPlan {
    pub fn distance(&self) -> f64 {
        self.cost.max(0.0).powf(1.0 / self.p)
    }

    /// Largest absolute deviation of a row or column sum from its marginal.
    pub fn marginal_error(&self) -> f64 {
        let rows = self.plan.row_iter().zip(self.source.weights()).map(|(r, w)| (r.sum() - w).abs());
        let cols = self.plan.column_iter().zip(self.target.weights()).map(|(c, w)| (c.sum() - w).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }
}

pub(crate) fn cost_matrix(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> Vec<f64> {
    let k2 = nu.len();
    let mut c = vec![0.0; mu.len() * k2];
    c.par_chunks_mut(k2).enumerate().for_each(|(i, row)| {
        let x = mu.point(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = dist_p(x, nu.point(j), p);
        }
    });
    c
}

/// Exact optimal transport by the network simplex method on the bipartite
/// transportation polytope. Zero-mass atoms are dropped before solving and
/// get empty rows or columns in the returned plan.
pub fn w_exact_lp(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> Result<TransportPlan> {
    check_order(p)?;
    if mu.dim() != nu.dim() {
        return Err(domain("measures live in different dimensions"));
    }
    let rows: Vec<usize> = (0..mu.len()).filter(|&i| mu.weights()[i] > 0.0).collect();
    let cols: Vec<usize> = (0..nu.len()).filter(|&j| nu.weights()[j] > 0.0).collect();
    let (m, n) = (rows.len(), cols.len());
    if m * n > MAX_LP_CELLS {
        return Err(Error::Size(format!("{m} × {n} transport problem exceeds {MAX_LP_CELLS} cells")));
    }
    let full = cost_matrix(mu, nu, p);
    let k2 = nu.len();
    let cost: Vec<f64> = rows.iter().flat_map(|&i| cols.iter().map(move |&j| (i, j))).map(|(i, j)| full[i * k2 + j]).collect();
    let a: Vec<f64> = rows.iter().map(|&i| mu.weights()[i]).collect();
    let b: Vec<f64> = cols.iter().map(|&j| nu.weights()[j]).collect();

    let mut solver = Simplex::northwest(&a, &b, cost);
    let pivots = solver.run()?;

    let mut plan = DMatrix::zeros(mu.len(), nu.len());
    let mut total = 0.0;
    for &(i, j) in &solver.basis {
        let f = solver.flow[i * n + j].max(0.0);
        plan[(rows[i], cols[j])] = f;
        total += f * solver.cost[i * n + j];
    }
    Ok(TransportPlan { source: mu.clone(), target: nu.clone(), plan, cost: total, p, pivots })
}

struct Simplex {
    m: usize,
    n: usize,
    cost: Vec<f64>,
    flow: Vec<f64>,
    basis: Vec<(usize, usize)>,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl Simplex {
    /// Northwest-corner start: exactly `m + n − 1` basic cells, some possibly at zero flow.
    fn northwest(a: &[f64], b: &[f64], cost: Vec<f64>) -> Self {
        let (m, n) = (a.len(), b.len());
        let mut ra = a.to_vec();
        let mut rb = b.to_vec();
        let mut flow = vec![0.0; m * n];
        let mut basis = Vec::with_capacity(m + n - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let q = ra[i].min(rb[j]).max(0.0);
            flow[i * n + j] = q;
            basis.push((i, j));
            ra[i] -= q;
            rb[j] -= q;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if i == m - 1 {
                j += 1;
            } else if j == n - 1 || ra[i] <= rb[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self { m, n, cost, flow, basis, u: vec![0.0; m], v: vec![0.0; n] }
    }

    /// Tree adjacency over nodes `0..m` (rows) and `m..m+n` (columns); each
    /// entry carries the index of the basic cell on that edge.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for (k, &(i, j)) in self.basis.iter().enumerate() {
            adj[i].push((self.m + j, k));
            adj[self.m + j].push((i, k));
        }
        adj
    }

    fn potentials(&mut self, adj: &[Vec<(usize, usize)>]) -> Result<()> {
        let total = self.m + self.n;
        let mut seen = vec![false; total];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        self.u[0] = 0.0;
        let mut count = 1;
        while let Some(node) = queue.pop_front() {
            for &(other, k) in &adj[node] {
                if seen[other] {
                    continue;
                }
                let (i, j) = self.basis[k];
                let c = self.cost[i * self.n + j];
                if other >= self.m {
                    self.v[j] = c - self.u[i];
                } else {
                    self.u[i] = c - self.v[j];
                }
                seen[other] = true;
                count += 1;
                queue.push_back(other);
            }
        }
        if count != total {
            return Err(Error::Numerical("transport basis is not a spanning tree".into()));
        }
        Ok(())
    }

    /// Basic-cell indices along the tree path from row `i` to column `j`.
    fn tree_path(&self, adj: &[Vec<(usize, usize)>], i: usize, j: usize) -> Vec<usize> {
        let total = self.m + self.n;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; total];
        let mut seen = vec![false; total];
        let mut queue = VecDeque::from([i]);
        seen[i] = true;
        let goal = self.m + j;
        while let Some(node) = queue.pop_front() {
            if node == goal {
                break;
            }
            for &(other, k) in &adj[node] {
                if !seen[other] {
                    seen[other] = true;
                    parent[other] = Some((node, k));
                    queue.push_back(other);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = goal;
        while let Some((prev, k)) = parent[node] {
            path.push(k);
            node = prev;
        }
        path.reverse();
        path
    }

    fn run(&mut self) -> Result<usize> {
        let scale = self.cost.iter().fold(0.0f64, |a, &c| a.max(c.abs())).max(1e-300);
        let tol = 1e-12 * scale;
        let cap = 100 * self.m * self.n + 1000;
        let mut degenerate = 0;
        let mut in_basis = vec![false; self.m * self.n];
        for &(i, j) in &self.basis {
            in_basis[i * self.n + j] = true;
        }
        for pivot in 0..cap {
            let adj = self.adjacency();
            self.potentials(&adj)?;
            let bland = degenerate > DEGENERATE_RUN;
            let mut entering = None;
            let mut best = -tol;
            'scan: for i in 0..self.m {
                for j in 0..self.n {
                    if in_basis[i * self.n + j] {
                        continue;
                    }
                    let d = self.cost[i * self.n + j] - self.u[i] - self.v[j];
                    if d < best {
                        entering = Some((i, j));
                        if bland {
                            break 'scan;
                        }
                        best = d;
                    }
                }
            }
            let Some((ei, ej)) = entering else {
                return Ok(pivot);
            };
            let path = self.tree_path(&adj, ei, ej);
            // Along the path from row ei to column ej the cells alternate
            // between losing and gaining the pivot amount, starting with a loss.
            let mut theta = f64::INFINITY;
            let mut leaving = usize::MAX;
            for (pos, &k) in path.iter().enumerate() {
                if pos % 2 == 0 {
                    let (i, j) = self.basis[k];
                    let f = self.flow[i * self.n + j];
                    let better = f < theta || (f == theta && bland && self.basis[k] < self.basis[leaving]);
                    if better {
                        theta = f;
                        leaving = k;
                    }
                }
            }
            let theta = theta.max(0.0);
            for (pos, &k) in path.iter().enumerate() {
                let (i, j) = self.basis[k];
                let cell = &mut self.flow[i * self.n + j];
                if pos % 2 == 0 {
                    *cell -= theta;
                } else {
                    *cell += theta;
                }
            }
            self.flow[ei * self.n + ej] = theta;
            let (li, lj) = self.basis[leaving];
            self.flow[li * self.n + lj] = 0.0;
            in_basis[li * self.n + lj] = false;
            in_basis[ei * self.n + ej] = true;
            self.basis[leaving] = (ei, ej);
            if theta <= 0.0 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
        }
        Err(Error::NonConvergence { iterations: cap, violation: f64::NAN })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wasserstein::w_1d;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn self_transport_is_free_and_diagonal() {
        let mu = EmpiricalMeasure::new(vec![0.0, 0.0, 1.0, 0.0, 0.0, 2.0], 2, vec![0.2, 0.3, 0.5]).unwrap();
        let plan = w_exact_lp(&mu, &mu, 2.0).unwrap();
        assert!(plan.cost.abs() < 1e-15);
        for i in 0..3 {
            assert!((plan.plan[(i, i)] - mu.weights()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn two_by_two_picks_cheaper_matching() {
        let mu = EmpiricalMeasure::uniform(vec![0.0, 0.0, 1.0, 0.0], 2).unwrap();
        let nu = EmpiricalMeasure::uniform(vec![0.2, 1.0, 1.1, -0.5], 2).unwrap();
        let d = |a: &[f64], b: &[f64]| dist_p(a, b, 1.0);
        let straight = 0.5 * (d(mu.point(0), nu.point(0)) + d(mu.point(1), nu.point(1)));
        let crossed = 0.5 * (d(mu.point(0), nu.point(1)) + d(mu.point(1), nu.point(0)));
        let plan = w_exact_lp(&mu, &nu, 1.0).unwrap();
        assert!((plan.cost - straight.min(crossed)).abs() < 1e-12);
    }

    #[test]
    fn agrees_with_quantile_coupling_on_the_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let k1 = rng.random_range(1..12);
            let k2 = rng.random_range(1..12);
            let pts = |k: usize, rng: &mut ChaCha8Rng| (0..k).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>();
            let wts = |k: usize, rng: &mut ChaCha8Rng| (0..k).map(|_| rng.random::<f64>()).collect::<Vec<f64>>();
            let mu = EmpiricalMeasure::normalized(pts(k1, &mut rng), 1, wts(k1, &mut rng)).unwrap();
            let nu = EmpiricalMeasure::normalized(pts(k2, &mut rng), 1, wts(k2, &mut rng)).unwrap();
            for p in [1.0, 1.5, 2.0] {
                let lp = w_exact_lp(&mu, &nu, p).unwrap();
                assert!(lp.marginal_error() < 1e-12);
                assert!((lp.distance() - w_1d(&mu, &nu, p).unwrap()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_weights_are_pruned_and_size_is_guarded() {
        let mu = EmpiricalMeasure::new(vec![0.0, 5.0], 1, vec![1.0, 0.0]).unwrap();
        let nu = EmpiricalMeasure::dirac(vec![2.0]).unwrap();
        let plan = w_exact_lp(&mu, &nu, 1.0).unwrap();
        assert_eq!(plan.plan[(1, 0)], 0.0);
        assert!((plan.distance() - 2.0).abs() < 1e-15);
        let big = EmpiricalMeasure::uniform((0..101).map(f64::from).collect(), 1).unwrap();
        assert!(matches!(w_exact_lp(&big, &big, 1.0), Err(Error::Size(_))));
    }
}
