use crate::error::{config, Result};
use std::io::{BufRead, Write};

/// Weighted point cloud in `ℝⁿ`, points stored row by row.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    points: Vec<f64>,
    dim: usize,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    /// Checks nonnegativity and `|Σw − 1| ≤ max(1e-12, 4kε)` for `k` atoms,
    /// the second term covering rounding in a plain left-to-right sum.
    pub fn new(points: Vec<f64>, dim: usize, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.len() != dim * weights.len() {
            return Err(config("points and weights have inconsistent sizes"));
        }
        if weights.is_empty() {
            return Err(config("empirical measure needs at least one atom"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(config("weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12f64.max(4.0 * weights.len() as f64 * f64::EPSILON) {
            return Err(config(format!("weights sum to {total}, not 1")));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(config("points must be finite"));
        }
        Ok(Self { points, dim, weights })
    }

    /// Rescales positive weights to sum to one.
    pub fn normalized(points: Vec<f64>, dim: usize, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(config("weights must have positive total mass"));
        }
        Self::new(points, dim, weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(points: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || points.len() % dim != 0 || points.is_empty() {
            return Err(config("points must form a nonempty k × dim array"));
        }
        let k = points.len() / dim;
        Self::new(points, dim, vec![1.0 / k as f64; k])
    }

    pub fn dirac(point: Vec<f64>) -> Result<Self> {
        let dim = point.len();
        Self::new(point, dim, vec![1.0])
    }

    /// Distribution on `{0, …, k−1}` with the given probabilities, which may
    /// miss unit mass by up to `1e-9` (recursively computed laws do) and are
    /// then renormalised.
    pub fn on_integers(probs: &[f64]) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(config(format!("probabilities sum to {total}, not 1")));
        }
        Self::normalized((0..probs.len()).map(|i| i as f64).collect(), 1, probs.to_vec())
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `∫ f dμ`.
    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        (0..self.len()).map(|i| self.weights[i] * f(self.point(i))).sum()
    }

    /// CSV with columns `x1..xn,weight`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let cols: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        writeln!(w, "{},weight", cols.join(","))?;
        for i in 0..self.len() {
            let xs: Vec<String> = self.point(i).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{}", xs.join(","), self.weights[i])?;
        }
        Ok(())
    }

    /// Reads the CSV written by [`EmpiricalMeasure::write_csv`], renormalising
    /// the weights.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| config("empty measure file"))??;
        let dim = header.split(',').count().checked_sub(1).filter(|d| *d > 0).ok_or_else(|| config("bad header"))?;
        let (mut points, mut weights) = (Vec::new(), Vec::new());
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| config(format!("bad number {v:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != dim + 1 {
                return Err(config("row length differs from header"));
            }
            points.extend_from_slice(&vals[..dim]);
            weights.push(vals[dim]);
        }
        Self::normalized(points, dim, weights)
    }
}
