//! Path simulation: Euler–Maruyama with exact Lévy increments for
//! continuous-time specs, exact recursions for discrete-time ones.

use super::backward::BackwardRecurrence;
use super::exact::LangevinField;
use super::levy::{LevyKind, LevyMeasureSpec};
use super::{piecewise_drift_spec, NoiseSpec, NonlinearSsSpec, ProcessKind, ProcessSpec, SigmaSpec};
use crate::error::{config, Error, Result};
use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};

/// Paths leaving this ball are reported as blown up.
pub const OVERFLOW_GUARD: f64 = 1e12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Pair paths `2k` and `2k+1` with negated Gaussian increments.
    pub antithetic: bool,
}

/// Simulated paths sampled on a time grid, stored path-major:
/// `data[(path·n_times + time)·dim + coord]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBatch {
    pub times: Vec<f64>,
    pub n_paths: usize,
    pub dim: usize,
    pub data: Vec<f64>,
    pub spec_hash: [u8; 32],
    pub seed: u64,
}

/// Two coupled batches driven by the same noise, path by path.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedBatch {
    pub first: TrajectoryBatch,
    pub second: TrajectoryBatch,
}

const MAGIC: &[u8; 8] = b"ERGTRJ01";

impl TrajectoryBatch {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn state(&self, path: usize, time: usize) -> &[f64] {
        let start = (path * self.times.len() + time) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// All path values at grid index `time`, flattened (`n_paths × dim`).
    pub fn marginal(&self, time: usize) -> Vec<f64> {
        (0..self.n_paths).flat_map(|p| self.state(p, time).iter().copied()).collect()
    }

    pub fn spec_hash_hex(&self) -> String {
        self.spec_hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&self.spec_hash)?;
        for v in [self.seed, self.n_paths as u64, self.times.len() as u64, self.dim as u64] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in self.times.iter().chain(&self.data) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(config("not a trajectory file"));
        }
        let mut spec_hash = [0u8; 32];
        r.read_exact(&mut spec_hash)?;
        let mut word = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let seed = next_u64(&mut r)?;
        let n_paths = next_u64(&mut r)? as usize;
        let n_times = next_u64(&mut r)? as usize;
        let dim = next_u64(&mut r)? as usize;
        let mut read_f64s = |k: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; k * 8];
            r.read_exact(&mut buf)?;
            Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let times = read_f64s(n_times)?;
        let data = read_f64s(n_paths * n_times * dim)?;
        Ok(Self { times, n_paths, dim, data, spec_hash, seed })
    }

    /// Long-format CSV: `path,time,x1..xn`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let coords: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        writeln!(w, "path,time,{}", coords.join(","))?;
        for p in 0..self.n_paths {
            for (k, t) in self.times.iter().enumerate() {
                let xs: Vec<String> = self.state(p, k).iter().map(|v| v.to_string()).collect();
                writeln!(w, "{p},{t},{}", xs.join(","))?;
            }
        }
        Ok(())
    }
}

/// SHA-256 of the spec's JSON form, or of its debug form when it holds closures.
pub fn spec_hash(spec: &ProcessSpec) -> [u8; 32] {
    let text = serde_json::to_string(spec).unwrap_or_else(|_| format!("{spec:?}"));
    Sha256::digest(text.as_bytes()).into()
}

/// Simulates `n_paths` independent paths from `x0`, recorded at `t_grid`.
pub fn simulate(spec: &ProcessSpec, x0: &[f64], t_grid: &[f64], n_paths: usize, seed: u64) -> Result<TrajectoryBatch> {
    simulate_with(spec, x0, t_grid, n_paths, seed, &SimOptions::default())
}

pub fn simulate_with(
    spec: &ProcessSpec,
    x0: &[f64],
    t_grid: &[f64],
    n_paths: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<TrajectoryBatch> {
    let mut out = run(spec, &[x0], t_grid, n_paths, seed, opts)?;
    Ok(out.pop().unwrap())
}

/// Simulates the synchronous coupling of the processes started at `x` and `y`.
pub fn simulate_pair(
    spec: &ProcessSpec,
    x: &[f64],
    y: &[f64],
    t_grid: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<PairedBatch> {
    let mut out = run(spec, &[x, y], t_grid, n_paths, seed, &SimOptions::default())?;
    let second = out.pop().unwrap();
    let first = out.pop().unwrap();
    Ok(PairedBatch { first, second })
}

fn check_grid(spec: &ProcessSpec, t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(config("time grid is empty"));
    }
    if t_grid.iter().any(|t| !t.is_finite()) || t_grid[0] < 0.0 {
        return Err(config("time grid must be finite and nonnegative"));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(config("time grid must be strictly increasing"));
    }
    if spec.is_discrete_time() && t_grid.iter().any(|t| t.fract() != 0.0) {
        return Err(config("discrete-time processes need integer grid times"));
    }
    Ok(())
}

fn run(
    spec: &ProcessSpec,
    starts: &[&[f64]],
    t_grid: &[f64],
    n_paths: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<Vec<TrajectoryBatch>> {
    spec.validate()?;
    check_grid(spec, t_grid)?;
    let dim = spec.dim();
    if starts.iter().any(|x| x.len() != dim) {
        return Err(config(format!("initial condition must have dimension {dim}")));
    }
    if n_paths == 0 {
        return Err(config("need at least one path"));
    }
    let engine = Engine::new(spec)?;
    let k = starts.len();
    let per_path = t_grid.len() * dim;
    let paths: Vec<Vec<Vec<f64>>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let (stream, negate) = if opts.antithetic { (p as u64 / 2, p % 2 == 1) } else { (p as u64, false) };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            let mut out = vec![vec![0.0; per_path]; k];
            engine.run_path(starts, t_grid, spec.max_step, &mut rng, negate, &mut out)?;
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let hash = spec_hash(spec);
    Ok((0..k)
        .map(|c| TrajectoryBatch {
            times: t_grid.to_vec(),
            n_paths,
            dim,
            data: paths.iter().flat_map(|p| p[c].iter().copied()).collect(),
            spec_hash: hash,
            seed,
        })
        .collect())
}

enum Diffusion {
    None,
    /// `σ(x) = s(x)·I` (square noise).
    Scalar(Box<dyn Fn(&[f64]) -> f64 + Send + Sync>),
    Matrix(SigmaSpec),
}

struct Continuous {
    dim: usize,
    drift: Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
    diffusion: Diffusion,
    noise_dim: usize,
    levy: LevyMeasureSpec,
    levy_drift: Vec<f64>,
    levy_sqrt: Option<DMatrix<f64>>,
}

enum Engine<'a> {
    Continuous(Continuous),
    Backward(BackwardRecurrence),
    StateSpace(&'a NonlinearSsSpec),
}

fn blown_up(x: &[f64]) -> bool {
    x.iter().any(|v| !(v.abs() <= OVERFLOW_GUARD))
}

impl<'a> Engine<'a> {
    fn new(spec: &'a ProcessSpec) -> Result<Self> {
        let n = spec.dim();
        let continuous = |drift: Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
                          diffusion: Diffusion,
                          levy: &LevyMeasureSpec|
         -> Result<Engine<'a>> {
            let noise_dim = match &diffusion {
                Diffusion::None => 0,
                Diffusion::Scalar(_) => n,
                Diffusion::Matrix(s) => s.noise_dim(),
            };
            let levy_sqrt = levy.gaussian.as_ref().map(|a| crate::numerics::psd_sqrt(a, 1e-10)).transpose()?;
            Ok(Engine::Continuous(Continuous {
                dim: n,
                drift,
                diffusion,
                noise_dim,
                levy: levy.clone(),
                levy_drift: levy.drift_or_zero(n),
                levy_sqrt,
            }))
        };
        match &spec.kind {
            ProcessKind::LangevinTempered(s) => {
                let field = LangevinField::new(s)?;
                let f2 = field.clone();
                continuous(
                    Box::new(move |x, o| o.copy_from_slice(&field.coeffs(x).0)),
                    Diffusion::Scalar(Box::new(move |x| f2.coeffs(x).1)),
                    &LevyMeasureSpec::none(),
                )
            }
            ProcessKind::OuJump { h, levy } => {
                let h = h.clone();
                continuous(
                    Box::new(move |x, o| {
                        for (i, oi) in o.iter_mut().enumerate() {
                            *oi = (0..x.len()).map(|j| h[(i, j)] * x[j]).sum();
                        }
                    }),
                    Diffusion::None,
                    levy,
                )
            }
            ProcessKind::PiecewiseOu(s) => {
                let s1 = s.clone();
                let diffusion =
                    if s.sigma.is_zero() { Diffusion::None } else { Diffusion::Matrix(s.sigma.clone()) };
                continuous(Box::new(move |x, o| o.copy_from_slice(&piecewise_drift_spec(&s1, x))), diffusion, &s.levy)
            }
            ProcessKind::GenericIto(s) => {
                let d = s.drift.clone();
                let diffusion =
                    if s.sigma.is_zero() { Diffusion::None } else { Diffusion::Matrix(s.sigma.clone()) };
                continuous(Box::new(move |x, o| d.eval_into(x, o)), diffusion, &s.levy)
            }
            ProcessKind::BackwardRecurrence(b) => Ok(Engine::Backward(*b)),
            ProcessKind::NonlinearSs(s) => Ok(Engine::StateSpace(s)),
        }
    }

    fn run_path(
        &self,
        starts: &[&[f64]],
        times: &[f64],
        max_step: f64,
        rng: &mut ChaCha8Rng,
        negate: bool,
        out: &mut [Vec<f64>],
    ) -> Result<()> {
        match self {
            Engine::Continuous(c) => c.run_path(starts, times, max_step, rng, negate, out),
            Engine::Backward(b) => backward_path(b, starts, times, rng, out),
            Engine::StateSpace(s) => state_space_path(s, starts, times, rng, negate, out),
        }
    }
}

impl Continuous {
    fn run_path(
        &self,
        starts: &[&[f64]],
        times: &[f64],
        max_step: f64,
        rng: &mut ChaCha8Rng,
        negate: bool,
        out: &mut [Vec<f64>],
    ) -> Result<()> {
        let n = self.dim;
        let mut states: Vec<Vec<f64>> = starts.iter().map(|s| s.to_vec()).collect();
        let mut dw = vec![0.0; self.noise_dim];
        let mut dw_levy = vec![0.0; if self.levy_sqrt.is_some() { n } else { 0 }];
        let mut dl = vec![0.0; n];
        let mut mark = vec![0.0; n];
        let mut b = vec![0.0; n];
        let sign = if negate { -1.0 } else { 1.0 };
        let jump_clock = match &self.levy.kind {
            LevyKind::CompoundPoisson { rate, .. } => Some(Exp::new(*rate).map_err(|e| config(e.to_string()))?),
            _ => None,
        };
        let mut next_jump = jump_clock.as_ref().map_or(f64::INFINITY, |c| c.sample(rng));
        let mut t = 0.0;
        let record = |states: &[Vec<f64>], k: usize, out: &mut [Vec<f64>]| {
            for (c, s) in states.iter().enumerate() {
                out[c][k * n..(k + 1) * n].copy_from_slice(s);
            }
        };
        for (k, &target) in times.iter().enumerate() {
            let span = target - t;
            if span > 0.0 {
                let steps = (span / max_step).ceil().max(1.0) as usize;
                let dt = span / steps as f64;
                let sq = dt.sqrt();
                for step in 0..steps {
                    let t_end = if step + 1 == steps { target } else { t + dt };
                    for w in dw.iter_mut().chain(dw_levy.iter_mut()) {
                        let z: f64 = StandardNormal.sample(rng);
                        *w = sign * sq * z;
                    }
                    for (i, d) in dl.iter_mut().enumerate() {
                        *d = self.levy_drift[i] * dt;
                    }
                    if let Some(s) = &self.levy_sqrt {
                        for i in 0..n {
                            dl[i] += (0..n).map(|j| s[(i, j)] * dw_levy[j]).sum::<f64>();
                        }
                    }
                    self.levy.add_stable_increment(dt, rng, &mut dl);
                    if let (Some(clock), LevyKind::CompoundPoisson { jumps, .. }) = (&jump_clock, &self.levy.kind) {
                        while next_jump <= t_end {
                            jumps.sample(rng, &mut mark);
                            dl.iter_mut().zip(&mark).for_each(|(d, m)| *d += m);
                            next_jump += clock.sample(rng);
                        }
                    }
                    for x in states.iter_mut() {
                        (self.drift)(x, &mut b);
                        match &self.diffusion {
                            Diffusion::None => {
                                for i in 0..n {
                                    x[i] += b[i] * dt + dl[i];
                                }
                            }
                            Diffusion::Scalar(s) => {
                                let s = s(x);
                                for i in 0..n {
                                    x[i] += b[i] * dt + s * dw[i] + dl[i];
                                }
                            }
                            Diffusion::Matrix(sig) => {
                                let m = sig.eval(x);
                                for i in 0..n {
                                    let noise: f64 = (0..self.noise_dim).map(|j| m[(i, j)] * dw[j]).sum();
                                    x[i] += b[i] * dt + noise + dl[i];
                                }
                            }
                        }
                        if blown_up(x) {
                            return Err(Error::BlowUp(format!("|x| exceeded {OVERFLOW_GUARD:e} at t = {t_end}")));
                        }
                    }
                    t = t_end;
                }
            }
            record(&states, k, out);
        }
        Ok(())
    }
}

fn backward_path(
    chain: &BackwardRecurrence,
    starts: &[&[f64]],
    times: &[f64],
    rng: &mut ChaCha8Rng,
    out: &mut [Vec<f64>],
) -> Result<()> {
    let mut states = starts
        .iter()
        .map(|s| {
            if s[0] >= 0.0 && s[0].fract() == 0.0 {
                Ok(s[0] as u64)
            } else {
                Err(config("backward recurrence starts from a nonnegative integer"))
            }
        })
        .collect::<Result<Vec<u64>>>()?;
    let mut t = 0u64;
    for (k, &target) in times.iter().enumerate() {
        let target = target as u64;
        while t < target {
            let u: f64 = rng.random();
            for s in states.iter_mut() {
                *s = if u < chain.p(*s) { *s + 1 } else { 0 };
            }
            t += 1;
        }
        for (c, s) in states.iter().enumerate() {
            out[c][k] = *s as f64;
        }
    }
    Ok(())
}

fn sample_noise(noise: &NoiseSpec, rng: &mut ChaCha8Rng, sign: f64, out: &mut [f64]) {
    match noise {
        NoiseSpec::Gaussian { std, .. } => {
            for o in out.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *o = sign * std * z;
            }
        }
        NoiseSpec::Laplace { scale, .. } => {
            for o in out.iter_mut() {
                let e: f64 = Exp1.sample(rng);
                *o = if rng.random::<bool>() { scale * e } else { -scale * e };
            }
        }
        NoiseSpec::Custom { sampler, .. } => (sampler.0)(rng as &mut dyn RngCore, out),
    }
}

fn state_space_path(
    spec: &NonlinearSsSpec,
    starts: &[&[f64]],
    times: &[f64],
    rng: &mut ChaCha8Rng,
    negate: bool,
    out: &mut [Vec<f64>],
) -> Result<()> {
    let n = spec.noise.dim();
    let mut states: Vec<Vec<f64>> = starts.iter().map(|s| s.to_vec()).collect();
    let mut w = vec![0.0; n];
    let mut fx = vec![0.0; n];
    let sign = if negate { -1.0 } else { 1.0 };
    let mut t = 0u64;
    for (k, &target) in times.iter().enumerate() {
        let target = target as u64;
        while t < target {
            sample_noise(&spec.noise, rng, sign, &mut w);
            for x in states.iter_mut() {
                spec.map.eval_into(x, &mut fx);
                for i in 0..n {
                    x[i] = fx[i] + w[i];
                }
                if blown_up(x) {
                    return Err(Error::BlowUp(format!("|x| exceeded {OVERFLOW_GUARD:e} at step {}", t + 1)));
                }
            }
            t += 1;
        }
        for (c, s) in states.iter().enumerate() {
            out[c][k * n..(k + 1) * n].copy_from_slice(s);
        }
    }
    Ok(())
}
