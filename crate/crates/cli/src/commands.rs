use ergorate::coupling::{contraction_estimate, find_q, piecewise_ou_contraction, synchronous_pair_sim, DiagonalGrid, DissipativityParams};
use ergorate::experiment::{fit_rate, run_experiment, DistanceKind, ExperimentConfig, RateModel, TimeGrid};
use ergorate::lowerbound::{lower_bound_curve, InvariantTail, LevelFn, LowerBoundInstance};
use ergorate::lyapunov::{drift_check, LyapunovFn, QuadForm};
use ergorate::processes::{
    drift_bound, invariant_tail, simulate_with, BackwardRecurrence, Control, ProcessKind, ProcessSpec, SimOptions,
};
use ergorate::rate_calculus::{LowerRateParams, PhiSpec};
use ergorate::subordination::{subordinate_rate, RateFunction, SubordinatorSpec};
use ergorate::wasserstein::{sinkhorn_with, w_1d, w_exact_lp, EmpiricalMeasure, SinkhornOptions};
use ergorate::{func::ScalarFn, Error, Result};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

pub struct Context {
    config: Value,
    base: PathBuf,
    out_dir: Option<PathBuf>,
}

impl Context {
    pub fn load(path: &Path, seed: Option<u64>, out_dir: Option<PathBuf>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: Value = serde_json::from_str(&text)?;
        if let (Some(s), Some(obj)) = (seed, config.as_object_mut()) {
            obj.insert("seed".into(), json!(s));
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base, out_dir })
    }

    fn parse<T: DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.config.clone())?)
    }

    fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn out(&self, fallback: Option<&str>) -> Result<PathBuf> {
        let dir = match (&self.out_dir, fallback) {
            (Some(d), _) => d.clone(),
            (None, Some(f)) => self.resolve(f),
            (None, None) => PathBuf::from("ergorate-out"),
        };
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn pretty(v: Value) -> Result<String> {
    Ok(serde_json::to_string_pretty(&v)?)
}

#[derive(Deserialize)]
struct SimulateConfig {
    process: ProcessSpec,
    x0: Vec<f64>,
    t_grid: TimeGrid,
    n_paths: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    antithetic: bool,
}

pub fn simulate(ctx: &Context) -> Result<String> {
    let cfg: SimulateConfig = ctx.parse()?;
    let times = cfg.t_grid.times(cfg.process.is_discrete_time())?;
    let opts = SimOptions { antithetic: cfg.antithetic };
    let batch = simulate_with(&cfg.process, &cfg.x0, &times, cfg.n_paths, cfg.seed, &opts)?;
    let dir = ctx.out(None)?;
    let mut w = create(&dir, "paths.csv")?;
    batch.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&dir, "paths.bin")?;
    batch.write_binary(&mut w)?;
    w.flush()?;
    pretty(json!({
        "n_paths": batch.n_paths,
        "n_times": batch.n_times(),
        "dim": batch.dim,
        "spec_hash": batch.spec_hash_hex(),
        "out_dir": dir,
    }))
}

#[derive(Deserialize)]
struct WdistConfig {
    mu: String,
    nu: String,
    p: f64,
    distance: DistanceKind,
}

fn read_measure(path: &Path) -> Result<EmpiricalMeasure> {
    let f = File::open(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    EmpiricalMeasure::read_csv(BufReader::new(f))
}

pub fn wdist(ctx: &Context) -> Result<String> {
    let cfg: WdistConfig = ctx.parse()?;
    let mu = read_measure(&ctx.resolve(&cfg.mu))?;
    let nu = read_measure(&ctx.resolve(&cfg.nu))?;
    let out = match cfg.distance {
        DistanceKind::W1d => json!({ "distance": w_1d(&mu, &nu, cfg.p)? }),
        DistanceKind::ExactLp => {
            let plan = w_exact_lp(&mu, &nu, cfg.p)?;
            json!({ "distance": plan.distance(), "cost": plan.cost, "pivots": plan.pivots })
        }
        DistanceKind::Sinkhorn { epsilon } => {
            let r = sinkhorn_with(&mu, &nu, cfg.p, &SinkhornOptions::new(epsilon))?;
            json!({
                "distance": r.distance(),
                "cost": r.cost,
                "entropic_cost": r.entropic_cost,
                "epsilon": r.epsilon,
                "iterations": r.iterations,
                "marginal_violation": r.marginal_violation,
            })
        }
    };
    pretty(json!({ "p": cfg.p, "method": cfg.distance, "result": out }))
}

/// Product grid `[lo, hi]^dim` with `points` nodes per axis.
#[derive(Deserialize)]
struct BoxGrid {
    lo: f64,
    hi: f64,
    points: usize,
}

impl BoxGrid {
    fn nodes(&self, dim: usize) -> Result<Vec<Vec<f64>>> {
        if !(self.hi > self.lo) || self.points < 2 {
            return Err(Error::Config("grid needs lo < hi and at least two points".into()));
        }
        if (self.points as f64).powi(dim as i32) > 1e6 {
            return Err(Error::Size("grid exceeds 10^6 nodes".into()));
        }
        let axis: Vec<f64> = (0..self.points)
            .map(|k| self.lo + (self.hi - self.lo) * k as f64 / (self.points - 1) as f64)
            .collect();
        let mut nodes = vec![Vec::new()];
        for _ in 0..dim {
            nodes = nodes.into_iter().flat_map(|n| axis.iter().map(move |a| [n.clone(), vec![*a]].concat())).collect();
        }
        Ok(nodes)
    }
}

fn default_jump_samples() -> usize {
    20_000
}

#[derive(Deserialize)]
struct DriftConfig {
    process: ProcessSpec,
    lyapunov: LyapunovFn,
    phi: PhiSpec,
    grid: BoxGrid,
    #[serde(default)]
    ball_radius: Option<f64>,
    #[serde(default = "default_jump_samples")]
    jump_mc_samples: usize,
    #[serde(default)]
    seed: u64,
}

pub fn driftcheck(ctx: &Context) -> Result<String> {
    let cfg: DriftConfig = ctx.parse()?;
    let gen = cfg.process.generator()?;
    let grid = cfg.grid.nodes(cfg.process.dim())?;
    let rep = drift_check(&gen, &cfg.lyapunov, &cfg.phi, &grid, cfg.ball_radius, cfg.jump_mc_samples, cfg.seed)?;
    let dir = ctx.out(None)?;
    let mut w = create(&dir, "drift.csv")?;
    rep.write_csv(&mut w)?;
    w.flush()?;
    pretty(json!({
        "ball_radius": rep.ball_radius,
        "constant_b": rep.constant_b,
        "worst_margin": rep.worst_margin,
        "worst_outside_margin": rep.worst_outside_margin(),
    }))
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum EnvelopeSpec {
    Explicit { q: QuadForm, c_p: f64 },
    /// `Q` from the diagonal search and `c(p)` for the piecewise OU drift;
    /// `lip` bounds the Lipschitz constant of `√Q σ`.
    PiecewiseOu {
        #[serde(default)]
        lip: f64,
    },
}

#[derive(Deserialize)]
struct CoupleConfig {
    process: ProcessSpec,
    x: Vec<f64>,
    y: Vec<f64>,
    t_grid: TimeGrid,
    n_paths: usize,
    p: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    envelope: Option<EnvelopeSpec>,
}

pub fn couple(ctx: &Context) -> Result<String> {
    let cfg: CoupleConfig = ctx.parse()?;
    let params = match cfg.envelope {
        None => None,
        Some(EnvelopeSpec::Explicit { q, c_p }) => Some(DissipativityParams::new(q, cfg.p, c_p)?),
        Some(EnvelopeSpec::PiecewiseOu { lip }) => {
            let ProcessKind::PiecewiseOu(s) = &cfg.process.kind else {
                return Err(Error::Config("piecewise_ou envelope needs a piecewise OU process".into()));
            };
            let Control::Constant { v } = &s.control else {
                return Err(Error::Config("piecewise_ou envelope needs a constant control".into()));
            };
            let q = find_q(&s.m, &s.gamma, v, &DiagonalGrid::default())?
                .ok_or_else(|| Error::NotDissipative("no diagonal Q on the search grid".into()))?;
            let c_p = piecewise_ou_contraction(&s.m, &s.gamma, v, &q, lip, cfg.p)?;
            Some(DissipativityParams::new(q, cfg.p, c_p)?)
        }
    };
    let times = cfg.t_grid.times(cfg.process.is_discrete_time())?;
    let pairs = synchronous_pair_sim(&cfg.process, &cfg.x, &cfg.y, &times, cfg.n_paths, cfg.seed)?;
    let rep = contraction_estimate(&pairs, cfg.p, params.as_ref())?;
    let dir = ctx.out(None)?;
    let mut w = create(&dir, "coupling.csv")?;
    rep.write_csv(&mut w)?;
    w.flush()?;
    pretty(json!({
        "p": rep.p,
        "fitted_rate": rep.fitted_rate,
        "violations": rep.violations,
        "c_p": params.as_ref().map(|d| d.c_p),
        "q": params.as_ref().map(|d| &d.q),
    }))
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TailSpec {
    /// Exact invariant tail of the backward recurrence chain.
    BackwardChain { alpha: f64, i0: u64 },
    /// `π(L > s) = (s/scale)^{−exponent}`.
    Power { scale: f64, exponent: f64 },
}

fn default_c() -> f64 {
    1.0
}

#[derive(Deserialize)]
struct LowerConfig {
    tail: TailSpec,
    params: LowerRateParams,
    #[serde(default = "default_c")]
    c: f64,
    /// Drift constant; computed from the chain when omitted.
    #[serde(default)]
    b: Option<f64>,
    x0: f64,
    /// `V(x0)`; defaults to `x0^θ + 1`.
    #[serde(default)]
    v_x0: Option<f64>,
    n_terms: usize,
    s_grid: TimeGrid,
}

pub fn lower(ctx: &Context) -> Result<String> {
    let cfg: LowerConfig = ctx.parse()?;
    let theta = cfg.params.theta;
    let v = move |x: f64| x.powf(theta) + 1.0;
    let (pi, b) = match cfg.tail {
        TailSpec::BackwardChain { alpha, i0 } => {
            let chain = BackwardRecurrence::new(alpha, i0)?;
            let tail = ScalarFn::new(move |s: &[f64]| invariant_tail(&chain, s[0].floor() as u64 + 1));
            (InvariantTail::Custom(tail), cfg.b.unwrap_or_else(|| drift_bound(&chain, v, 10_000)))
        }
        TailSpec::Power { scale, exponent } => {
            let b = cfg.b.ok_or_else(|| Error::Config("power tails need an explicit drift constant b".into()))?;
            (InvariantTail::Power { scale, exponent }, b)
        }
    };
    let inst = LowerBoundInstance {
        pi,
        level: LevelFn::Norm,
        c: cfg.c,
        b,
        params: cfg.params,
        x0: vec![cfg.x0],
        v_x0: cfg.v_x0.unwrap_or_else(|| v(cfg.x0)),
    };
    let s_grid = cfg.s_grid.times(false)?;
    let curve = lower_bound_curve(&inst, cfg.n_terms, &s_grid)?;
    let dir = ctx.out(None)?;
    let mut w = create(&dir, "lower_bound.csv")?;
    curve.write_csv(&mut w)?;
    w.flush()?;
    pretty(json!({ "b": b, "terms": curve.len(), "s": curve.s, "t": curve.t, "bound": curve.bound }))
}

#[derive(Deserialize)]
struct SubordinateConfig {
    subordinator: SubordinatorSpec,
    rate: RateFunction,
    p: f64,
    times: Vec<f64>,
    n_mc: usize,
    #[serde(default)]
    seed: u64,
}

pub fn subordinate(ctx: &Context) -> Result<String> {
    let cfg: SubordinateConfig = ctx.parse()?;
    cfg.subordinator.validate()?;
    let dir = ctx.out(None)?;
    let mut w = create(&dir, "subordinate.csv")?;
    writeln!(w, "t,value,ci_lo,ci_hi,exact")?;
    let mut rows = Vec::new();
    for (k, &t) in cfg.times.iter().enumerate() {
        let est = subordinate_rate(&cfg.rate, cfg.p, &cfg.subordinator, t, cfg.n_mc, cfg.seed.wrapping_add(k as u64))?;
        let exact = est.exact.map(|e| e.to_string()).unwrap_or_default();
        writeln!(w, "{t},{},{},{},{exact}", est.value, est.ci_lo, est.ci_hi)?;
        rows.push(json!({ "t": t, "estimate": est }));
    }
    w.flush()?;
    pretty(json!({ "p": cfg.p, "rows": rows }))
}

fn default_time_column() -> String {
    "t".into()
}

fn default_value_column() -> String {
    "distance".into()
}

#[derive(Deserialize)]
struct RatefitConfig {
    input: String,
    model: RateModel,
    #[serde(default = "default_time_column")]
    time_column: String,
    #[serde(default = "default_value_column")]
    value_column: String,
}

/// Reads two named columns, skipping rows where either cell is empty.
fn read_columns(path: &Path, tc: &str, vc: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let f = File::open(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = BufReader::new(f).lines();
    let header = lines.next().ok_or_else(|| Error::Config("empty CSV".into()))??;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| {
        cols.iter().position(|c| *c == name).ok_or_else(|| Error::Config(format!("no column named {name}")))
    };
    let (ti, vi) = (find(tc)?, find(vc)?);
    let (mut t, mut v) = (Vec::new(), Vec::new());
    for line in lines {
        let line = line?;
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let get = |i: usize| cells.get(i).copied().unwrap_or("");
        if get(ti).is_empty() || get(vi).is_empty() {
            continue;
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|_| Error::Config(format!("bad number {s:?}")));
        t.push(parse(get(ti))?);
        v.push(parse(get(vi))?);
    }
    Ok((t, v))
}

pub fn ratefit(ctx: &Context) -> Result<String> {
    let cfg: RatefitConfig = ctx.parse()?;
    let (t, v) = read_columns(&ctx.resolve(&cfg.input), &cfg.time_column, &cfg.value_column)?;
    let fit = fit_rate(&t, &v, cfg.model)?;
    Ok(serde_json::to_string_pretty(&fit)?)
}

pub fn run(ctx: &Context) -> Result<String> {
    let cfg: ExperimentConfig = ctx.parse()?;
    let dir = ctx.out(cfg.out_dir.as_deref())?;
    let outcome = run_experiment(&cfg, &dir)?;
    if let Some(msg) = &outcome.summary.fit_error {
        eprintln!("distances written to {}", dir.display());
        let detail = msg.strip_prefix("degenerate data: ").unwrap_or(msg);
        return Err(Error::DegenerateData(detail.to_string()));
    }
    Ok(serde_json::to_string_pretty(&outcome.summary)?)
}
