//! Experiment configuration, orchestration and CSV/JSON output.
//!
//! Every CSV starts with `#schema=v1` and `#config_hash=<sha256>` lines,
//! followed by an optional `#created=` timestamp line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lqg::TypeSet;
use crate::meanfield::{solve_mfte, MFTESolution, SolverConfig};
use crate::records::{type_set_from_records, TeamTypeRecord, SCHEMA};
use crate::rng::derive_seed;
use crate::sim::{
    median, nash_gap, quantile, sample_population, simulate, DeviationSpec, GapReport, Mismatch, SimConfig,
    SimResult,
};
use crate::value_model::Degree;

/// Values swept by `cmd_sweep`, one solve+simulate per entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Sweep {
    /// `[lambda, alpha]` pairs.
    LambdaAlpha(Vec<[f64; 2]>),
    Alpha(Vec<f64>),
    #[serde(rename = "N")]
    N(Vec<usize>),
    Degree(Vec<Degree>),
}

impl Sweep {
    fn name(&self) -> &'static str {
        match self {
            Sweep::LambdaAlpha(_) => "lambda_alpha",
            Sweep::Alpha(_) => "alpha",
            Sweep::N(_) => "N",
            Sweep::Degree(_) => "degree",
        }
    }

    fn len(&self) -> usize {
        match self {
            Sweep::LambdaAlpha(v) => v.len(),
            Sweep::Alpha(v) => v.len(),
            Sweep::N(v) => v.len(),
            Sweep::Degree(v) => v.len(),
        }
    }
}

/// A complete experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub types: Vec<TeamTypeRecord>,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub lambda: f64,
    pub alpha: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deviation: Option<DeviationSpec>,
}

fn sha256_json<T: Serialize>(value: &T) -> String {
    // serde_json::Value keeps object keys sorted, which makes the text canonical.
    let canonical = serde_json::to_value(value).and_then(|v| serde_json::to_string(&v));
    let text = canonical.expect("config serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.type_set()?;
        if self.horizon == 0 {
            return Err(Error::config("T", "horizon must be at least 1"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config("lambda", "must be finite and non-negative"));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::config("alpha", "must be finite and positive"));
        }
        let s = &self.solver;
        if !(s.damping > 0.0 && s.damping <= 1.0) {
            return Err(Error::config("solver.damping", "must lie in (0, 1]"));
        }
        if !(s.tol > 0.0) {
            return Err(Error::config("solver.tol", "must be positive"));
        }
        if s.max_iter == 0 {
            return Err(Error::config("solver.max_iter", "must be positive"));
        }
        if s.rollouts == 0 {
            return Err(Error::config("solver.rollouts", "must be positive"));
        }
        if s.fit.samples < 10 * s.fit.degree.feature_count() {
            return Err(Error::config("solver.fit.samples", "too few samples for the polynomial degree"));
        }
        if !(s.fit.ridge > 0.0) {
            return Err(Error::config("solver.fit.ridge", "must be positive"));
        }
        if self.sim.n == 0 {
            return Err(Error::config("sim.N", "must be at least 1"));
        }
        if self.sim.runs == 0 {
            return Err(Error::config("sim.runs", "must be at least 1"));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.len() == 0 {
                return Err(Error::config("sweep", "sweep list is empty"));
            }
            if let Sweep::N(v) = sweep {
                if v.contains(&0) {
                    return Err(Error::config("sweep.N", "team counts must be positive"));
                }
            }
        }
        Ok(())
    }

    pub fn type_set(&self) -> Result<TypeSet<f64>> {
        type_set_from_records(&self.types)
    }

    /// Hash of the whole effective configuration.
    pub fn hash(&self) -> String {
        sha256_json(self)
    }

    /// Hash of the parts that determine the equilibrium (types, horizon,
    /// price, sharpness and solver settings).
    pub fn problem_hash(&self) -> String {
        #[derive(Serialize)]
        struct Problem<'a> {
            types: &'a [TeamTypeRecord],
            #[serde(rename = "T")]
            horizon: usize,
            lambda: f64,
            alpha: f64,
            solver: &'a SolverConfig,
        }
        sha256_json(&Problem {
            types: &self.types,
            horizon: self.horizon,
            lambda: self.lambda,
            alpha: self.alpha,
            solver: &self.solver,
        })
    }
}

/// Options shared by all commands.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Overrides `sim.seed`.
    pub seed: Option<u64>,
    pub no_timestamp: bool,
}

impl RunOptions {
    fn apply(&self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = cfg.clone();
        if let Some(seed) = self.seed {
            cfg.sim.seed = seed;
        }
        cfg
    }

    fn path(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir)?;
        Ok(self.out_dir.join(name))
    }
}

/// Runs `f` on a dedicated pool with `threads` workers (all cores if
/// `None`).
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::config("threads", "must be at least 1"));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Numeric(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// CSV text with the metadata header lines.
fn csv_text(
    meta: &[(&str, String)],
    timestamp: bool,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<String> {
    let mut out = format!("#schema={SCHEMA}\n");
    for (k, v) in meta {
        let _ = writeln!(out, "#{k}={v}");
    }
    if timestamp {
        let _ = writeln!(out, "#created={}", chrono::Utc::now().to_rfc3339());
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let body = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    out.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
    Ok(out)
}

fn num(x: f64) -> String {
    format!("{x}")
}

/// Strips metadata lines (`#...`) and returns the CSV body.
pub fn csv_body(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}

/// Reads the `#key=value` metadata lines of a CSV file.
pub fn csv_meta(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.strip_prefix('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[derive(Clone, Debug)]
pub struct SolveSummary {
    pub solution: MFTESolution,
    pub path: PathBuf,
}

impl SolveSummary {
    pub fn line(&self) -> String {
        let s = &self.solution;
        let mut line = format!(
            "residual={:.6e} iterations={} converged={} contraction_certified={} mc_std={:.3e}",
            s.residual,
            s.iterations,
            s.converged,
            s.contraction_certified,
            s.max_mc_std()
        );
        if !s.converged {
            line.push_str(" warning=not_converged");
        }
        line
    }
}

fn solve(cfg: &ExperimentConfig) -> Result<MFTESolution> {
    let types = cfg.type_set()?;
    let mut sol = solve_mfte(&types, cfg.lambda, cfg.alpha, cfg.horizon, &cfg.solver)?;
    sol.config_hash = Some(cfg.problem_hash());
    Ok(sol)
}

/// Solves for the equilibrium and writes `solution.json`.
pub fn cmd_solve_mfte(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<SolveSummary> {
    let cfg = opts.apply(cfg);
    let solution = solve(&cfg)?;
    let path = opts.path("solution.json")?;
    solution.save(&path)?;
    Ok(SolveSummary { solution, path })
}

fn check_solution(cfg: &ExperimentConfig, sol: &MFTESolution) -> Result<()> {
    if sol.horizon() != cfg.horizon {
        return Err(Error::config(
            "T",
            format!("solution horizon {} differs from config T = {}", sol.horizon(), cfg.horizon),
        ));
    }
    if sol.lambda != cfg.lambda {
        return Err(Error::config("lambda", "solution was computed for a different lambda"));
    }
    if sol.alpha != cfg.alpha {
        return Err(Error::config("alpha", "solution was computed for a different alpha"));
    }
    if let Some(h) = &sol.config_hash {
        if *h != cfg.problem_hash() {
            return Err(Error::config("solution", "solution config hash does not match this config"));
        }
    }
    Ok(())
}

/// Cost quantiles over all (run, team) pairs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CostSummary {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub mean_control: f64,
    pub mean_comm: f64,
}

impl CostSummary {
    pub fn of(res: &SimResult) -> Self {
        let costs = res.pooled_costs();
        let count = costs.len() as f64;
        let (control, comm) = res
            .runs
            .iter()
            .flat_map(|r| &r.costs)
            .fold((0.0, 0.0), |(a, b), c| (a + c.control, b + c.comm));
        CostSummary {
            median: median(&costs),
            q25: quantile(&costs, 0.25),
            q75: quantile(&costs, 0.75),
            mean_control: control / count,
            mean_comm: comm / count,
        }
    }

    pub fn line(&self) -> String {
        format!("median={:.6} q25={:.6} q75={:.6}", self.median, self.q25, self.q75)
    }
}

#[derive(Clone, Debug)]
pub struct SimulateSummary {
    pub costs: CostSummary,
    pub cost_path: PathBuf,
    pub utilization_path: PathBuf,
}

fn run_simulation(cfg: &ExperimentConfig, sol: &MFTESolution, types: &TypeSet<f64>) -> Result<SimResult> {
    let pop = sample_population(cfg.sim.n, types, cfg.sim.population, cfg.sim.seed)?;
    let sim_cfg = SimConfig {
        trace_limit: 0,
        ..cfg.sim.clone()
    };
    simulate(&pop, sol, &sim_cfg)
}

/// Simulates the finite game under a stored solution and writes
/// `costs.csv` and `utilization.csv`.
pub fn cmd_simulate(cfg: &ExperimentConfig, solution: &Path, opts: &RunOptions) -> Result<SimulateSummary> {
    let cfg = opts.apply(cfg);
    let sol = MFTESolution::load(solution)?;
    check_solution(&cfg, &sol)?;
    let types = cfg.type_set()?;
    let pop = sample_population(cfg.sim.n, &types, cfg.sim.population, cfg.sim.seed)?;
    let res = run_simulation(&cfg, &sol, &types)?;
    let meta = [
        ("config_hash", cfg.hash()),
        ("solution_hash", sol.config_hash.clone().unwrap_or_default()),
    ];
    let ts = !opts.no_timestamp;
    let cost_rows = res.runs.iter().flat_map(|r| {
        let pop = &pop;
        let types = &types;
        r.costs.iter().enumerate().map(move |(i, c)| {
            vec![
                r.run.to_string(),
                i.to_string(),
                types.get(pop.assignments[i]).map_or("", |t| t.id()).to_string(),
                num(c.total),
                num(c.control),
                num(c.comm),
            ]
        })
    });
    let cost_csv = csv_text(
        &meta,
        ts,
        &["run", "team", "type", "cost_total", "cost_control", "cost_comm"],
        cost_rows,
    )?;
    let util_rows = res.runs.iter().flat_map(|r| {
        r.utilization
            .iter()
            .enumerate()
            .map(move |(k, u)| vec![r.run.to_string(), k.to_string(), num(*u)])
    });
    let util_csv = csv_text(&meta, ts, &["run", "k", "utilization"], util_rows)?;
    let cost_path = opts.path("costs.csv")?;
    let utilization_path = opts.path("utilization.csv")?;
    std::fs::write(&cost_path, cost_csv)?;
    std::fs::write(&utilization_path, util_csv)?;
    Ok(SimulateSummary {
        costs: CostSummary::of(&res),
        cost_path,
        utilization_path,
    })
}

/// One evaluated sweep point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub index: usize,
    pub value: String,
    pub lambda: f64,
    pub alpha: f64,
    pub degree: u8,
    pub n: usize,
    pub seed: u64,
    pub status: String,
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
    pub residual: Option<f64>,
    pub g_mean: Option<f64>,
    pub costs: Option<CostSummary>,
    pub mismatch: Option<Mismatch>,
}

#[derive(Clone, Debug)]
pub struct SweepSummary {
    pub points: Vec<SweepPoint>,
    pub path: PathBuf,
    /// Log-log slope of the mismatch against `N` (N sweeps only).
    pub slope: Option<f64>,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.len() != y.len() || x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn degree_u8(d: Degree) -> u8 {
    match d {
        Degree::Quadratic => 2,
        Degree::Cubic => 3,
        Degree::Quartic => 4,
    }
}

/// Per-point configuration of a sweep.
fn sweep_configs(cfg: &ExperimentConfig) -> Result<Vec<(String, ExperimentConfig)>> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::config("sweep", "sweep list is missing"))?;
    let base = |i: usize| {
        let mut c = cfg.clone();
        c.sweep = None;
        c.sim.seed = derive_seed(cfg.sim.seed, i as u64);
        c
    };
    Ok(match sweep {
        Sweep::LambdaAlpha(v) => v
            .iter()
            .enumerate()
            .map(|(i, &[l, a])| {
                let mut c = base(i);
                c.lambda = l;
                c.alpha = a;
                (format!("{l}:{a}"), c)
            })
            .collect(),
        Sweep::Alpha(v) => v
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let mut c = base(i);
                c.alpha = a;
                (num(a), c)
            })
            .collect(),
        Sweep::N(v) => v
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let mut c = base(i);
                c.sim.n = n;
                (n.to_string(), c)
            })
            .collect(),
        Sweep::Degree(v) => v
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let mut c = base(i);
                c.solver.fit.degree = d;
                (degree_u8(d).to_string(), c)
            })
            .collect(),
    })
}

/// Solves each distinct problem once (in order) and returns the solutions
/// keyed by problem hash.
fn solve_distinct(points: &[(String, ExperimentConfig)]) -> BTreeMap<String, Result<MFTESolution, String>> {
    let mut out = BTreeMap::new();
    for (_, c) in points {
        out.entry(c.problem_hash())
            .or_insert_with(|| c.validate().and_then(|_| solve(c)).map_err(|e| e.to_string()));
    }
    out
}

/// One solve+simulate per sweep entry; writes `sweep.csv` and
/// `sweep_report.json`.
pub fn cmd_sweep(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<SweepSummary> {
    let cfg = opts.apply(cfg);
    let sweep_name = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::config("sweep", "sweep list is missing"))?
        .name();
    let configs = sweep_configs(&cfg)?;
    let solutions = solve_distinct(&configs);
    let types = cfg.type_set()?;
    let points: Vec<SweepPoint> = configs
        .par_iter()
        .enumerate()
        .map(|(index, (value, c))| {
            let mut p = SweepPoint {
                index,
                value: value.clone(),
                lambda: c.lambda,
                alpha: c.alpha,
                degree: degree_u8(c.solver.fit.degree),
                n: c.sim.n,
                seed: c.sim.seed,
                status: "ok".into(),
                converged: None,
                iterations: None,
                residual: None,
                g_mean: None,
                costs: None,
                mismatch: None,
            };
            let sol = match &solutions[&c.problem_hash()] {
                Ok(s) => s,
                Err(e) => {
                    p.status = format!("error: {e}");
                    return p;
                }
            };
            p.converged = Some(sol.converged);
            p.iterations = Some(sol.iterations);
            p.residual = Some(sol.residual);
            p.g_mean = Some(sol.g_star.mean());
            match run_simulation(c, sol, &types) {
                Ok(res) => {
                    p.costs = Some(CostSummary::of(&res));
                    p.mismatch = Some(res.mismatch(&sol.g_star));
                }
                Err(e) => p.status = format!("error: {e}"),
            }
            p
        })
        .collect();

    if points.iter().all(|p| p.status != "ok") {
        let first = points.first().map(|p| p.status.clone()).unwrap_or_default();
        return Err(Error::Numeric(format!("every sweep point failed; first: {first}")));
    }

    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    let rows = points.iter().map(|p| {
        let c = p.costs;
        vec![
            p.index.to_string(),
            sweep_name.to_string(),
            p.value.clone(),
            num(p.lambda),
            num(p.alpha),
            p.degree.to_string(),
            p.n.to_string(),
            p.seed.to_string(),
            p.status.clone(),
            p.converged.map(|b| b.to_string()).unwrap_or_default(),
            p.iterations.map(|i| i.to_string()).unwrap_or_default(),
            opt(p.residual),
            opt(p.g_mean),
            opt(c.map(|c| c.median)),
            opt(c.map(|c| c.q25)),
            opt(c.map(|c| c.q75)),
            opt(c.map(|c| c.mean_control)),
            opt(c.map(|c| c.mean_comm)),
            opt(p.mismatch.map(|m| m.mean)),
            opt(p.mismatch.map(|m| m.std_err)),
        ]
    });
    let text = csv_text(
        &[("config_hash", cfg.hash())],
        !opts.no_timestamp,
        &[
            "point",
            "sweep",
            "value",
            "lambda",
            "alpha",
            "degree",
            "N",
            "seed",
            "status",
            "converged",
            "iterations",
            "residual",
            "g_mean",
            "median_cost",
            "q25_cost",
            "q75_cost",
            "mean_control",
            "mean_comm",
            "mismatch",
            "mismatch_se",
        ],
        rows,
    )?;
    let path = opts.path("sweep.csv")?;
    std::fs::write(&path, text)?;

    let slope = if sweep_name == "N" {
        let ok: Vec<&SweepPoint> = points.iter().filter(|p| p.mismatch.is_some()).collect();
        let x: Vec<f64> = ok.iter().map(|p| p.n as f64).collect();
        let y: Vec<f64> = ok.iter().map(|p| p.mismatch.expect("filtered").mean).collect();
        log_log_slope(&x, &y)
    } else {
        None
    };
    #[derive(Serialize)]
    struct Report<'a> {
        schema: &'a str,
        config_hash: String,
        sweep: &'a str,
        mismatch_slope: Option<f64>,
        points: &'a [SweepPoint],
    }
    let report = Report {
        schema: SCHEMA,
        config_hash: cfg.hash(),
        sweep: sweep_name,
        mismatch_slope: slope,
        points: &points,
    };
    std::fs::write(opts.path("sweep_report.json")?, serde_json::to_string_pretty(&report)?)?;
    Ok(SweepSummary { points, path, slope })
}

#[derive(Clone, Debug)]
pub struct NashGapSummary {
    /// `(N, report)` per team count.
    pub reports: Vec<(usize, GapReport)>,
    pub path: PathBuf,
}

impl NashGapSummary {
    pub fn lines(&self) -> Vec<String> {
        self.reports
            .iter()
            .map(|(n, r)| {
                format!(
                    "N={n} gap={:.6} se={:.6} best_arm={} baseline={:.6} (lower bound over the restricted class)",
                    r.gap, r.gap_se, r.best_arm, r.baseline.mean_cost
                )
            })
            .collect()
    }
}

/// Deviation experiment for one or more team counts (`sweep.N` if present,
/// otherwise `sim.N`). Writes `nash_gap.csv` and `nash_gap_report.json`.
pub fn cmd_nash_gap(cfg: &ExperimentConfig, solution: &Path, opts: &RunOptions) -> Result<NashGapSummary> {
    let cfg = opts.apply(cfg);
    let dev = cfg
        .deviation
        .clone()
        .ok_or_else(|| Error::config("deviation", "a deviation spec is required"))?;
    let sol = MFTESolution::load(solution)?;
    check_solution(&cfg, &sol)?;
    let types = cfg.type_set()?;
    let ns = match &cfg.sweep {
        Some(Sweep::N(v)) => v.clone(),
        _ => vec![cfg.sim.n],
    };
    let mut reports = Vec::new();
    for (i, &n) in ns.iter().enumerate() {
        let sim_cfg = SimConfig {
            n,
            seed: derive_seed(cfg.sim.seed, i as u64),
            trace_limit: 0,
            ..cfg.sim.clone()
        };
        let pop = sample_population(n, &types, sim_cfg.population, sim_cfg.seed)?;
        reports.push((n, nash_gap(&pop, &sol, &dev, &sim_cfg)?));
    }
    let rows = reports.iter().flat_map(|(n, r)| {
        std::iter::once(&r.baseline).chain(&r.arms).map(move |a| {
            vec![
                n.to_string(),
                a.id.clone(),
                num(a.mean_cost),
                num(a.mean_cost - 1.96 * a.std_err),
                num(a.mean_cost + 1.96 * a.std_err),
                num(a.improvement),
                num(a.improvement_se),
            ]
        })
    });
    let text = csv_text(
        &[
            ("config_hash", cfg.hash()),
            ("solution_hash", sol.config_hash.clone().unwrap_or_default()),
        ],
        !opts.no_timestamp,
        &[
            "N",
            "deviation_id",
            "mean_cost",
            "ci_low",
            "ci_high",
            "improvement",
            "improvement_se",
        ],
        rows,
    )?;
    let path = opts.path("nash_gap.csv")?;
    std::fs::write(&path, text)?;
    #[derive(Serialize)]
    struct Entry<'a> {
        #[serde(rename = "N")]
        n: usize,
        report: &'a GapReport,
    }
    let entries: Vec<Entry> = reports.iter().map(|(n, r)| Entry { n: *n, report: r }).collect();
    std::fs::write(opts.path("nash_gap_report.json")?, serde_json::to_string_pretty(&entries)?)?;
    Ok(NashGapSummary { reports, path })
}
