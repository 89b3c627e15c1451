//! Finite-N simulation of teams sharing the channel: realized costs, the
//! empirical utilization mismatch, and deviation experiments.
//!
//! Teams only interact through the communication charge, which uses the
//! realized fraction of transmitting teams at each step (own action
//! included).

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{sample_initial_error, InitialDistribution};
use crate::lqg::TypeSet;
use crate::meanfield::{MFTESolution, MeanFieldTrajectory, TeamModel};
use crate::rng::{stream, Domain};
use crate::sensing::{self, VoiContext};

/// How team types are assigned.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationMode {
    Iid,
    /// `round(N P(w))` teams per type with largest-remainder rounding.
    #[default]
    Proportional,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    /// Type index of each team.
    pub assignments: Vec<usize>,
    /// Random stream used by each team; the team index unless permuted.
    pub stream_ids: Vec<u64>,
    pub empirical_pmf: Vec<f64>,
    /// `sum_w |P_N(w) - P(w)|`.
    pub eps_pn: f64,
}

impl Population {
    pub fn from_assignments(assignments: Vec<usize>, types: &TypeSet<f64>) -> Result<Self> {
        if assignments.is_empty() {
            return Err(Error::invalid("N", "need at least one team"));
        }
        let mut counts = vec![0usize; types.len()];
        for &a in &assignments {
            if a >= types.len() {
                return Err(Error::OutOfRange {
                    what: "type index",
                    index: a,
                    len: types.len(),
                });
            }
            counts[a] += 1;
        }
        let n = assignments.len() as f64;
        let empirical_pmf: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
        let eps_pn = empirical_pmf
            .iter()
            .zip(types.iter())
            .map(|(p, ty)| (p - ty.prob()).abs())
            .sum();
        Ok(Population {
            stream_ids: (0..assignments.len() as u64).collect(),
            assignments,
            empirical_pmf,
            eps_pn,
        })
    }

    pub fn n(&self) -> usize {
        self.assignments.len()
    }

    /// Team `i` of the result is team `perm[i]` of `self`, random stream
    /// included.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.n()];
        if perm.len() != self.n() {
            return Err(Error::Dimension {
                what: "permutation",
                expected: self.n().to_string(),
                got: perm.len().to_string(),
            });
        }
        for &p in perm {
            if p >= self.n() || seen[p] {
                return Err(Error::invalid("perm", "not a permutation"));
            }
            seen[p] = true;
        }
        Ok(Population {
            assignments: perm.iter().map(|&p| self.assignments[p]).collect(),
            stream_ids: perm.iter().map(|&p| self.stream_ids[p]).collect(),
            empirical_pmf: self.empirical_pmf.clone(),
            eps_pn: self.eps_pn,
        })
    }
}

pub fn sample_population(n: usize, types: &TypeSet<f64>, mode: PopulationMode, seed: u64) -> Result<Population> {
    if n == 0 {
        return Err(Error::invalid("N", "need at least one team"));
    }
    if types.is_empty() {
        return Err(Error::invalid("types", "type set is empty"));
    }
    let assignments = match mode {
        PopulationMode::Iid => {
            let mut rng = stream(seed, Domain::Population, n as u64, 0, 0);
            (0..n)
                .map(|_| {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    for (i, ty) in types.iter().enumerate() {
                        acc += ty.prob();
                        if u < acc {
                            return i;
                        }
                    }
                    types.len() - 1
                })
                .collect()
        }
        PopulationMode::Proportional => {
            let quotas: Vec<f64> = types.iter().map(|ty| n as f64 * ty.prob()).collect();
            let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
            let mut order: Vec<usize> = (0..quotas.len()).collect();
            order.sort_by(|&a, &b| {
                let ra = quotas[a] - quotas[a].floor();
                let rb = quotas[b] - quotas[b].floor();
                rb.total_cmp(&ra).then(a.cmp(&b))
            });
            let short = n.saturating_sub(counts.iter().sum());
            for &i in order.iter().cycle().take(short) {
                counts[i] += 1;
            }
            counts
                .iter()
                .enumerate()
                .flat_map(|(i, &c)| std::iter::repeat_n(i, c))
                .collect()
        }
    };
    Population::from_assignments(assignments, types)
}

/// Sensor policy of a single team in the simulator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Policy {
    /// Boltzmann on VoI with the solution's `alpha`.
    Equilibrium,
    /// Boltzmann on the same VoI with another `alpha`.
    Boltzmann(f64),
    /// Transmit iff `|e| > tau`.
    Threshold(f64),
    AlwaysTransmit,
    NeverTransmit,
}

impl Policy {
    pub fn id(&self) -> String {
        match self {
            Policy::Equilibrium => "equilibrium".into(),
            Policy::Boltzmann(a) => format!("boltzmann:{a}"),
            Policy::Threshold(t) => format!("threshold:{t:.6}"),
            Policy::AlwaysTransmit => "always".into(),
            Policy::NeverTransmit => "never".into(),
        }
    }
}

/// Simulation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub runs: usize,
    pub seed: u64,
    pub population: PopulationMode,
    pub initial: InitialDistribution,
    /// Store full traces only while `N * T * runs` stays below this.
    pub trace_limit: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 50,
            runs: 100,
            seed: 0x51,
            population: PopulationMode::Proportional,
            initial: InitialDistribution::Gaussian,
            trace_limit: 10_000_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TeamCost {
    pub control: f64,
    /// `(1/T) sum_k gamma_k^i gamma_k^{N,av}`.
    pub comm: f64,
    /// `control + lambda comm`.
    pub total: f64,
}

/// Per-team trajectories of one run, team-major (`[team][k]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Traces {
    pub actions: Vec<Vec<bool>>,
    pub state: Vec<Vec<f64>>,
    pub estimate: Vec<Vec<f64>>,
    pub error: Vec<Vec<f64>>,
    pub control: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub run: usize,
    pub costs: Vec<TeamCost>,
    /// `gamma_k^{N,av}`.
    pub utilization: Vec<f64>,
    pub traces: Option<Traces>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimResult {
    pub runs: Vec<RunResult>,
    pub n: usize,
    pub horizon: usize,
    pub lambda: f64,
    pub seed: u64,
    pub config_hash: Option<String>,
}

impl SimResult {
    /// Per-team totals pooled over runs and teams.
    pub fn pooled_costs(&self) -> Vec<f64> {
        self.runs
            .iter()
            .flat_map(|r| r.costs.iter().map(|c| c.total))
            .collect()
    }

    /// Mean over runs of `(1/T) sum_k |gamma^{N,av}_k - g_k|`.
    pub fn mismatch(&self, g: &MeanFieldTrajectory) -> Mismatch {
        let per_run: Vec<f64> = self
            .runs
            .iter()
            .map(|r| {
                r.utilization
                    .iter()
                    .zip(g.values())
                    .map(|(u, g)| (u - g).abs())
                    .sum::<f64>()
                    / self.horizon as f64
            })
            .collect();
        let (mean, std_err) = mean_and_se(&per_run);
        Mismatch { mean, std_err }
    }

    /// Mean utilization per step over runs.
    pub fn mean_utilization(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.horizon];
        for r in &self.runs {
            for (o, u) in out.iter_mut().zip(&r.utilization) {
                *o += u;
            }
        }
        out.iter().map(|s| s / self.runs.len() as f64).collect()
    }
}

/// `q`-quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

struct TeamPath {
    actions: Vec<bool>,
    control_sum: f64,
    traces: Option<[Vec<f64>; 4]>,
}

struct Sim<'a> {
    sol: &'a MFTESolution,
    initial: InitialDistribution,
    seed: u64,
}

impl Sim<'_> {
    fn probability(&self, model: &TeamModel, policy: Policy, k: usize, e: f64) -> Result<f64> {
        let boltzmann = |alpha: f64| -> Result<f64> {
            let ctx = VoiContext {
                ty: &model.ty,
                sched: &model.sched,
                g: &self.sol.g_star,
                lambda: self.sol.lambda,
            };
            Ok(sensing::boltzmann_prob(&sensing::voi(&ctx, &model.weights, k, e)?, alpha))
        };
        match policy {
            Policy::Equilibrium => boltzmann(self.sol.alpha),
            Policy::Boltzmann(a) => boltzmann(a),
            Policy::Threshold(t) => Ok(if e.abs() > t { 1.0 } else { 0.0 }),
            Policy::AlwaysTransmit => Ok(1.0),
            Policy::NeverTransmit => Ok(0.0),
        }
    }

    /// One team over the horizon. Every step consumes one uniform and one
    /// normal so different policies see the same noise.
    fn team(&self, model: &TeamModel, policy: Policy, run: usize, stream_id: u64, record: bool) -> Result<TeamPath> {
        let horizon = self.sol.horizon();
        let ty = &model.ty;
        let (a, b, q, r) = (ty.a()[(0, 0)], ty.b()[(0, 0)], ty.q()[(0, 0)], ty.r()[(0, 0)]);
        let sdw = ty.k_w()[(0, 0)].sqrt();
        let mut rng = stream(self.seed, Domain::Simulation, run as u64, stream_id, 0);
        let nu = ty.nu()[0];
        let mut x = nu + sample_initial_error(ty, self.initial, &mut rng)[0];
        let mut z = nu;
        let mut actions = Vec::with_capacity(horizon);
        let mut rec = record.then(|| std::array::from_fn::<Vec<f64>, 4, _>(|_| Vec::with_capacity(horizon)));
        let mut control_sum = 0.0;
        for k in 0..horizon {
            let e = x - z;
            let p = self.probability(model, policy, k, e)?;
            let draw: f64 = rng.random();
            let w = sdw * rng.sample::<f64, _>(StandardNormal);
            let gamma = sensing::action_from_uniform(p, draw);
            let u = -model.sched.l()[k][(0, 0)] * z;
            control_sum += q * x * x + r * u * u;
            if let Some([xs, zs, es, us]) = rec.as_mut() {
                xs.push(x);
                zs.push(z);
                es.push(e);
                us.push(u);
            }
            actions.push(gamma);
            z = a * if gamma { x } else { z } + b * u;
            x = a * x + b * u + w;
        }
        if !control_sum.is_finite() {
            return Err(Error::Numeric("non-finite control cost".into()));
        }
        Ok(TeamPath {
            actions,
            control_sum,
            traces: rec,
        })
    }
}

fn check_inputs(pop: &Population, sol: &MFTESolution, runs: usize) -> Result<()> {
    if pop.n() == 0 {
        return Err(Error::invalid("N", "need at least one team"));
    }
    if runs == 0 {
        return Err(Error::invalid("runs", "need at least one run"));
    }
    for &a in &pop.assignments {
        let model = sol.teams.get(a).ok_or(Error::OutOfRange {
            what: "type index",
            index: a,
            len: sol.teams.len(),
        })?;
        if model.sched.horizon() != sol.horizon() {
            return Err(Error::Dimension {
                what: "solution horizon",
                expected: sol.horizon().to_string(),
                got: model.sched.horizon().to_string(),
            });
        }
        model.ty.require_scalar()?;
    }
    Ok(())
}

fn counts(paths: &[TeamPath], horizon: usize) -> Vec<usize> {
    let mut c = vec![0usize; horizon];
    for p in paths {
        for (ck, &g) in c.iter_mut().zip(&p.actions) {
            *ck += g as usize;
        }
    }
    c
}

fn team_cost(path: &TeamPath, counts: &[usize], n: usize, lambda: f64) -> TeamCost {
    let horizon = counts.len() as f64;
    let comm = path
        .actions
        .iter()
        .zip(counts)
        .map(|(&g, &c)| if g { c as f64 / n as f64 } else { 0.0 })
        .sum::<f64>()
        / horizon;
    let control = path.control_sum / horizon;
    TeamCost {
        control,
        comm,
        total: control + lambda * comm,
    }
}

/// Simulates `runs` independent runs with team `i` playing `policies[i]`.
pub fn simulate_with(
    pop: &Population,
    sol: &MFTESolution,
    policies: &[Policy],
    cfg: &SimConfig,
) -> Result<SimResult> {
    check_inputs(pop, sol, cfg.runs)?;
    if policies.len() != pop.n() {
        return Err(Error::Dimension {
            what: "policies",
            expected: pop.n().to_string(),
            got: policies.len().to_string(),
        });
    }
    let horizon = sol.horizon();
    let n = pop.n();
    let record = n.saturating_mul(horizon).saturating_mul(cfg.runs) <= cfg.trace_limit;
    let sim = Sim {
        sol,
        initial: cfg.initial,
        seed: cfg.seed,
    };
    let runs = (0..cfg.runs)
        .into_par_iter()
        .map(|run| -> Result<RunResult> {
            let paths = (0..n)
                .map(|i| {
                    let model = &sol.teams[pop.assignments[i]];
                    sim.team(model, policies[i], run, pop.stream_ids[i], record)
                })
                .collect::<Result<Vec<_>>>()?;
            let c = counts(&paths, horizon);
            let costs = paths.iter().map(|p| team_cost(p, &c, n, sol.lambda)).collect();
            let utilization = c.iter().map(|&x| x as f64 / n as f64).collect();
            let traces = record.then(|| {
                let mut t = Traces {
                    actions: Vec::with_capacity(n),
                    state: Vec::with_capacity(n),
                    estimate: Vec::with_capacity(n),
                    error: Vec::with_capacity(n),
                    control: Vec::with_capacity(n),
                };
                for p in paths {
                    let [xs, zs, es, us] = p.traces.expect("recorded");
                    t.actions.push(p.actions);
                    t.state.push(xs);
                    t.estimate.push(zs);
                    t.error.push(es);
                    t.control.push(us);
                }
                t
            });
            Ok(RunResult {
                run,
                costs,
                utilization,
                traces,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimResult {
        runs,
        n,
        horizon,
        lambda: sol.lambda,
        seed: cfg.seed,
        config_hash: sol.config_hash.clone(),
    })
}

/// Every team plays the equilibrium policy.
pub fn simulate(pop: &Population, sol: &MFTESolution, cfg: &SimConfig) -> Result<SimResult> {
    simulate_with(pop, sol, &vec![Policy::Equilibrium; pop.n()], cfg)
}

/// Mean over runs of `(1/T) sum_k |gamma_k^{N,av} - g*_k|`, with its
/// standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Mismatch {
    pub mean: f64,
    pub std_err: f64,
}

pub fn deviation_mismatch(pop: &Population, sol: &MFTESolution, cfg: &SimConfig) -> Result<Mismatch> {
    let cfg = SimConfig {
        trace_limit: 0,
        ..cfg.clone()
    };
    Ok(simulate(pop, sol, &cfg)?.mismatch(&sol.g_star))
}

pub(crate) fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Restricted class of unilateral deviations searched by [`nash_gap`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviationSpec {
    /// Index of the deviating team.
    pub team: usize,
    /// Number of log-spaced thresholds on `|e|`.
    pub threshold_count: usize,
    /// Threshold range; defaults to `[0.1, 10] * sqrt(K_W)`.
    pub threshold_range: Option<[f64; 2]>,
    /// Alternate Boltzmann sharpness values.
    pub alphas: Vec<f64>,
    pub always_transmit: bool,
    pub never_transmit: bool,
    pub include_equilibrium: bool,
}

impl Default for DeviationSpec {
    fn default() -> Self {
        DeviationSpec {
            team: 0,
            threshold_count: 20,
            threshold_range: None,
            alphas: Vec::new(),
            always_transmit: true,
            never_transmit: true,
            include_equilibrium: false,
        }
    }
}

impl DeviationSpec {
    /// Only the listed fixed arms, no thresholds.
    pub fn only(team: usize, arms: &[Policy]) -> Self {
        DeviationSpec {
            team,
            threshold_count: 0,
            threshold_range: None,
            alphas: arms
                .iter()
                .filter_map(|p| if let Policy::Boltzmann(a) = p { Some(*a) } else { None })
                .collect(),
            always_transmit: arms.contains(&Policy::AlwaysTransmit),
            never_transmit: arms.contains(&Policy::NeverTransmit),
            include_equilibrium: arms.contains(&Policy::Equilibrium),
        }
    }

    pub fn arms(&self, k_w: f64) -> Result<Vec<Policy>> {
        let mut arms = Vec::new();
        if self.include_equilibrium {
            arms.push(Policy::Equilibrium);
        }
        if self.threshold_count > 0 {
            let [lo, hi] = self.threshold_range.unwrap_or([0.1 * k_w.sqrt(), 10.0 * k_w.sqrt()]);
            if !(lo > 0.0 && hi >= lo) {
                return Err(Error::invalid("threshold_range", "need 0 < min <= max"));
            }
            let c = self.threshold_count;
            for i in 0..c {
                let t = if c == 1 {
                    0.0
                } else {
                    i as f64 / (c - 1) as f64
                };
                arms.push(Policy::Threshold(lo * (hi / lo).powf(t)));
            }
        }
        for &a in &self.alphas {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::invalid("alphas", "must be finite and positive"));
            }
            arms.push(Policy::Boltzmann(a));
        }
        if self.always_transmit {
            arms.push(Policy::AlwaysTransmit);
        }
        if self.never_transmit {
            arms.push(Policy::NeverTransmit);
        }
        if arms.is_empty() {
            return Err(Error::invalid("deviation", "deviation class is empty"));
        }
        Ok(arms)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArmStats {
    pub id: String,
    /// Mean cost of the deviating team over runs.
    pub mean_cost: f64,
    pub std_err: f64,
    /// Mean of `baseline - arm` per run (positive: deviation helps).
    pub improvement: f64,
    pub improvement_se: f64,
}

/// Outcome of a restricted-class deviation search. `gap` is a lower bound
/// on the true best-response gap.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapReport {
    pub team: usize,
    pub runs: usize,
    pub baseline: ArmStats,
    pub arms: Vec<ArmStats>,
    pub best_arm: String,
    /// `baseline - best`; positive means a profitable deviation was found.
    pub gap: f64,
    pub gap_se: f64,
    pub lower_bound: bool,
}

/// Cost of team `i` under each deviation arm with common random numbers:
/// the other teams are simulated once per run and the deviating team reuses
/// its own stream in every arm.
pub fn nash_gap(pop: &Population, sol: &MFTESolution, dev: &DeviationSpec, cfg: &SimConfig) -> Result<GapReport> {
    check_inputs(pop, sol, cfg.runs)?;
    let i = dev.team;
    if i >= pop.n() {
        return Err(Error::OutOfRange {
            what: "deviating team",
            index: i,
            len: pop.n(),
        });
    }
    let model = &sol.teams[pop.assignments[i]];
    let arms = dev.arms(model.ty.k_w()[(0, 0)])?;
    let horizon = sol.horizon();
    let n = pop.n();
    let sim = Sim {
        sol,
        initial: cfg.initial,
        seed: cfg.seed,
    };
    // per run: [baseline, arm_0, arm_1, ...]
    let per_run: Vec<Vec<f64>> = (0..cfg.runs)
        .into_par_iter()
        .map(|run| -> Result<Vec<f64>> {
            let paths = (0..n)
                .map(|j| {
                    let m = &sol.teams[pop.assignments[j]];
                    sim.team(m, Policy::Equilibrium, run, pop.stream_ids[j], false)
                })
                .collect::<Result<Vec<_>>>()?;
            let all = counts(&paths, horizon);
            let others: Vec<usize> = all
                .iter()
                .zip(&paths[i].actions)
                .map(|(&c, &g)| c - g as usize)
                .collect();
            let mut out = vec![team_cost(&paths[i], &all, n, sol.lambda).total];
            for &arm in &arms {
                let path = sim.team(model, arm, run, pop.stream_ids[i], false)?;
                let c: Vec<usize> = others
                    .iter()
                    .zip(&path.actions)
                    .map(|(&o, &g)| o + g as usize)
                    .collect();
                out.push(team_cost(&path, &c, n, sol.lambda).total);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let column = |a: usize| -> Vec<f64> { per_run.iter().map(|r| r[a]).collect() };
    let base = column(0);
    let stats = |id: String, a: usize| -> ArmStats {
        let c = column(a);
        let (mean_cost, std_err) = mean_and_se(&c);
        let d: Vec<f64> = base.iter().zip(&c).map(|(b, x)| b - x).collect();
        let (improvement, improvement_se) = mean_and_se(&d);
        ArmStats {
            id,
            mean_cost,
            std_err,
            improvement,
            improvement_se,
        }
    };
    let baseline = stats("baseline".into(), 0);
    let arm_stats: Vec<ArmStats> = arms
        .iter()
        .enumerate()
        .map(|(a, p)| stats(p.id(), a + 1))
        .collect();
    let best = arm_stats
        .iter()
        .min_by(|a, b| a.mean_cost.total_cmp(&b.mean_cost))
        .expect("non-empty class");
    Ok(GapReport {
        team: i,
        runs: cfg.runs,
        best_arm: best.id.clone(),
        gap: best.improvement,
        gap_se: best.improvement_se,
        baseline,
        arms: arm_stats.clone(),
        lower_bound: true,
    })
}

/// Uniformly random permutation of `0..n` from a seeded stream.
pub fn random_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut stream(seed, Domain::Population, u64::MAX, n as u64, 0));
    p
}
