//! The mean-field operator, the damped fixed-point iteration that produces
//! the α-approximate mean-field team equilibrium, and contraction diagnostics.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{sample_initial_error, InitialDistribution};
use crate::lqg::{solve_riccati, RiccatiSchedule, TeamType, TypeSet};
use crate::rng::{mix, stream, Domain};
use crate::sensing::{self, VoiContext};
use crate::value_model::{fit_value_iteration, FitConfig, ValueWeights};

/// Length-`T` channel-utilization trajectory with every entry in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MeanFieldTrajectory(Vec<f64>);

impl MeanFieldTrajectory {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("g", "trajectory is empty"));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid("g", format!("entry {bad} outside [0, 1]")));
        }
        Ok(MeanFieldTrajectory(values))
    }

    pub fn constant(horizon: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; horizon])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    /// `max_k |self_k - other_k|`.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `(1 - beta) self + beta other`.
    pub fn damped_toward(&self, other: &Self, beta: f64) -> Self {
        MeanFieldTrajectory(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| ((1.0 - beta) * a + beta * b).clamp(0.0, 1.0))
                .collect(),
        )
    }
}

impl TryFrom<Vec<f64>> for MeanFieldTrajectory {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<MeanFieldTrajectory> for Vec<f64> {
    fn from(g: MeanFieldTrajectory) -> Self {
        g.0
    }
}

/// `2 alpha lambda T < 1`.
pub fn contraction_check(alpha: f64, lambda: f64, horizon: usize) -> bool {
    2.0 * alpha * lambda * (horizon as f64) < 1.0
}

/// A type together with its Riccati schedule and fitted sensor value model.
#[derive(Clone, Debug)]
pub struct TeamModel {
    pub ty: TeamType<f64>,
    pub sched: RiccatiSchedule<f64>,
    pub weights: ValueWeights,
}

/// Whether `T(g)_k` estimates `E[gamma_k]` or `E[gamma_{k-1}]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    #[default]
    SameInstant,
    /// `T(g)_{k+1} = E[gamma_k]` and `T(g)_0 = 0`.
    Shifted,
}

/// Monte Carlo settings for one application of the operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorConfig {
    pub rollouts: usize,
    pub seed: u64,
    pub alignment: Alignment,
    pub initial: InitialDistribution,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        OperatorConfig {
            rollouts: 20_000,
            seed: 0x6d66,
            alignment: Alignment::SameInstant,
            initial: InitialDistribution::Gaussian,
        }
    }
}

/// Operator output with per-step Monte Carlo standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorOutput {
    pub h: MeanFieldTrajectory,
    pub mc_std: Vec<f64>,
}

impl OperatorOutput {
    pub fn max_std(&self) -> f64 {
        self.mc_std.iter().fold(0.0, |m, &s| m.max(s))
    }
}

const CHUNK: usize = 512;

/// Transmission probabilities along one rollout of the error process under
/// the Boltzmann policy. Each step consumes one uniform and one normal so the
/// stream stays aligned whatever the policy does.
fn rollout_path(
    team: &TeamModel,
    g: &MeanFieldTrajectory,
    lambda: f64,
    alpha: f64,
    cfg: &OperatorConfig,
    type_index: usize,
    j: usize,
) -> Result<Vec<f64>> {
    let horizon = g.len();
    let ctx = VoiContext {
        ty: &team.ty,
        sched: &team.sched,
        g,
        lambda,
    };
    let a = team.ty.a()[(0, 0)];
    let sdw = team.ty.k_w()[(0, 0)].sqrt();
    let mut rng = stream(cfg.seed, Domain::Operator, type_index as u64, j as u64, 0);
    let mut e = sample_initial_error(&team.ty, cfg.initial, &mut rng)[0];
    let mut path = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let v = sensing::voi(&ctx, &team.weights, k, e)?;
        let p = sensing::boltzmann_prob(&v, alpha);
        path.push(p);
        let u: f64 = rng.random();
        let w = sdw * rng.sample::<f64, _>(StandardNormal);
        e = if sensing::action_from_uniform(p, u) {
            w
        } else {
            a * e + w
        };
    }
    Ok(path)
}

fn check_operator_inputs(g: &MeanFieldTrajectory, teams: &[TeamModel], cfg: &OperatorConfig) -> Result<()> {
    if cfg.rollouts < 1 {
        return Err(Error::invalid("rollouts", "need at least one rollout"));
    }
    if teams.is_empty() {
        return Err(Error::invalid("types", "type set is empty"));
    }
    for t in teams {
        t.ty.require_scalar()?;
        if t.sched.horizon() != g.len() || t.weights.all_coeffs().len() != g.len() + 1 {
            return Err(Error::Dimension {
                what: "weights horizon",
                expected: g.len().to_string(),
                got: t.sched.horizon().to_string(),
            });
        }
    }
    Ok(())
}

fn align(per_step: Vec<f64>, alignment: Alignment) -> Vec<f64> {
    match alignment {
        Alignment::SameInstant => per_step,
        Alignment::Shifted => {
            let mut out = vec![0.0; per_step.len()];
            out[1..].copy_from_slice(&per_step[..per_step.len() - 1]);
            out
        }
    }
}

/// Mean-field operator: population-weighted expected Boltzmann transmission
/// probability at each step when every team best-responds to `g`.
///
/// `teams` must carry value models fitted for this `g`.
pub fn apply_mf_operator(
    g: &MeanFieldTrajectory,
    teams: &[TeamModel],
    lambda: f64,
    alpha: f64,
    cfg: &OperatorConfig,
) -> Result<OperatorOutput> {
    check_operator_inputs(g, teams, cfg)?;
    let horizon = g.len();
    let m = cfg.rollouts;
    let mut h = vec![0.0; horizon];
    let mut var = vec![0.0; horizon];
    for (ti, team) in teams.iter().enumerate() {
        let chunks: Vec<(Vec<f64>, Vec<f64>)> = (0..m.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| -> Result<(Vec<f64>, Vec<f64>)> {
                let mut sum = vec![0.0; horizon];
                let mut sumsq = vec![0.0; horizon];
                for j in c * CHUNK..((c + 1) * CHUNK).min(m) {
                    let path = rollout_path(team, g, lambda, alpha, cfg, ti, j)?;
                    for (k, p) in path.into_iter().enumerate() {
                        sum[k] += p;
                        sumsq[k] += p * p;
                    }
                }
                Ok((sum, sumsq))
            })
            .collect::<Result<_>>()?;
        let mut sum = vec![0.0; horizon];
        let mut sumsq = vec![0.0; horizon];
        for (s, sq) in &chunks {
            for k in 0..horizon {
                sum[k] += s[k];
                sumsq[k] += sq[k];
            }
        }
        let w = team.ty.prob();
        for k in 0..horizon {
            let mean = sum[k] / m as f64;
            let v = if m > 1 {
                ((sumsq[k] - m as f64 * mean * mean) / (m - 1) as f64).max(0.0)
            } else {
                0.0
            };
            h[k] += w * mean;
            var[k] += w * w * v / m as f64;
        }
    }
    let h = align(h, cfg.alignment)
        .into_iter()
        .map(|x| x.clamp(0.0, 1.0))
        .collect();
    let mc_std = align(var, cfg.alignment).into_iter().map(f64::sqrt).collect();
    Ok(OperatorOutput {
        h: MeanFieldTrajectory::new(h)?,
        mc_std,
    })
}

/// Settings for [`solve_mfte`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iter: usize,
    pub damping: f64,
    pub tol: f64,
    /// Monte Carlo rollouts per type in each operator evaluation.
    pub rollouts: usize,
    pub seed: u64,
    pub alignment: Alignment,
    pub initial: InitialDistribution,
    pub fit: FitConfig,
    /// Starting trajectory; defaults to 0.5 everywhere.
    pub initial_guess: Option<Vec<f64>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iter: 200,
            damping: 0.5,
            tol: 1e-3,
            rollouts: 20_000,
            seed: 0x6d66,
            alignment: Alignment::SameInstant,
            initial: InitialDistribution::Gaussian,
            fit: FitConfig::default(),
            initial_guess: None,
        }
    }
}

impl SolverConfig {
    pub fn operator(&self) -> OperatorConfig {
        OperatorConfig {
            rollouts: self.rollouts,
            seed: self.seed,
            alignment: self.alignment,
            initial: self.initial,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::invalid("damping", "must lie in (0, 1]"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter", "must be positive"));
        }
        Ok(())
    }
}

/// Fits a value model for every type against `g`. The fit seed depends only
/// on the configured seed and the type index.
pub fn fit_teams(
    types: &TypeSet<f64>,
    scheds: &[RiccatiSchedule<f64>],
    g: &MeanFieldTrajectory,
    lambda: f64,
    alpha: f64,
    fit: &FitConfig,
) -> Result<Vec<TeamModel>> {
    types
        .iter()
        .zip(scheds)
        .enumerate()
        .map(|(i, (ty, sched))| {
            let cfg = FitConfig {
                seed: mix(fit.seed, Domain::FitExplore, [i as u64, 0, 0]),
                ..fit.clone()
            };
            Ok(TeamModel {
                ty: ty.clone(),
                sched: sched.clone(),
                weights: fit_value_iteration(ty, sched, g, lambda, alpha, &cfg)?,
            })
        })
        .collect()
}

/// Result of the fixed-point iteration.
#[derive(Clone, Debug)]
pub struct MFTESolution {
    pub g_star: MeanFieldTrajectory,
    pub teams: Vec<TeamModel>,
    pub lambda: f64,
    pub alpha: f64,
    /// `||T(g*) - g*||_inf`.
    pub residual: f64,
    /// Monte Carlo standard error of `T(g*)`, per step.
    pub mc_std: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub contraction_certified: bool,
    /// Largest observed `||T(g_i) - T(g_{i-1})|| / ||g_i - g_{i-1}||`.
    pub lipschitz_estimate: Option<f64>,
    pub residual_history: Vec<f64>,
    pub config_hash: Option<String>,
}

impl MFTESolution {
    pub fn horizon(&self) -> usize {
        self.g_star.len()
    }

    pub fn max_mc_std(&self) -> f64 {
        self.mc_std.iter().fold(0.0, |m, &s| m.max(s))
    }
}

/// Damped Picard iteration `g <- (1 - beta) g + beta T(g)` from `g = 0.5`,
/// refitting the value models at every iterate.
///
/// Hitting `max_iter` is not an error; the result is flagged instead.
pub fn solve_mfte(
    types: &TypeSet<f64>,
    lambda: f64,
    alpha: f64,
    horizon: usize,
    cfg: &SolverConfig,
) -> Result<MFTESolution> {
    cfg.validate()?;
    let scheds = types
        .iter()
        .map(|ty| solve_riccati(ty, horizon))
        .collect::<Result<Vec<_>>>()?;
    let mut g = match &cfg.initial_guess {
        Some(v) if v.len() != horizon => {
            return Err(Error::Dimension {
                what: "initial guess",
                expected: horizon.to_string(),
                got: v.len().to_string(),
            })
        }
        Some(v) => MeanFieldTrajectory::new(v.clone())?,
        None => MeanFieldTrajectory::constant(horizon, 0.5)?,
    };

    let mut history = Vec::new();
    let mut lipschitz: Option<f64> = None;
    let mut previous: Option<(MeanFieldTrajectory, MeanFieldTrajectory)> = None;
    let mut iteration = 0;
    loop {
        iteration += 1;
        let teams = fit_teams(types, &scheds, &g, lambda, alpha, &cfg.fit)?;
        let out = apply_mf_operator(&g, &teams, lambda, alpha, &cfg.operator())?;
        let residual = out.h.sup_distance(&g);
        history.push(residual);
        if let Some((g_prev, h_prev)) = &previous {
            let dg = g.sup_distance(g_prev);
            if dg > 0.0 {
                let ratio = out.h.sup_distance(h_prev) / dg;
                lipschitz = Some(lipschitz.map_or(ratio, |l: f64| l.max(ratio)));
            }
        }
        log::debug!("mfte iteration {iteration}: residual {residual:.3e}");
        let converged = residual < cfg.tol;
        if converged || iteration >= cfg.max_iter {
            if !converged {
                log::warn!("mean-field iteration stopped at max_iter with residual {residual:.3e}");
            }
            return Ok(MFTESolution {
                g_star: g,
                teams,
                lambda,
                alpha,
                residual,
                mc_std: out.mc_std,
                iterations: iteration,
                converged,
                contraction_certified: contraction_check(alpha, lambda, horizon),
                lipschitz_estimate: lipschitz,
                residual_history: history,
                config_hash: None,
            });
        }
        let next = g.damped_toward(&out.h, cfg.damping);
        previous = Some((g, out.h));
        g = next;
    }
}

/// Outcome of [`lipschitz_probe`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeResult {
    /// `||T(g1) - T(g2)||_inf / ||g1 - g2||_inf`.
    pub ratio: f64,
    /// Monte Carlo standard error of the ratio (paired rollouts).
    pub ratio_std: f64,
    pub distance: f64,
}

/// Empirical Lipschitz ratio of the operator between two trajectories, using
/// common random numbers for both evaluations.
pub fn lipschitz_probe(
    g1: &MeanFieldTrajectory,
    g2: &MeanFieldTrajectory,
    types: &TypeSet<f64>,
    lambda: f64,
    alpha: f64,
    cfg: &SolverConfig,
) -> Result<ProbeResult> {
    if g1.len() != g2.len() {
        return Err(Error::Dimension {
            what: "probe trajectories",
            expected: g1.len().to_string(),
            got: g2.len().to_string(),
        });
    }
    let distance = g1.sup_distance(g2);
    if distance == 0.0 {
        return Err(Error::invalid("g2", "probe trajectories must differ"));
    }
    let horizon = g1.len();
    let scheds = types
        .iter()
        .map(|ty| solve_riccati(ty, horizon))
        .collect::<Result<Vec<_>>>()?;
    let teams1 = fit_teams(types, &scheds, g1, lambda, alpha, &cfg.fit)?;
    let teams2 = fit_teams(types, &scheds, g2, lambda, alpha, &cfg.fit)?;
    let op = &cfg.operator();
    check_operator_inputs(g1, &teams1, op)?;
    let m = op.rollouts;

    let mut diff = vec![0.0; horizon];
    let mut var = vec![0.0; horizon];
    for (ti, (t1, t2)) in teams1.iter().zip(&teams2).enumerate() {
        let paths: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|j| -> Result<Vec<f64>> {
                let p1 = rollout_path(t1, g1, lambda, alpha, op, ti, j)?;
                let p2 = rollout_path(t2, g2, lambda, alpha, op, ti, j)?;
                Ok(p1.iter().zip(&p2).map(|(a, b)| a - b).collect())
            })
            .collect::<Result<_>>()?;
        let w = t1.ty.prob();
        for k in 0..horizon {
            let mean = paths.iter().map(|p| p[k]).sum::<f64>() / m as f64;
            let v = if m > 1 {
                paths.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / (m - 1) as f64
            } else {
                0.0
            };
            diff[k] += w * mean;
            var[k] += w * w * v / m as f64;
        }
    }
    let diff = align(diff, op.alignment);
    let var = align(var, op.alignment);
    let (k_max, sup) = diff
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |(km, s), (k, d)| if d.abs() > s { (k, d.abs()) } else { (km, s) });
    Ok(ProbeResult {
        ratio: sup / distance,
        ratio_std: var[k_max].sqrt() / distance,
        distance,
    })
}
