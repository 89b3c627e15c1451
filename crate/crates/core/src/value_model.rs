//! The sensor's cost-to-go over the scalar estimation error.
//!
//! Two representations are provided:
//!
//! * [`ValueWeights`]: a polynomial `w0 + w1 e + w2 e^2 + w3 g_k^2 (+ w4 e^3 + w5 e^4)`
//!   per time step, fitted by backward value iteration with ridge-regularized
//!   least squares ([`fit_value_iteration`]).
//! * [`GridValue`]: an exact backward dynamic program on a grid of errors with
//!   Gauss–Hermite expectations ([`grid_dp`]). It serves as the reference the
//!   fitted model is validated against.
//!
//! Both use the same stage indexing: the cost at step `k` is `Gamma_k e_k^2`
//! plus `lambda g_k` if the sensor transmits, and the action at `k` only
//! affects `e_{k+1}` onward. The terminal cost-to-go is zero.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lqg::{RiccatiSchedule, TeamType};
use crate::meanfield::MeanFieldTrajectory;
use crate::quadrature::GaussHermite;
use crate::rng::{stream, Domain};
use crate::sensing::{self, VoiContext};

/// Polynomial degree of the fitted value model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Degree {
    #[default]
    Quadratic,
    Cubic,
    Quartic,
}

impl Degree {
    pub fn as_u8(self) -> u8 {
        match self {
            Degree::Quadratic => 2,
            Degree::Cubic => 3,
            Degree::Quartic => 4,
        }
    }

    /// Number of basis functions: `(1, e, e^2, g^2)` plus `e^3` and `e^4`.
    pub fn feature_count(self) -> usize {
        match self {
            Degree::Quadratic => 4,
            Degree::Cubic => 5,
            Degree::Quartic => 6,
        }
    }

    /// Power of `e` in each basis slot; `None` marks the `g^2` slot.
    fn powers(self) -> &'static [Option<i32>] {
        const ALL: [Option<i32>; 6] = [Some(0), Some(1), Some(2), None, Some(3), Some(4)];
        &ALL[..self.feature_count()]
    }
}

impl TryFrom<u8> for Degree {
    type Error = Error;

    fn try_from(d: u8) -> Result<Self> {
        match d {
            2 => Ok(Degree::Quadratic),
            3 => Ok(Degree::Cubic),
            4 => Ok(Degree::Quartic),
            other => Err(Error::invalid(
                "degree",
                format!("unsupported polynomial degree {other} (expected 2, 3 or 4)"),
            )),
        }
    }
}

impl From<Degree> for u8 {
    fn from(d: Degree) -> u8 {
        d.as_u8()
    }
}

/// Basis vector `(1, e, e^2, g^2[, e^3[, e^4]])`.
pub fn features<T: nalgebra::RealField + Copy>(e: T, g: T, degree: Degree) -> Vec<T> {
    let e2 = e * e;
    let mut f = vec![T::one(), e, e2, g * g];
    if degree != Degree::Quadratic {
        f.push(e2 * e);
    }
    if degree == Degree::Quartic {
        f.push(e2 * e2);
    }
    f
}

/// `E[(m + W)^p]` for `W ~ N(0, s)` and `p <= 4`.
fn gaussian_moment(m: f64, s: f64, p: i32) -> f64 {
    match p {
        0 => 1.0,
        1 => m,
        2 => m * m + s,
        3 => m * m * m + 3.0 * m * s,
        4 => {
            let m2 = m * m;
            m2 * m2 + 6.0 * m2 * s + 3.0 * s * s
        }
        _ => unreachable!("moments above 4 are not used"),
    }
}

/// Anything that can report `E_W V_k(mean + W)` for `W ~ N(0, noise_var)`.
pub trait CostToGo: Sync {
    fn horizon(&self) -> usize;

    fn expected_value(&self, k: usize, mean: f64, noise_var: f64, g: &MeanFieldTrajectory) -> f64;
}

/// Which backup combines the two continuation values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backup {
    /// `min_a Q(e, a)`.
    #[default]
    HardMin,
    /// Expectation of `Q(e, a)` under the Boltzmann action probabilities.
    Soft { alpha: f64 },
}

impl Backup {
    /// Combines the transmit and no-transmit continuation costs.
    pub fn combine(self, transmit: f64, idle: f64) -> f64 {
        match self {
            Backup::HardMin => transmit.min(idle),
            Backup::Soft { alpha } => {
                let p = sensing::sigmoid(alpha * (idle - transmit));
                p * transmit + (1.0 - p) * idle
            }
        }
    }
}

/// Per-step polynomial coefficients of the fitted cost-to-go.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightsDoc", into = "WeightsDoc")]
pub struct ValueWeights {
    degree: Degree,
    /// `coeffs[k]` for `k = 0..=T`; `coeffs[T]` is all zeros.
    coeffs: Vec<Vec<f64>>,
}

impl ValueWeights {
    pub fn zeros(horizon: usize, degree: Degree) -> Self {
        ValueWeights {
            degree,
            coeffs: vec![vec![0.0; degree.feature_count()]; horizon + 1],
        }
    }

    pub fn from_coeffs(degree: Degree, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        if coeffs.len() < 2 {
            return Err(Error::invalid("weights", "need at least one stage"));
        }
        if coeffs.iter().any(|c| c.len() != degree.feature_count()) {
            return Err(Error::invalid("weights", "coefficient count does not match degree"));
        }
        if coeffs.last().unwrap().iter().any(|&w| w != 0.0) {
            return Err(Error::invalid("weights", "terminal weights must be zero"));
        }
        Ok(ValueWeights { degree, coeffs })
    }

    pub fn degree(&self) -> Degree {
        self.degree
    }

    pub fn coeffs(&self, k: usize) -> &[f64] {
        &self.coeffs[k]
    }

    pub fn all_coeffs(&self) -> &[Vec<f64>] {
        &self.coeffs
    }

    /// `V_k(e)` with `g_k` taken from `g` (zero at the terminal step).
    pub fn value(&self, k: usize, e: f64, g: &MeanFieldTrajectory) -> f64 {
        let gk = g.values().get(k).copied().unwrap_or(0.0);
        features(e, gk, self.degree)
            .iter()
            .zip(&self.coeffs[k])
            .map(|(f, w)| f * w)
            .sum()
    }

    /// Steps whose fitted curvature `w2` came out negative.
    pub fn negative_curvature_steps(&self) -> Vec<usize> {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| c[2] < 0.0)
            .map(|(k, _)| k)
            .collect()
    }
}

impl CostToGo for ValueWeights {
    fn horizon(&self) -> usize {
        self.coeffs.len() - 1
    }

    fn expected_value(&self, k: usize, mean: f64, noise_var: f64, g: &MeanFieldTrajectory) -> f64 {
        let gk = g.values().get(k).copied().unwrap_or(0.0);
        self.coeffs[k]
            .iter()
            .zip(self.degree.powers())
            .map(|(w, p)| match p {
                Some(p) => w * gaussian_moment(mean, noise_var, *p),
                None => w * gk * gk,
            })
            .sum()
    }
}

#[derive(Serialize, Deserialize)]
struct StepDoc {
    k: usize,
    w0: f64,
    w1: f64,
    w2: f64,
    w3: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w4: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w5: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct WeightsDoc {
    degree: Degree,
    steps: Vec<StepDoc>,
}

impl From<ValueWeights> for WeightsDoc {
    fn from(w: ValueWeights) -> Self {
        let steps = w
            .coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| StepDoc {
                k,
                w0: c[0],
                w1: c[1],
                w2: c[2],
                w3: c[3],
                w4: c.get(4).copied(),
                w5: c.get(5).copied(),
            })
            .collect();
        WeightsDoc {
            degree: w.degree,
            steps,
        }
    }
}

impl TryFrom<WeightsDoc> for ValueWeights {
    type Error = Error;

    fn try_from(doc: WeightsDoc) -> Result<Self> {
        let mut coeffs = Vec::with_capacity(doc.steps.len());
        for (i, s) in doc.steps.into_iter().enumerate() {
            if s.k != i {
                return Err(Error::invalid("weights", "steps must be listed in order of k"));
            }
            let mut c = vec![s.w0, s.w1, s.w2, s.w3];
            c.extend(s.w4);
            c.extend(s.w5);
            coeffs.push(c);
        }
        ValueWeights::from_coeffs(doc.degree, coeffs)
    }
}

/// Settings for [`fit_value_iteration`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Regression samples per time step.
    pub samples: usize,
    pub ridge: f64,
    pub degree: Degree,
    /// Share of samples drawn from the policy-induced error distribution in
    /// the refinement passes; the rest come from the exploration law.
    pub policy_fraction: f64,
    /// Exploration law is `N(0, explore_scale * K_W * (1 + A^2))`.
    pub explore_scale: f64,
    /// Backward passes; the first uses exploration samples only.
    pub passes: usize,
    pub backup: Backup,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            samples: 2000,
            ridge: 1e-6,
            degree: Degree::Quadratic,
            policy_fraction: 0.5,
            explore_scale: 4.0,
            passes: 2,
            backup: Backup::HardMin,
            seed: 0x5eed,
        }
    }
}

fn scalar_of(m: &DMatrix<f64>) -> f64 {
    m[(0, 0)]
}

/// Ridge regression on standardized error powers. Returns coefficients in the
/// original (unscaled) basis.
fn ridge_fit(errors: &[f64], targets: &[f64], gk: f64, degree: Degree, ridge: f64) -> Result<Vec<f64>> {
    let n = errors.len();
    let p = degree.feature_count();
    let scale = (errors.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt().max(1e-12);
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for (&e, &y) in errors.iter().zip(targets) {
        let f = features(e / scale, gk, degree);
        for i in 0..p {
            rhs[i] += f[i] * y;
            for j in 0..p {
                gram[(i, j)] += f[i] * f[j];
            }
        }
    }
    gram /= n as f64;
    rhs /= n as f64;
    for i in 0..p {
        gram[(i, i)] += ridge;
    }
    let sol = gram
        .cholesky()
        .ok_or_else(|| Error::Numeric("singular regression system".into()))?
        .solve(&rhs);
    Ok(degree
        .powers()
        .iter()
        .zip(sol.iter())
        .map(|(pow, c)| match pow {
            Some(pw) => c / scale.powi(*pw),
            None => *c,
        })
        .collect())
}

struct FitProblem<'a> {
    ctx: VoiContext<'a>,
    a: f64,
    kw: f64,
    alpha: f64,
    cfg: &'a FitConfig,
}

impl FitProblem<'_> {
    fn horizon(&self) -> usize {
        self.ctx.sched.horizon()
    }

    /// One backward pass of fitted value iteration over the given samples.
    fn backward(&self, samples: &[Vec<f64>]) -> Result<ValueWeights> {
        let horizon = self.horizon();
        let degree = self.cfg.degree;
        let mut weights = ValueWeights::zeros(horizon, degree);
        let g = self.ctx.g;
        for k in (0..horizon).rev() {
            let gk = g.values()[k];
            let gamma_k = self.ctx.sched.gamma_scalar(k);
            let transmit = self.ctx.lambda * gk + weights.expected_value(k + 1, 0.0, self.kw, g);
            let errs = &samples[k];
            let targets: Vec<f64> = errs
                .par_iter()
                .map(|&e| {
                    let idle = weights.expected_value(k + 1, self.a * e, self.kw, g);
                    gamma_k * e * e + self.cfg.backup.combine(transmit, idle)
                })
                .collect();
            if targets.iter().any(|y| !y.is_finite()) {
                return Err(Error::Numeric(format!("non-finite regression target at k = {k}")));
            }
            weights.coeffs[k] = ridge_fit(errs, &targets, gk, degree, self.cfg.ridge)?;
        }
        Ok(weights)
    }

    fn exploration(&self, count: usize) -> Vec<Vec<f64>> {
        let std = (self.cfg.explore_scale * self.kw * (1.0 + self.a * self.a)).sqrt();
        (0..self.horizon())
            .map(|k| {
                let mut rng = stream(self.cfg.seed, Domain::FitExplore, k as u64, 0, 0);
                (0..count)
                    .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }

    /// Errors visited by `count` rollouts of the Boltzmann policy built on
    /// `weights`, grouped by time step.
    fn policy_samples(&self, weights: &ValueWeights, count: usize, pass: usize) -> Result<Vec<Vec<f64>>> {
        let horizon = self.horizon();
        let sd0 = scalar_of(self.ctx.ty.sigma0()).sqrt();
        let sdw = self.kw.sqrt();
        let paths: Vec<Vec<f64>> = (0..count)
            .into_par_iter()
            .map(|j| -> Result<Vec<f64>> {
                let mut rng = stream(self.cfg.seed, Domain::FitRollout, j as u64, pass as u64, 0);
                let mut e = sd0 * rng.sample::<f64, _>(StandardNormal);
                let mut path = Vec::with_capacity(horizon);
                for k in 0..horizon {
                    path.push(e);
                    let v = sensing::voi(&self.ctx, weights, k, e)?;
                    let p = sensing::boltzmann_prob(&v, self.alpha);
                    let u: f64 = rng.random();
                    let w: f64 = sdw * rng.sample::<f64, _>(StandardNormal);
                    e = if u < p { w } else { self.a * e + w };
                }
                Ok(path)
            })
            .collect::<Result<_>>()?;
        Ok((0..horizon)
            .map(|k| paths.iter().map(|p| p[k]).collect())
            .collect())
    }
}

/// Backward fitted value iteration for the sensor's cost-to-go under a fixed
/// mean-field trajectory `g`.
///
/// The first pass regresses on exploration samples only. Each later pass
/// mixes in errors visited by the Boltzmann policy (sharpness `alpha`) derived
/// from the previous pass.
pub fn fit_value_iteration(
    ty: &TeamType<f64>,
    sched: &RiccatiSchedule<f64>,
    g: &MeanFieldTrajectory,
    lambda: f64,
    alpha: f64,
    cfg: &FitConfig,
) -> Result<ValueWeights> {
    ty.require_scalar()?;
    let horizon = sched.horizon();
    if g.len() != horizon {
        return Err(Error::Dimension {
            what: "mean-field trajectory",
            expected: horizon.to_string(),
            got: g.len().to_string(),
        });
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::invalid("lambda", "must be finite and non-negative"));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid("alpha", "must be finite and positive"));
    }
    let min_samples = 10 * cfg.degree.feature_count();
    if cfg.samples < min_samples {
        return Err(Error::invalid(
            "samples",
            format!("need at least {min_samples} samples per step"),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.policy_fraction) {
        return Err(Error::invalid("policy_fraction", "must lie in [0, 1]"));
    }
    if !(cfg.ridge > 0.0) {
        return Err(Error::invalid("ridge", "must be positive"));
    }
    if cfg.passes == 0 {
        return Err(Error::invalid("passes", "need at least one pass"));
    }

    let problem = FitProblem {
        ctx: VoiContext {
            ty,
            sched,
            g,
            lambda,
        },
        a: scalar_of(ty.a()),
        kw: scalar_of(ty.k_w()),
        alpha,
        cfg,
    };

    let explore = problem.exploration(cfg.samples);
    let mut weights = problem.backward(&explore)?;

    let n_policy = ((cfg.samples as f64) * cfg.policy_fraction).round() as usize;
    let n_explore = cfg.samples - n_policy;
    for pass in 1..cfg.passes {
        if n_policy == 0 {
            break;
        }
        let visited = problem.policy_samples(&weights, n_policy, pass)?;
        let mixed: Vec<Vec<f64>> = explore
            .iter()
            .zip(visited)
            .map(|(ex, mut pol)| {
                pol.extend_from_slice(&ex[..n_explore]);
                pol
            })
            .collect();
        weights = problem.backward(&mixed)?;
    }
    let negative = weights.negative_curvature_steps();
    if !negative.is_empty() {
        log::warn!("fitted value model has negative curvature at steps {negative:?}");
    }
    Ok(weights)
}

/// Settings for [`grid_dp`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub points: usize,
    /// Half-width as a multiple of the largest never-transmit error standard
    /// deviation over the horizon. Must be at least 4.
    pub width_sigmas: f64,
    /// Spacing is finest near zero: `e = s sinh(u)` for uniform `u`, with `s`
    /// defaulting to `sqrt(K_W)`.
    pub core_scale: Option<f64>,
    pub quadrature_nodes: usize,
    /// Queries up to `margin * half_width` beyond the grid are extrapolated.
    pub extrapolation_margin: f64,
    /// Largest tolerated share of queries beyond the margin in any step.
    pub max_outside_fraction: f64,
    pub backup: Backup,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            points: 2001,
            width_sigmas: 6.0,
            core_scale: None,
            quadrature_nodes: 32,
            extrapolation_margin: 1.0,
            max_outside_fraction: 0.01,
            backup: Backup::HardMin,
        }
    }
}

/// Exact cost-to-go on an error grid for a fixed trajectory `g`.
#[derive(Clone, Debug)]
pub struct GridValue {
    grid: Vec<f64>,
    /// `values[k][i] = V_k(grid[i])`, `k = 0..=T`.
    values: Vec<Vec<f64>>,
    g: MeanFieldTrajectory,
    lambda: f64,
    a: f64,
    kw: f64,
    gamma: Vec<f64>,
    rule: GaussHermite,
    backup: Backup,
}

impl GridValue {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    pub fn trajectory(&self) -> &MeanFieldTrajectory {
        &self.g
    }

    /// `V_k(e)` by linear interpolation, quadratic extrapolation outside.
    pub fn value(&self, k: usize, e: f64) -> f64 {
        interpolate(&self.grid, &self.values[k], e)
    }

    /// `E_W V_k(mean + W)` with the configured Gauss–Hermite rule.
    fn expect(&self, k: usize, mean: f64) -> f64 {
        if k >= self.values.len() - 1 {
            return 0.0;
        }
        let sd = self.kw.sqrt();
        self.rule.expect(mean, sd, |x| self.value(k, x))
    }

    /// `(Q_k(e, 0), Q_k(e, 1))`.
    pub fn q_values(&self, k: usize, e: f64) -> (f64, f64) {
        let stage = self.gamma[k] * e * e;
        let idle = stage + self.expect(k + 1, self.a * e);
        let transmit = stage + self.lambda * self.g.values()[k] + self.expect(k + 1, 0.0);
        (idle, transmit)
    }
}

impl CostToGo for GridValue {
    fn horizon(&self) -> usize {
        self.values.len() - 1
    }

    fn expected_value(&self, k: usize, mean: f64, _noise_var: f64, _g: &MeanFieldTrajectory) -> f64 {
        self.expect(k, mean)
    }
}

fn lagrange3(x: [f64; 3], y: [f64; 3], t: f64) -> f64 {
    let l0 = (t - x[1]) * (t - x[2]) / ((x[0] - x[1]) * (x[0] - x[2]));
    let l1 = (t - x[0]) * (t - x[2]) / ((x[1] - x[0]) * (x[1] - x[2]));
    let l2 = (t - x[0]) * (t - x[1]) / ((x[2] - x[0]) * (x[2] - x[1]));
    l0 * y[0] + l1 * y[1] + l2 * y[2]
}

fn interpolate(grid: &[f64], values: &[f64], e: f64) -> f64 {
    let n = grid.len();
    if e < grid[0] {
        return lagrange3(
            [grid[0], grid[1], grid[2]],
            [values[0], values[1], values[2]],
            e,
        );
    }
    if e > grid[n - 1] {
        return lagrange3(
            [grid[n - 3], grid[n - 2], grid[n - 1]],
            [values[n - 3], values[n - 2], values[n - 1]],
            e,
        );
    }
    let hi = grid.partition_point(|&x| x < e).clamp(1, n - 1);
    let lo = hi - 1;
    let t = (e - grid[lo]) / (grid[hi] - grid[lo]);
    values[lo] + t * (values[hi] - values[lo])
}

/// Largest never-transmit error standard deviation over `e_0..e_{T-1}`.
pub fn open_loop_error_std(ty: &TeamType<f64>, horizon: usize) -> f64 {
    let a2 = scalar_of(ty.a()).powi(2);
    let kw = scalar_of(ty.k_w());
    let mut var = scalar_of(ty.sigma0());
    let mut max = var;
    for _ in 1..horizon {
        var = a2 * var + kw;
        max = max.max(var);
    }
    max.sqrt()
}

/// Backward dynamic program on an error grid:
/// `V_k(e) = Gamma_k e^2 + min(lambda g_k + E V_{k+1}(W), E V_{k+1}(A e + W))`.
pub fn grid_dp(
    ty: &TeamType<f64>,
    sched: &RiccatiSchedule<f64>,
    g: &MeanFieldTrajectory,
    lambda: f64,
    cfg: &GridConfig,
) -> Result<GridValue> {
    ty.require_scalar()?;
    let horizon = sched.horizon();
    if g.len() != horizon {
        return Err(Error::Dimension {
            what: "mean-field trajectory",
            expected: horizon.to_string(),
            got: g.len().to_string(),
        });
    }
    if cfg.points < 3 {
        return Err(Error::invalid("points", "grid needs at least 3 points"));
    }
    if !(cfg.width_sigmas > 0.0) {
        return Err(Error::invalid("width_sigmas", "must be positive"));
    }
    let a = scalar_of(ty.a());
    let kw = scalar_of(ty.k_w());
    let half = cfg.width_sigmas * open_loop_error_std(ty, horizon);
    let core = cfg.core_scale.unwrap_or(kw.sqrt()).max(f64::MIN_POSITIVE);
    let umax = (half / core).asinh();
    let n = cfg.points;
    let mut grid: Vec<f64> = (0..n)
        .map(|i| core * (umax * (2.0 * i as f64 / (n - 1) as f64 - 1.0)).sinh())
        .collect();
    if n % 2 == 1 {
        grid[n / 2] = 0.0;
    }
    for i in 0..n / 2 {
        grid[n - 1 - i] = -grid[i];
    }

    let mut out = GridValue {
        grid,
        values: vec![vec![0.0; n]; horizon + 1],
        g: g.clone(),
        lambda,
        a,
        kw,
        gamma: (0..horizon).map(|k| sched.gamma_scalar(k)).collect(),
        rule: GaussHermite::new(cfg.quadrature_nodes)?,
        backup: cfg.backup,
    };

    let sd = kw.sqrt();
    let limit = half * (1.0 + cfg.extrapolation_margin);
    for k in (0..horizon).rev() {
        let transmit = lambda * g.values()[k] + out.expect(k + 1, 0.0);
        // Quadrature queries at A e + sd z, weighted by their rule weight;
        // the mass beyond the margin is averaged over the grid.
        let mut outside = 0.0;
        if k + 1 < horizon {
            for &e in &out.grid {
                for (z, w) in out.rule.nodes.iter().zip(&out.rule.weights) {
                    if (a * e + sd * z).abs() > limit {
                        outside += w;
                    }
                }
            }
        }
        let fraction = outside / n as f64;
        if fraction > cfg.max_outside_fraction {
            return Err(Error::GridTooSmall { fraction });
        }
        let row: Vec<f64> = out
            .grid
            .par_iter()
            .map(|&e| {
                let idle = out.expect(k + 1, a * e);
                out.gamma[k] * e * e + out.backup.combine(transmit, idle)
            })
            .collect();
        out.values[k] = row;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lqg::{solve_riccati, TeamParams};

    fn scalar() -> TeamType<f64> {
        TeamParams::scalar(1.5, 2.0, 2.0, 1.0, 6.0, 2.0).build().unwrap()
    }

    #[test]
    fn feature_examples() {
        assert_eq!(features(0.0, 0.0, Degree::Quadratic), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(features(2.0, 0.5, Degree::Quadratic), vec![1.0, 2.0, 4.0, 0.25]);
        assert_eq!(features(1.0, 1.0, Degree::Quartic), vec![1.0; 6]);
        assert_eq!(features(2.0, 0.0, Degree::Cubic), vec![1.0, 2.0, 4.0, 0.0, 8.0]);
        assert!(Degree::try_from(5).is_err());
        assert!(Degree::try_from(1).is_err());
    }

    #[test]
    fn analytic_expectation_matches_quadrature() {
        let gh = GaussHermite::new(20).unwrap();
        let coeffs = vec![vec![0.3, -1.2, 2.5, 4.0, 0.7, -0.05], vec![0.0; 6]];
        let w = ValueWeights::from_coeffs(Degree::Quartic, coeffs).unwrap();
        let g = MeanFieldTrajectory::constant(1, 0.4).unwrap();
        for m in [-3.0, 0.0, 0.5, 7.0] {
            let exact = w.expected_value(0, m, 6.0, &g);
            let quad = gh.expect(m, 6.0f64.sqrt(), |x| w.value(0, x, &g));
            assert!((exact - quad).abs() < 1e-9 * quad.abs().max(1.0));
        }
    }

    #[test]
    fn zero_cost_problem_fits_zero_weights() {
        let mut p = TeamParams::scalar(1.5, 2.0, 0.0, 1.0, 6.0, 2.0);
        p.q = DMatrix::zeros(1, 1);
        let ty = p.build().unwrap();
        let sched = solve_riccati(&ty, 6).unwrap();
        let g = MeanFieldTrajectory::constant(6, 0.5).unwrap();
        let w = fit_value_iteration(&ty, &sched, &g, 0.0, 0.1, &FitConfig::default()).unwrap();
        assert!(w.all_coeffs().iter().flatten().all(|&c| c == 0.0));
    }

    #[test]
    fn last_stage_has_no_future() {
        let ty = scalar();
        let sched = solve_riccati(&ty, 5).unwrap();
        let g = MeanFieldTrajectory::constant(5, 0.5).unwrap();
        let w = fit_value_iteration(&ty, &sched, &g, 5.0, 0.11, &FitConfig::default()).unwrap();
        assert!(w.coeffs(4).iter().all(|c| c.abs() < 1e-12));
        assert!(w.coeffs(5).iter().all(|&c| c == 0.0));
    }

    #[test]
    fn fit_rejects_bad_inputs() {
        let ty = scalar();
        let sched = solve_riccati(&ty, 5).unwrap();
        let g = MeanFieldTrajectory::constant(5, 0.5).unwrap();
        let short = MeanFieldTrajectory::constant(4, 0.5).unwrap();
        let cfg = FitConfig::default();
        assert!(fit_value_iteration(&ty, &sched, &short, 1.0, 0.1, &cfg).is_err());
        let few = FitConfig {
            samples: 39,
            ..cfg.clone()
        };
        assert!(fit_value_iteration(&ty, &sched, &g, 1.0, 0.1, &few).is_err());
        assert!(fit_value_iteration(&ty, &sched, &g, 1.0, 0.0, &cfg).is_err());
    }

    #[test]
    fn weights_json_round_trip() {
        let ty = scalar();
        let sched = solve_riccati(&ty, 4).unwrap();
        let g = MeanFieldTrajectory::constant(4, 0.3).unwrap();
        let cfg = FitConfig {
            degree: Degree::Cubic,
            ..FitConfig::default()
        };
        let w = fit_value_iteration(&ty, &sched, &g, 2.0, 0.5, &cfg).unwrap();
        let json = serde_json::to_string(&w).unwrap();
        assert!(json.contains("\"w3\"") && json.contains("\"w4\"") && json.contains("\"degree\":3"));
        let back: ValueWeights = serde_json::from_str(&json).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn grid_terminal_and_last_stage() {
        let ty = scalar();
        let sched = solve_riccati(&ty, 5).unwrap();
        let g = MeanFieldTrajectory::constant(5, 0.5).unwrap();
        let gv = grid_dp(&ty, &sched, &g, 5.0, &GridConfig::default()).unwrap();
        assert!(gv.values(5).iter().all(|&v| v == 0.0));
        let gamma = sched.gamma_scalar(4);
        for (e, v) in gv.grid().iter().zip(gv.values(4)) {
            assert_eq!(*v, e * e * gamma);
        }
        assert!(gv.values(0).iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn grid_two_step_closed_form() {
        let ty = scalar();
        let sched = solve_riccati(&ty, 2).unwrap();
        let g = MeanFieldTrajectory::constant(2, 0.5).unwrap();
        let gv = grid_dp(&ty, &sched, &g, 0.0, &GridConfig::default()).unwrap();
        let (g0, g1) = (sched.gamma_scalar(0), sched.gamma_scalar(1));
        for (e, v) in gv.grid().iter().zip(gv.values(0)) {
            // transmit is optimal (ties included) and costs E[Gamma_1 W^2]
            let closed = e * e * g0 + g1 * 6.0;
            assert!((v - closed).abs() <= 1e-6 * closed.max(1.0));
        }
    }

    #[test]
    fn grid_three_step_closed_form() {
        let ty = scalar();
        let sched = solve_riccati(&ty, 3).unwrap();
        let g = MeanFieldTrajectory::new(vec![0.7, 0.2, 0.4]).unwrap();
        let lambda = 3.0;
        let cfg = GridConfig {
            points: 8001,
            ..GridConfig::default()
        };
        let gv = grid_dp(&ty, &sched, &g, lambda, &cfg).unwrap();
        let (g0, g1) = (sched.gamma_scalar(0), sched.gamma_scalar(1));
        let a2 = 2.25;
        for (e, v) in gv.grid().iter().zip(gv.values(0)) {
            if e.abs() > 50.0 {
                continue;
            }
            let closed = e * e * g0 + g1 * 6.0 + (lambda * 0.7f64).min(g1 * a2 * e * e);
            assert!((v - closed).abs() <= 1e-3 * closed.max(1.0), "e = {e}: {v} vs {closed}");
        }
    }

    #[test]
    fn grid_too_small_is_detected() {
        let ty = scalar();
        let sched = solve_riccati(&ty, 5).unwrap();
        let g = MeanFieldTrajectory::constant(5, 0.5).unwrap();
        let cfg = GridConfig {
            width_sigmas: 0.01,
            extrapolation_margin: 0.1,
            ..GridConfig::default()
        };
        assert!(matches!(
            grid_dp(&ty, &sched, &g, 1.0, &cfg),
            Err(Error::GridTooSmall { .. })
        ));
    }

    #[test]
    fn grid_rejects_vector_plants() {
        let ty = TeamType::new(TeamParams {
            id: "v".into(),
            prob: 1.0,
            a: DMatrix::identity(2, 2),
            b: DMatrix::identity(2, 2),
            q: DMatrix::identity(2, 2),
            r: DMatrix::identity(2, 2),
            k_w: DMatrix::identity(2, 2),
            sigma0: DMatrix::identity(2, 2),
            nu: DVector::zeros(2),
        })
        .unwrap();
        let sched = solve_riccati(&ty, 3).unwrap();
        let g = MeanFieldTrajectory::constant(3, 0.5).unwrap();
        assert!(matches!(
            grid_dp(&ty, &sched, &g, 1.0, &GridConfig::default()),
            Err(Error::NonScalar(2))
        ));
    }

    #[test]
    fn soft_backup_lies_between_branches() {
        let b = Backup::Soft { alpha: 0.3 };
        let v = b.combine(2.0, 5.0);
        assert!(v > 2.0 && v < 5.0);
        assert_eq!(Backup::HardMin.combine(2.0, 5.0), 2.0);
    }
}
