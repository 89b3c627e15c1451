#![allow(dead_code)]

use mftg::lqg::{solve_riccati, TeamParams, TeamType, TypeSet};
use mftg::meanfield::{solve_mfte, MFTESolution, MeanFieldTrajectory, SolverConfig, TeamModel};
use mftg::value_model::{Degree, ValueWeights};

pub fn scalar_type() -> TeamType<f64> {
    TeamParams::scalar(1.5, 2.0, 2.0, 1.0, 6.0, 2.0).build().unwrap()
}

pub fn scalar_types() -> TypeSet<f64> {
    TypeSet::single(scalar_type()).unwrap()
}

pub fn two_types() -> TypeSet<f64> {
    let a = TeamParams::scalar(1.5, 2.0, 2.0, 1.0, 6.0, 2.0).with_id("a").with_prob(0.5);
    let b = TeamParams::scalar(0.9, 1.0, 1.0, 1.0, 2.0, 1.0).with_id("b").with_prob(0.5);
    TypeSet::new(vec![a.build().unwrap(), b.build().unwrap()]).unwrap()
}

/// A solution shell with zero value weights. Only useful with fixed
/// policies, or with `alpha` so small the weights do not matter.
pub fn fixed_solution(types: &TypeSet<f64>, horizon: usize, lambda: f64, alpha: f64, g: f64) -> MFTESolution {
    let teams = types
        .iter()
        .map(|ty| TeamModel {
            ty: ty.clone(),
            sched: solve_riccati(ty, horizon).unwrap(),
            weights: ValueWeights::zeros(horizon, Degree::Quadratic),
        })
        .collect();
    MFTESolution {
        g_star: MeanFieldTrajectory::constant(horizon, g).unwrap(),
        teams,
        lambda,
        alpha,
        residual: 0.0,
        mc_std: vec![0.0; horizon],
        iterations: 0,
        converged: true,
        contraction_certified: true,
        lipschitz_estimate: None,
        residual_history: Vec::new(),
        config_hash: None,
    }
}

pub fn solved(types: &TypeSet<f64>, horizon: usize, lambda: f64, alpha: f64, rollouts: usize) -> MFTESolution {
    let cfg = SolverConfig {
        rollouts,
        ..SolverConfig::default()
    };
    solve_mfte(types, lambda, alpha, horizon, &cfg).unwrap()
}
