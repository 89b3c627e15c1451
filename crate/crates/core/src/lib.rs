//! Mean-field team equilibrium solver and finite-team simulator for
//! networked LQG control loops that share a contention-priced channel.

pub mod error;
pub mod estimation;
pub mod experiments;
pub mod lqg;
pub mod meanfield;
pub mod quadrature;
pub mod records;
pub mod rng;
pub mod sensing;
pub mod sim;
pub mod value_model;

pub use error::{Error, Result};
pub use lqg::{baseline_cost, solve_riccati, RiccatiSchedule, TeamParams, TeamType, TypeSet};
pub use meanfield::{
    apply_mf_operator, contraction_check, lipschitz_probe, solve_mfte, MFTESolution, MeanFieldTrajectory,
    SolverConfig,
};
pub use sensing::{voi, SensingRule, VoIBreakdown};
pub use value_model::{fit_value_iteration, grid_dp, Degree, FitConfig, GridConfig, ValueWeights};

pub type TeamType64 = TeamType<f64>;
pub type TeamType32 = TeamType<f32>;
pub type RiccatiSchedule64 = RiccatiSchedule<f64>;
pub type RiccatiSchedule32 = RiccatiSchedule<f32>;
pub type TypeSet64 = TypeSet<f64>;
