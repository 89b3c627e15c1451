//! Controller-side MMSE estimator and the estimation-error process.
//!
//! The controller only learns the state when the sensor transmits; between
//! transmissions it propagates its estimate open loop. No-transmission events
//! carry no information to the estimator.

use nalgebra::{convert, DVector, RealField};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StandardUniform};
use serde::{Deserialize, Serialize};

use crate::lqg::TeamType;

/// `Z_{k+1} = A((1 - gamma) Z + gamma X) + B U`.
pub fn estimator_step<T: RealField + Copy>(
    ty: &TeamType<T>,
    z: &DVector<T>,
    gamma: bool,
    x: &DVector<T>,
    u: &DVector<T>,
) -> DVector<T> {
    let known = if gamma { x } else { z };
    ty.a() * known + ty.b() * u
}

/// `e_{k+1} = (1 - gamma) A e + W`.
pub fn error_step<T: RealField + Copy>(
    ty: &TeamType<T>,
    e: &DVector<T>,
    gamma: bool,
    w: &DVector<T>,
) -> DVector<T> {
    if gamma {
        w.clone()
    } else {
        ty.a() * e + w
    }
}

/// Conditional mean of the state at the controller.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorState<T: RealField> {
    pub z: DVector<T>,
    pub k: usize,
}

impl<T: RealField + Copy> EstimatorState<T> {
    /// Starts at the prior mean of `X_0`.
    pub fn new(ty: &TeamType<T>) -> Self {
        EstimatorState {
            z: ty.nu().clone(),
            k: 0,
        }
    }

    pub fn advance(&mut self, ty: &TeamType<T>, gamma: bool, x: &DVector<T>, u: &DVector<T>) {
        self.z = estimator_step(ty, &self.z, gamma, x, u);
        self.k += 1;
    }
}

/// Estimation error `e = X - Z`.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorState<T: RealField> {
    pub e: DVector<T>,
    pub k: usize,
}

impl<T: RealField + Copy> ErrorState<T> {
    pub fn new(e0: DVector<T>) -> Self {
        ErrorState { e: e0, k: 0 }
    }

    pub fn advance(&mut self, ty: &TeamType<T>, gamma: bool, w: &DVector<T>) {
        self.e = error_step(ty, &self.e, gamma, w);
        self.k += 1;
    }
}

/// Law of the initial state. Both options have mean `nu` and covariance
/// `Sigma0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialDistribution {
    #[default]
    Gaussian,
    /// Independent `U(-sqrt 3, sqrt 3)` coordinates mapped through the
    /// Cholesky factor of `Sigma0`.
    UniformSymmetric,
}

/// Draws `n` standard coordinates for the given initial law.
fn standard_draws<T, R>(n: usize, dist: InitialDistribution, rng: &mut R) -> DVector<T>
where
    T: RealField + Copy,
    R: Rng + ?Sized,
    StandardNormal: Distribution<T>,
    StandardUniform: Distribution<T>,
{
    match dist {
        InitialDistribution::Gaussian => DVector::from_fn(n, |_, _| rng.sample(StandardNormal)),
        InitialDistribution::UniformSymmetric => {
            let root3: T = convert(3.0f64.sqrt());
            let two: T = convert(2.0);
            DVector::from_fn(n, |_, _| {
                let u: T = rng.sample(StandardUniform);
                (two * u - T::one()) * root3
            })
        }
    }
}

/// Initial error `e_0 = X_0 - nu`, zero mean with covariance `Sigma0`.
pub fn sample_initial_error<T, R>(ty: &TeamType<T>, dist: InitialDistribution, rng: &mut R) -> DVector<T>
where
    T: RealField + Copy,
    R: Rng + ?Sized,
    StandardNormal: Distribution<T>,
    StandardUniform: Distribution<T>,
{
    ty.init_factor() * standard_draws(ty.state_dim(), dist, rng)
}

/// `W ~ N(0, K_W)`.
pub fn sample_noise<T, R>(ty: &TeamType<T>, rng: &mut R) -> DVector<T>
where
    T: RealField + Copy,
    R: Rng + ?Sized,
    StandardNormal: Distribution<T>,
{
    let n = ty.state_dim();
    ty.noise_factor() * DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}
