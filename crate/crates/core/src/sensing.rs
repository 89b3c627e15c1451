//! Value of information and the two sensor policies built on it: the optimal
//! threshold rule and its Boltzmann (sigmoid) relaxation.

use nalgebra::{convert, RealField};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lqg::{RiccatiSchedule, TeamType};
use crate::meanfield::MeanFieldTrajectory;
use crate::value_model::CostToGo;

/// What a VoI evaluation needs besides the cost-to-go model.
#[derive(Clone, Copy, Debug)]
pub struct VoiContext<'a> {
    pub ty: &'a TeamType<f64>,
    pub sched: &'a RiccatiSchedule<f64>,
    pub g: &'a MeanFieldTrajectory,
    pub lambda: f64,
}

/// `total = quadratic_term - price_term + future_term`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoIBreakdown {
    /// `Gamma_{k+1} (A e)^2`: immediate error cost avoided at `k + 1`.
    pub quadratic_term: f64,
    /// `lambda g_k`.
    pub price_term: f64,
    /// Remaining difference of expected cost-to-go beyond `k + 1`.
    pub future_term: f64,
    pub total: f64,
}

impl VoIBreakdown {
    pub fn new(quadratic_term: f64, price_term: f64, future_term: f64) -> Self {
        VoIBreakdown {
            quadratic_term,
            price_term,
            future_term,
            total: quadratic_term - price_term + future_term,
        }
    }
}

/// Value of information at step `k` for scalar error `e`: expected
/// cost-to-go without transmitting minus expected cost-to-go with it.
pub fn voi<V: CostToGo + ?Sized>(ctx: &VoiContext<'_>, value: &V, k: usize, e: f64) -> Result<VoIBreakdown> {
    let horizon = ctx.sched.horizon();
    if k >= horizon {
        return Err(Error::OutOfRange {
            what: "time",
            index: k,
            len: horizon,
        });
    }
    if value.horizon() != horizon {
        return Err(Error::Dimension {
            what: "value model horizon",
            expected: horizon.to_string(),
            got: value.horizon().to_string(),
        });
    }
    let a = ctx.ty.a()[(0, 0)];
    let kw = ctx.ty.k_w()[(0, 0)];
    let ae = a * e;
    let idle = value.expected_value(k + 1, ae, kw, ctx.g);
    let transmit = value.expected_value(k + 1, 0.0, kw, ctx.g);
    let quadratic = ctx.sched.gamma_scalar(k + 1) * ae * ae;
    let price = ctx.lambda * ctx.g.values()[k];
    Ok(VoIBreakdown::new(quadratic, price, (idle - transmit) - quadratic))
}

/// Transmit iff VoI is non-negative.
pub fn optimal_action(v: &VoIBreakdown) -> Result<bool> {
    if v.total.is_nan() {
        return Err(Error::Numeric("VoI is NaN".into()));
    }
    Ok(v.total >= 0.0)
}

/// Logistic function with the exponent clamped to +/-700.
pub fn sigmoid<T: RealField + Copy>(x: T) -> T {
    let bound: T = convert(700.0);
    let x = x.clamp(-bound, bound);
    T::one() / (T::one() + (-x).exp())
}

/// `1 / (1 + exp(-alpha VoI))`.
pub fn boltzmann_prob(v: &VoIBreakdown, alpha: f64) -> f64 {
    sigmoid(alpha * v.total)
}

/// Bernoulli(p) decided by a uniform draw `u` in `[0, 1)`.
pub fn action_from_uniform(p: f64, u: f64) -> bool {
    u < p
}

/// One Bernoulli(p) draw from `rng`.
pub fn sample_action<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Result<bool> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid("p", format!("probability {p} outside [0, 1]")));
    }
    Ok(action_from_uniform(p, rng.random()))
}

/// How the sensor turns VoI into a transmission probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SensingRule {
    OptimalThreshold,
    Boltzmann { alpha: f64 },
}

impl SensingRule {
    pub fn boltzmann(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid("alpha", "must be finite and positive"));
        }
        Ok(SensingRule::Boltzmann { alpha })
    }

    pub fn transmit_probability(&self, v: &VoIBreakdown) -> Result<f64> {
        match *self {
            SensingRule::OptimalThreshold => Ok(if optimal_action(v)? { 1.0 } else { 0.0 }),
            SensingRule::Boltzmann { alpha } => Ok(boltzmann_prob(v, alpha)),
        }
    }
}

/// A sensing rule bound to the cost-to-go model it reads VoI from.
#[derive(Clone, Copy, Debug)]
pub struct SensorPolicy<'a, V: CostToGo + ?Sized> {
    pub rule: SensingRule,
    pub value: &'a V,
}

impl<'a, V: CostToGo + ?Sized> SensorPolicy<'a, V> {
    pub fn new(rule: SensingRule, value: &'a V) -> Self {
        SensorPolicy { rule, value }
    }

    pub fn probability(&self, ctx: &VoiContext<'_>, k: usize, e: f64) -> Result<f64> {
        let v = voi(ctx, self.value, k, e)?;
        self.rule.transmit_probability(&v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lqg::{solve_riccati, TeamParams};
    use crate::rng::{stream, Domain};
    use crate::value_model::{grid_dp, Degree, GridConfig, ValueWeights};
    use proptest::prelude::*;

    fn scalar() -> TeamType<f64> {
        TeamParams::scalar(1.5, 2.0, 2.0, 1.0, 6.0, 2.0).build().unwrap()
    }

    #[test]
    fn zero_error_costs_only_the_price() {
        let ty = scalar();
        let sched = solve_riccati(&ty, 5).unwrap();
        let g = MeanFieldTrajectory::constant(5, 0.4).unwrap();
        let ctx = VoiContext {
            ty: &ty,
            sched: &sched,
            g: &g,
            lambda: 3.0,
        };
        let mut coeffs = vec![vec![1.0, 0.5, 2.0, 3.0]; 5];
        coeffs.push(vec![0.0; 4]);
        let w = ValueWeights::from_coeffs(Degree::Quadratic, coeffs).unwrap();
        let v = voi(&ctx, &w, 1, 0.0).unwrap();
        assert!((v.total + 1.2).abs() < 1e-12);
        assert_eq!(v.quadratic_term, 0.0);
    }

    #[test]
    fn zero_weights_give_quadratic_term() {
        let ty = scalar();
        let sched = solve_riccati(&ty, 5).unwrap();
        let g = MeanFieldTrajectory::constant(5, 0.0).unwrap();
        let ctx = VoiContext {
            ty: &ty,
            sched: &sched,
            g: &g,
            lambda: 3.0,
        };
        let w = ValueWeights::zeros(5, Degree::Quadratic);
        let v = voi(&ctx, &w, 1, 2.0).unwrap();
        let expected = 2.25 * 4.0 * sched.gamma_scalar(2);
        assert!(v.total >= 0.0);
        assert!((v.quadratic_term - expected).abs() < 1e-12);
        assert!((v.total - v.quadratic_term - v.future_term).abs() < 1e-12);
        assert!(voi(&ctx, &w, 5, 0.0).is_err());
    }

    #[test]
    fn degree_two_future_term_is_linear_plus_quadratic() {
        let ty = scalar();
        let sched = solve_riccati(&ty, 4).unwrap();
        let g = MeanFieldTrajectory::constant(4, 0.5).unwrap();
        let ctx = VoiContext {
            ty: &ty,
            sched: &sched,
            g: &g,
            lambda: 1.0,
        };
        let coeffs = vec![
            vec![0.0; 4],
            vec![0.0; 4],
            vec![3.0, -0.4, 7.0, 2.0],
            vec![0.0; 4],
            vec![0.0; 4],
        ];
        let w = ValueWeights::from_coeffs(Degree::Quadratic, coeffs).unwrap();
        let e = 1.3;
        let v = voi(&ctx, &w, 1, e).unwrap();
        let direct = -0.4 * 1.5 * e + 7.0 * 2.25 * e * e;
        assert!((v.quadratic_term + v.future_term - direct).abs() < 1e-12);
    }

    #[test]
    fn grid_voi_is_q_difference() {
        let ty = scalar();
        let sched = solve_riccati(&ty, 5).unwrap();
        let g = MeanFieldTrajectory::constant(5, 0.5).unwrap();
        let lambda = 5.0;
        let gv = grid_dp(&ty, &sched, &g, lambda, &GridConfig::default()).unwrap();
        let ctx = VoiContext {
            ty: &ty,
            sched: &sched,
            g: &g,
            lambda,
        };
        for k in 0..5 {
            for e in [-9.0, -1.0, -0.2, 0.0, 0.3, 2.5, 14.0] {
                let v = voi(&ctx, &gv, k, e).unwrap();
                let (q0, q1) = gv.q_values(k, e);
                assert!((v.total - (q0 - q1)).abs() < 1e-9 * (q0.abs() + 1.0));
                assert_eq!(v.total, v.quadratic_term - v.price_term + v.future_term);
            }
        }
    }

    #[test]
    fn optimal_action_convention() {
        let v = |t: f64| VoIBreakdown {
            quadratic_term: 0.0,
            price_term: 0.0,
            future_term: 0.0,
            total: t,
        };
        assert!(optimal_action(&v(0.0)).unwrap());
        assert!(!optimal_action(&v(-3.2)).unwrap());
        assert!(optimal_action(&v(1e-15)).unwrap());
        assert!(optimal_action(&v(f64::NAN)).is_err());
    }

    #[test]
    fn boltzmann_examples() {
        let v = |t: f64| VoIBreakdown::new(t, 0.0, 0.0);
        assert_eq!(boltzmann_prob(&v(0.0), 1.0), 0.5);
        assert!(boltzmann_prob(&v(1.0), 31.0) > 1.0 - 1e-12);
        let p = boltzmann_prob(&v(10.0), 0.11);
        let oracle = 1.0 / (1.0 + (-1.1f64).exp());
        assert!((p - oracle).abs() < 1e-15);
        assert!((p - 0.750260).abs() < 1e-6);
        assert_eq!(boltzmann_prob(&v(-1e6), 1.0), 1.0 / (1.0 + 700f64.exp()));
        assert!(boltzmann_prob(&v(1e6), 1.0) == 1.0);
    }

    #[test]
    fn sample_action_edges_and_rate() {
        let mut rng = stream(1, Domain::Simulation, 0, 0, 0);
        for _ in 0..1000 {
            assert!(!sample_action(0.0, &mut rng).unwrap());
            assert!(sample_action(1.0, &mut rng).unwrap());
        }
        assert!(sample_action(1.2, &mut rng).is_err());
        assert!(sample_action(-0.1, &mut rng).is_err());
        let n = 1_000_000;
        let hits = (0..n).filter(|_| sample_action(0.75, &mut rng).unwrap()).count();
        let mean = hits as f64 / n as f64;
        assert!((mean - 0.75).abs() < 0.0015, "mean {mean}");
    }

    #[test]
    fn rule_probabilities() {
        let v = VoIBreakdown::new(3.0, 1.0, 0.0);
        assert_eq!(SensingRule::OptimalThreshold.transmit_probability(&v).unwrap(), 1.0);
        assert!(SensingRule::boltzmann(0.0).is_err());
        let r = SensingRule::boltzmann(0.5).unwrap();
        assert!((r.transmit_probability(&v).unwrap() - sigmoid(1.0)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn boltzmann_is_monotone(t1 in -1e3f64..1e3, d in 1e-6f64..10.0, alpha in 1e-3f64..5.0) {
            let lo = boltzmann_prob(&VoIBreakdown::new(t1, 0.0, 0.0), alpha);
            let hi = boltzmann_prob(&VoIBreakdown::new(t1 + d, 0.0, 0.0), alpha);
            prop_assert!(hi >= lo);
            prop_assert!((0.0..=1.0).contains(&lo));
        }

        #[test]
        fn sharp_boltzmann_matches_threshold(t in prop_oneof![-1e4f64..-1.0, 1.0f64..1e4], alpha in 30.0f64..100.0) {
            let v = VoIBreakdown::new(t, 0.0, 0.0);
            let p = boltzmann_prob(&v, alpha);
            let opt = optimal_action(&v).unwrap();
            let mismatch = if opt { 1.0 - p } else { p };
            prop_assert!(mismatch < 1e-12);
        }

        #[test]
        fn voi_non_increasing_in_price(e in -20.0f64..20.0, l1 in 0.0f64..10.0, dl in 0.0f64..10.0, k in 0usize..4) {
            let ty = scalar();
            let sched = solve_riccati(&ty, 5).unwrap();
            let g = MeanFieldTrajectory::constant(5, 0.6).unwrap();
            let mut coeffs = vec![vec![2.0, 0.3, 4.0, 1.0]; 5];
            coeffs.push(vec![0.0; 4]);
            let w = ValueWeights::from_coeffs(Degree::Quadratic, coeffs).unwrap();
            let at = |lambda| {
                let ctx = VoiContext { ty: &ty, sched: &sched, g: &g, lambda };
                voi(&ctx, &w, k, e).unwrap().total
            };
            prop_assert!(at(l1 + dl) <= at(l1));
        }
    }
}
