//! Finite-horizon LQG machinery: team types, the backward Riccati recursion,
//! certainty-equivalent feedback and the policy-independent baseline cost.
//!
//! Everything here is generic over the scalar type so the recursion can be run
//! in `f32` as well as `f64`.

use nalgebra::{convert, DMatrix, DVector, RealField};

use crate::error::{Error, Result};

/// Raw parameters of one agent type, before validation.
#[derive(Clone, Debug)]
pub struct TeamParams<T: RealField> {
    pub id: String,
    pub prob: T,
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub q: DMatrix<T>,
    pub r: DMatrix<T>,
    pub k_w: DMatrix<T>,
    pub sigma0: DMatrix<T>,
    pub nu: DVector<T>,
}

impl<T: RealField + Copy> TeamParams<T> {
    /// Scalar plant `x' = a x + b u + w` with probability mass one and zero
    /// initial mean.
    pub fn scalar(a: T, b: T, q: T, r: T, k_w: T, sigma0: T) -> Self {
        let m = |v: T| DMatrix::from_element(1, 1, v);
        TeamParams {
            id: "scalar".to_string(),
            prob: T::one(),
            a: m(a),
            b: m(b),
            q: m(q),
            r: m(r),
            k_w: m(k_w),
            sigma0: m(sigma0),
            nu: DVector::zeros(1),
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn with_prob(mut self, prob: T) -> Self {
        self.prob = prob;
        self
    }

    pub fn with_nu(mut self, nu: DVector<T>) -> Self {
        self.nu = nu;
        self
    }

    pub fn build(self) -> Result<TeamType<T>> {
        TeamType::new(self)
    }
}

/// One validated agent type: plant matrices, cost weights, noise and
/// initial-state statistics, and its population mass.
#[derive(Clone, Debug)]
pub struct TeamType<T: RealField> {
    params: TeamParams<T>,
    /// Lower Cholesky factor of `K_W`.
    noise_factor: DMatrix<T>,
    /// Lower Cholesky factor of `Sigma0`.
    init_factor: DMatrix<T>,
}

fn tolerance<T: RealField + Copy>(m: &DMatrix<T>) -> T {
    let scale = m.amax().max(T::one());
    T::default_epsilon() * convert(1.0e4) * scale
}

fn check_shape<T: RealField>(
    what: &'static str,
    m: &DMatrix<T>,
    rows: usize,
    cols: usize,
) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::Dimension {
            what,
            expected: format!("{rows}x{cols}"),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(())
}

fn check_symmetric<T: RealField + Copy>(what: &'static str, m: &DMatrix<T>) -> Result<()> {
    let tol = tolerance(m);
    if (m - m.transpose()).amax() > tol {
        return Err(Error::NotSymmetric(what));
    }
    Ok(())
}

fn cholesky_factor<T: RealField + Copy>(what: &'static str, m: &DMatrix<T>) -> Result<DMatrix<T>> {
    check_symmetric(what, m)?;
    m.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or(Error::NotPositiveDefinite(what))
}

/// Rank of the controllability matrix `[B, AB, ..., A^{n-1}B]`.
pub fn controllability_rank<T: RealField + Copy>(a: &DMatrix<T>, b: &DMatrix<T>) -> usize {
    let n = a.nrows();
    let m = b.ncols();
    let mut ctrb = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for i in 0..n {
        ctrb.view_mut((0, i * m), (n, m)).copy_from(&block);
        block = a * block;
    }
    let scale = ctrb.amax().max(T::one());
    ctrb.rank(T::default_epsilon() * convert(1.0e3) * scale)
}

impl<T: RealField + Copy> TeamType<T> {
    pub fn new(params: TeamParams<T>) -> Result<Self> {
        let n = params.a.nrows();
        if n == 0 {
            return Err(Error::invalid("A", "state dimension must be positive"));
        }
        let m = params.b.ncols();
        if m == 0 {
            return Err(Error::invalid("B", "input dimension must be positive"));
        }
        check_shape("A", &params.a, n, n)?;
        check_shape("B", &params.b, n, m)?;
        check_shape("Q", &params.q, n, n)?;
        check_shape("R", &params.r, m, m)?;
        check_shape("K_W", &params.k_w, n, n)?;
        check_shape("Sigma0", &params.sigma0, n, n)?;
        if params.nu.len() != n {
            return Err(Error::Dimension {
                what: "nu",
                expected: n.to_string(),
                got: params.nu.len().to_string(),
            });
        }
        if !(params.prob >= T::zero() && params.prob <= T::one()) {
            return Err(Error::invalid("prob", "must lie in [0, 1]"));
        }

        check_symmetric("Q", &params.q)?;
        let min_eig = params.q.clone().symmetric_eigenvalues().min();
        if min_eig < -tolerance(&params.q) {
            return Err(Error::NotPositiveSemidefinite("Q"));
        }
        cholesky_factor("R", &params.r)?;
        let noise_factor = cholesky_factor("K_W", &params.k_w)?;
        let init_factor = cholesky_factor("Sigma0", &params.sigma0)?;

        let rank = controllability_rank(&params.a, &params.b);
        if rank < n {
            return Err(Error::Uncontrollable { rank, n });
        }

        Ok(TeamType {
            params,
            noise_factor,
            init_factor,
        })
    }

    pub fn id(&self) -> &str {
        &self.params.id
    }
    pub fn prob(&self) -> T {
        self.params.prob
    }
    pub fn a(&self) -> &DMatrix<T> {
        &self.params.a
    }
    pub fn b(&self) -> &DMatrix<T> {
        &self.params.b
    }
    pub fn q(&self) -> &DMatrix<T> {
        &self.params.q
    }
    pub fn r(&self) -> &DMatrix<T> {
        &self.params.r
    }
    pub fn k_w(&self) -> &DMatrix<T> {
        &self.params.k_w
    }
    pub fn sigma0(&self) -> &DMatrix<T> {
        &self.params.sigma0
    }
    pub fn nu(&self) -> &DVector<T> {
        &self.params.nu
    }
    pub fn noise_factor(&self) -> &DMatrix<T> {
        &self.noise_factor
    }
    pub fn init_factor(&self) -> &DMatrix<T> {
        &self.init_factor
    }
    pub fn params(&self) -> &TeamParams<T> {
        &self.params
    }

    /// State dimension `n`.
    pub fn state_dim(&self) -> usize {
        self.params.a.nrows()
    }

    /// Input dimension `m`.
    pub fn input_dim(&self) -> usize {
        self.params.b.ncols()
    }

    pub fn is_scalar(&self) -> bool {
        self.state_dim() == 1
    }

    /// Fails with [`Error::NonScalar`] unless `n = 1`.
    pub fn require_scalar(&self) -> Result<()> {
        if self.is_scalar() {
            Ok(())
        } else {
            Err(Error::NonScalar(self.state_dim()))
        }
    }
}

/// A finite collection of agent types whose masses sum to one.
#[derive(Clone, Debug)]
pub struct TypeSet<T: RealField> {
    types: Vec<TeamType<T>>,
}

impl<T: RealField + Copy> TypeSet<T> {
    pub fn new(types: Vec<TeamType<T>>) -> Result<Self> {
        if types.is_empty() {
            return Err(Error::invalid("types", "type set is empty"));
        }
        let total = types.iter().fold(T::zero(), |acc, t| acc + t.prob());
        if (total - T::one()).abs() > convert(1.0e-12) {
            let total: f64 = nalgebra::try_convert(total).unwrap_or(f64::NAN);
            return Err(Error::ProbabilitySum(total));
        }
        Ok(TypeSet { types })
    }

    pub fn single(ty: TeamType<T>) -> Result<Self> {
        Self::new(vec![ty])
    }

    pub fn types(&self) -> &[TeamType<T>] {
        &self.types
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&TeamType<T>> {
        self.types.get(i)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TeamType<T>> {
        self.types.iter()
    }
}

/// Backward Riccati solution over a horizon `T`: `P[0..=T]`, gains `L[0..T]`,
/// error weights `Gamma[0..T]` and `Rhat[0..T] = R + B' P[k+1] B`.
#[derive(Clone, Debug, PartialEq)]
pub struct RiccatiSchedule<T: RealField> {
    horizon: usize,
    p: Vec<DMatrix<T>>,
    l: Vec<DMatrix<T>>,
    gamma: Vec<DMatrix<T>>,
    rhat: Vec<DMatrix<T>>,
}

impl<T: RealField + Copy> RiccatiSchedule<T> {
    /// Assembles a schedule from stored arrays (e.g. one read back from disk),
    /// checking only lengths and shapes.
    pub fn from_parts(
        p: Vec<DMatrix<T>>,
        l: Vec<DMatrix<T>>,
        gamma: Vec<DMatrix<T>>,
        rhat: Vec<DMatrix<T>>,
    ) -> Result<Self> {
        let horizon = l.len();
        if horizon == 0 || p.len() != horizon + 1 || gamma.len() != horizon || rhat.len() != horizon
        {
            return Err(Error::invalid(
                "schedule",
                "inconsistent array lengths in Riccati schedule",
            ));
        }
        let n = p[0].nrows();
        let m = rhat[0].nrows();
        for k in 0..horizon {
            check_shape("P", &p[k], n, n)?;
            check_shape("L", &l[k], m, n)?;
            check_shape("Gamma", &gamma[k], n, n)?;
            check_shape("Rhat", &rhat[k], m, m)?;
        }
        check_shape("P", &p[horizon], n, n)?;
        Ok(RiccatiSchedule {
            horizon,
            p,
            l,
            gamma,
            rhat,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn p(&self) -> &[DMatrix<T>] {
        &self.p
    }
    pub fn l(&self) -> &[DMatrix<T>] {
        &self.l
    }
    pub fn gamma(&self) -> &[DMatrix<T>] {
        &self.gamma
    }
    pub fn rhat(&self) -> &[DMatrix<T>] {
        &self.rhat
    }

    /// `U_k = -L_k Z` (negative feedback on the controller's estimate).
    pub fn control_action(&self, k: usize, z: &DVector<T>) -> Result<DVector<T>> {
        let gain = self.l.get(k).ok_or(Error::OutOfRange {
            what: "time",
            index: k,
            len: self.horizon,
        })?;
        if z.len() != gain.ncols() {
            return Err(Error::Dimension {
                what: "estimate",
                expected: gain.ncols().to_string(),
                got: z.len().to_string(),
            });
        }
        Ok(-(gain * z))
    }

    /// Scalar error weight `Gamma_k`, or zero past the last stage. Only
    /// meaningful for `n = 1`.
    pub fn gamma_scalar(&self, k: usize) -> T {
        self.gamma.get(k).map_or(T::zero(), |g| g[(0, 0)])
    }
}

/// Backward recursion
/// `P_k = Q + A'P A - A'P B (R + B'P B)^{-1} B'P A`, `P_T = 0`.
pub fn solve_riccati<T: RealField + Copy>(
    ty: &TeamType<T>,
    horizon: usize,
) -> Result<RiccatiSchedule<T>> {
    if horizon == 0 {
        return Err(Error::invalid("T", "horizon must be at least 1"));
    }
    let (a, b, q, r) = (ty.a(), ty.b(), ty.q(), ty.r());
    let n = ty.state_dim();

    let mut p = vec![DMatrix::zeros(n, n); horizon + 1];
    let mut l = Vec::with_capacity(horizon);
    let mut gamma = Vec::with_capacity(horizon);
    let mut rhat = Vec::with_capacity(horizon);

    let half: T = convert(0.5);
    for k in (0..horizon).rev() {
        let next = &p[k + 1];
        let pb = next * b;
        let rh = r + b.transpose() * &pb;
        let chol = rh.clone().cholesky().ok_or_else(|| {
            Error::Numeric(format!("R + B'P B is not positive definite at k = {k}"))
        })?;
        // B' P A
        let bpa = pb.transpose() * a;
        let gain = chol.solve(&bpa);
        let g = bpa.transpose() * &gain;
        let g = (&g + g.transpose()) * half;
        let pk = q + a.transpose() * next * a - &g;
        p[k] = (&pk + pk.transpose()) * half;
        l.push(gain);
        gamma.push(g);
        rhat.push(rh);
    }
    l.reverse();
    gamma.reverse();
    rhat.reverse();

    Ok(RiccatiSchedule {
        horizon,
        p,
        l,
        gamma,
        rhat,
    })
}

/// `x' M x`.
pub fn quad_form<T: RealField + Copy>(x: &DVector<T>, m: &DMatrix<T>) -> T {
    (x.transpose() * m * x)[(0, 0)]
}

/// Policy-independent part of the time-averaged control cost:
/// `(1/T) [ E||X_0||^2_{P_0} + sum_{k<T} tr(P_{k+1} K_W) ]`,
/// with `E||X_0||^2_{P_0} = nu' P_0 nu + tr(P_0 Sigma0)`.
///
/// The full control cost under certainty-equivalent feedback is this plus
/// `(1/T) sum_k E||e_k||^2_{Gamma_k}`.
pub fn baseline_cost<T: RealField + Copy>(
    ty: &TeamType<T>,
    sched: &RiccatiSchedule<T>,
) -> Result<T> {
    let n = ty.state_dim();
    if sched.p[0].nrows() != n {
        return Err(Error::Dimension {
            what: "schedule",
            expected: n.to_string(),
            got: sched.p[0].nrows().to_string(),
        });
    }
    let p0 = &sched.p[0];
    let initial = quad_form(ty.nu(), p0) + (p0 * ty.sigma0()).trace();
    let noise = sched.p[1..]
        .iter()
        .fold(T::zero(), |acc, pk| acc + (pk * ty.k_w()).trace());
    let horizon: T = convert(sched.horizon as f64);
    Ok((initial + noise) / horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_plant() -> TeamType<f64> {
        TeamParams::scalar(1.5, 2.0, 2.0, 1.0, 6.0, 2.0).build().unwrap()
    }

    #[test]
    fn terminal_step_is_forced() {
        let ty = scalar_plant();
        for horizon in [1, 2, 7, 50] {
            let s = solve_riccati(&ty, horizon).unwrap();
            assert_eq!(s.p()[horizon][(0, 0)], 0.0);
            assert_eq!(s.p()[horizon - 1][(0, 0)], 2.0);
            assert_eq!(s.gamma()[horizon - 1][(0, 0)], 0.0);
            assert_eq!(s.l()[horizon - 1][(0, 0)], 0.0);
        }
    }

    #[test]
    fn zero_state_cost_gives_zero_schedule() {
        let n = 3;
        let ty = TeamType::new(TeamParams {
            id: "zero".into(),
            prob: 1.0,
            a: DMatrix::identity(n, n),
            b: DMatrix::identity(n, n),
            q: DMatrix::zeros(n, n),
            r: DMatrix::identity(n, n),
            k_w: DMatrix::identity(n, n),
            sigma0: DMatrix::identity(n, n),
            nu: DVector::from_element(n, 1.0),
        })
        .unwrap();
        let s = solve_riccati(&ty, 10).unwrap();
        assert!(s.p().iter().all(|p| p.amax() == 0.0));
        assert!(s.l().iter().all(|l| l.amax() == 0.0));
        assert_eq!(baseline_cost(&ty, &s).unwrap(), 0.0);
    }

    #[test]
    fn gamma_matches_its_definition() {
        let ty = TeamType::new(TeamParams {
            id: "two".into(),
            prob: 1.0,
            a: DMatrix::from_row_slice(2, 2, &[1.1, 0.3, 0.0, 0.9]),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            q: DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            r: DMatrix::from_element(1, 1, 0.7),
            k_w: DMatrix::identity(2, 2),
            sigma0: DMatrix::identity(2, 2),
            nu: DVector::zeros(2),
        })
        .unwrap();
        let s = solve_riccati(&ty, 30).unwrap();
        for k in 0..30 {
            let next = &s.p()[k + 1];
            let rinv = s.rhat()[k].clone().try_inverse().unwrap();
            let direct = ty.a().transpose() * next * ty.b() * rinv * ty.b().transpose() * next * ty.a();
            let scale = direct.amax().max(1.0);
            assert!((&direct - &s.gamma()[k]).amax() / scale < 1e-10);
            assert!((&s.p()[k] - s.p()[k].transpose()).amax() <= 1e-12);
            assert!(s.p()[k].clone().symmetric_eigenvalues().min() >= -1e-10);
            assert!(s.gamma()[k].clone().symmetric_eigenvalues().min() >= -1e-10);
        }
    }

    #[test]
    fn control_action_errors() {
        let s = solve_riccati(&scalar_plant(), 5).unwrap();
        assert!(matches!(
            s.control_action(5, &DVector::zeros(1)),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matches!(
            s.control_action(0, &DVector::zeros(2)),
            Err(Error::Dimension { .. })
        ));
        assert_eq!(s.control_action(4, &DVector::from_element(1, 3.0)).unwrap()[0], 0.0);
        assert_eq!(s.control_action(0, &DVector::zeros(1)).unwrap()[0], 0.0);
    }

    #[test]
    fn rejects_invalid_types() {
        let mut p = TeamParams::scalar(1.5, 2.0, 2.0, 1.0, 6.0, 2.0);
        p.r = DMatrix::from_element(1, 1, 0.0);
        assert!(matches!(p.build(), Err(Error::NotPositiveDefinite("R"))));

        let mut p = TeamParams::scalar(1.5, 2.0, -1.0, 1.0, 6.0, 2.0);
        assert!(matches!(p.clone().build(), Err(Error::NotPositiveSemidefinite("Q"))));
        p.q = DMatrix::from_element(1, 1, 1.0);
        p.b = DMatrix::from_element(1, 1, 0.0);
        assert!(matches!(p.build(), Err(Error::Uncontrollable { rank: 0, n: 1 })));

        let p = TeamParams::<f64> {
            a: DMatrix::identity(2, 2),
            ..TeamParams::scalar(1.5, 2.0, 2.0, 1.0, 6.0, 2.0)
        };
        assert!(matches!(p.build(), Err(Error::Dimension { .. })));

        let mut p = TeamParams::scalar(1.5, 2.0, 2.0, 1.0, 6.0, 2.0);
        p.prob = 1.5;
        assert!(p.build().is_err());
    }

    #[test]
    fn type_set_probabilities() {
        let a = scalar_plant();
        let half = TeamParams::scalar(1.5, 2.0, 2.0, 1.0, 6.0, 2.0).with_prob(0.5);
        let h1 = half.clone().with_id("a").build().unwrap();
        let h2 = half.with_id("b").build().unwrap();
        assert!(TypeSet::new(vec![h1.clone(), h2]).is_ok());
        assert!(matches!(TypeSet::new(vec![h1, a.clone(), a]), Err(Error::ProbabilitySum(_))));
        assert!(TypeSet::<f64>::new(vec![]).is_err());
    }

    #[test]
    fn runs_in_single_precision() {
        let ty = TeamParams::<f32>::scalar(1.5, 2.0, 2.0, 1.0, 6.0, 2.0).build().unwrap();
        let s32 = solve_riccati(&ty, 50).unwrap();
        let s64 = solve_riccati(&scalar_plant(), 50).unwrap();
        assert_relative_eq!(s32.p()[0][(0, 0)] as f64, s64.p()[0][(0, 0)], max_relative = 1e-5);
    }
}
