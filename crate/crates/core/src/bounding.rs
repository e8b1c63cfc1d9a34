//! Probabilistic bounding heuristic: accept an action only when a
//! conservative bound on the next state's norm, built from confidence regions
//! of the belief and of the process noise, stays below a desired value.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::{chi2_quantile, confidence_ellipsoid, sample_in_ellipsoid, Ellipsoid, Gaussian};
use crate::plant::{step_physics, Control, Hyperstate, PhysState, PlantSpec, STATE_DIM};
use crate::scalar::{lit, Real};
use crate::ukf::BeliefState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingParams<T: Real> {
    /// Desired bound on the Euclidean norm of the next physical state.
    pub beta_des: T,
    /// Significance level; the regions hold with probability `1 - alpha`.
    pub alpha: T,
    /// Maximum number of candidate actions tried.
    pub n_u: usize,
    /// Number of belief samples used to approximate the worst case.
    pub n_b: usize,
}

impl<T: Real> Default for BoundingParams<T> {
    fn default() -> Self {
        Self { beta_des: lit(6.0), alpha: lit(0.05), n_u: 50, n_b: 100 }
    }
}

impl<T: Real> BoundingParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_des > T::zero()) {
            return Err(Error::Config(format!("beta_des = {} must be positive", self.beta_des)));
        }
        let a = self.alpha.as_f64();
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::Config(format!("alpha = {a} outside (0, 1)")));
        }
        if self.n_u == 0 || self.n_b == 0 {
            return Err(Error::Config("n_u and n_b must be at least 1".into()));
        }
        Ok(())
    }
}

/// Largest semi-axis of the process-noise confidence region restricted to
/// the physical state: `sqrt(σ²_w · χ²_6(1 - alpha))`.
pub fn beta_w<T: Real>(spec: &PlantSpec<T>, alpha: T) -> Result<T> {
    let q = chi2_quantile(STATE_DIM as u32, 1.0 - alpha.as_f64())?;
    Ok((spec.process_var * lit(q)).sqrt())
}

/// Largest value of `f` over `n` uniform samples of `e` that pass `keep`.
/// Returns `None` when every sample is rejected.
pub fn sampled_max<T, R, K, F>(e: &Ellipsoid<T>, n: usize, rng: &mut R, keep: K, f: F) -> Option<T>
where
    T: Real,
    R: Rng + ?Sized,
    K: Fn(&DVector<T>) -> bool,
    F: Fn(&DVector<T>) -> T,
{
    sample_in_ellipsoid(e, n, rng).iter().filter(|x| keep(x)).map(f).reduce(|a, b| a.max(b))
}

/// Belief-region samples drawn once and reused for every candidate action
/// evaluated at the same belief.
#[derive(Debug, Clone)]
pub struct BoundingContext<T: Real> {
    pub samples: Vec<Hyperstate<T>>,
    pub beta_w: T,
    pub beta_des: T,
    /// True when every region sample violated the parameter floor and the
    /// clamped mean stands in for them.
    pub fell_back: bool,
}

impl<T: Real> BoundingContext<T> {
    pub fn new<R: Rng + ?Sized>(b: &BeliefState<T>, params: &BoundingParams<T>, spec: &PlantSpec<T>, rng: &mut R) -> Result<Self> {
        let e = confidence_ellipsoid(b, params.alpha)?;
        let floor = spec.param_floor;
        let samples: Vec<Hyperstate<T>> = sample_in_ellipsoid(&e, params.n_b, rng)
            .iter()
            .map(|x| Hyperstate::from_slice(x.as_slice()))
            .filter(|xi| xi.params.to_vector().iter().all(|p| *p >= floor))
            .collect();
        let fell_back = samples.is_empty();
        let samples = if fell_back {
            let mut xi = Hyperstate::from_slice(b.mean.as_slice());
            xi.params = xi.params.clamped(floor);
            vec![xi]
        } else {
            samples
        };
        Ok(Self { samples, beta_w: beta_w(spec, params.alpha)?, beta_des: params.beta_des, fell_back })
    }

    /// Largest next-state norm over the stored samples under `u`.
    pub fn beta_b(&self, u: &Control<T>, dt: T) -> T {
        self.samples.iter().map(|xi| step_physics(xi, u, dt).norm()).fold(T::zero(), |a, b| a.max(b))
    }

    pub fn accepts(&self, u: &Control<T>, dt: T) -> bool {
        self.beta_w + self.beta_b(u, dt) <= self.beta_des
    }
}

/// Conservative next-state norm under `u` from `n_b` fresh region samples.
pub fn beta_b<T: Real, R: Rng + ?Sized>(b: &BeliefState<T>, u: &Control<T>, params: &BoundingParams<T>, spec: &PlantSpec<T>, rng: &mut R) -> Result<T> {
    Ok(BoundingContext::new(b, params, spec, rng)?.beta_b(u, spec.dt))
}

/// Tries up to `n_u` uniform actions and returns the first accepted one, or
/// the last one tried with the flag cleared.
pub fn filter_action<T: Real, R: Rng + ?Sized>(b: &BeliefState<T>, params: &BoundingParams<T>, spec: &PlantSpec<T>, rng: &mut R) -> Result<(Control<T>, bool)> {
    let ctx = BoundingContext::new(b, params, spec, rng)?;
    let mut last = Control::zero();
    for _ in 0..params.n_u {
        last = Control::sample_uniform(spec.u_max, rng);
        if ctx.accepts(&last, spec.dt) {
            return Ok((last, true));
        }
    }
    Ok((last, false))
}

/// Belief with zero covariance at a known hyperstate.
pub fn point_belief<T: Real>(xi: &Hyperstate<T>) -> BeliefState<T> {
    let n = xi.to_dvector().len();
    Gaussian::new_unchecked(xi.to_dvector(), DMatrix::zeros(n, n))
}

/// Norm of the next physical state.
pub fn next_state_norm<T: Real>(xi: &Hyperstate<T>, u: &Control<T>, dt: T) -> T {
    step_physics(xi, u, dt).norm()
}

/// Euclidean norm of a physical state.
pub fn state_norm<T: Real>(x: &PhysState<T>) -> T {
    x.norm()
}
