//! Generative model of the belief MDP and the certainty-equivalent mean
//! propagation used below the root by QMDP tree search.

use nalgebra::DVector;
use rand::Rng;

use crate::error::Result;
use crate::gaussian::{sample_mvn, std_normal};
use crate::plant::{observe_clean, reward, step_deterministic, Control, Hyperstate, PhysState, PlantSpec};
use crate::scalar::Real;
use crate::ukf::{filter_step, BeliefState};

/// State block of the belief mean.
pub fn mean_state<T: Real>(b: &BeliefState<T>) -> PhysState<T> {
    Hyperstate::from_slice(b.mean.as_slice()).state
}

/// Belief mean as a hyperstate.
pub fn mean_hyperstate<T: Real>(b: &BeliefState<T>) -> Hyperstate<T> {
    Hyperstate::from_slice(b.mean.as_slice())
}

/// Draws a hyperstate from the belief with parameters clamped at the floor.
pub fn sample_hyperstate<T: Real, R: Rng + ?Sized>(b: &BeliefState<T>, spec: &PlantSpec<T>, rng: &mut R) -> Result<Hyperstate<T>> {
    let x = sample_mvn(b, rng)?;
    let mut xi = Hyperstate::from_slice(x.as_slice());
    xi.params = xi.params.clamped(spec.param_floor);
    Ok(xi)
}

/// One belief transition `b' = G(b, u)`: sample a hyperstate, step it,
/// synthesise a measurement with the filter's noise level and filter it.
/// The reward is evaluated at the current belief mean.
pub fn generative<T: Real, R: Rng + ?Sized>(b: &BeliefState<T>, u: &Control<T>, spec: &PlantSpec<T>, rng: &mut R) -> Result<(BeliefState<T>, T)> {
    let r = reward(&mean_state(b), u, spec);
    let xi = sample_hyperstate(b, spec, rng)?;
    let next = step_deterministic(&xi, u, spec);
    let sigma = spec.filter_meas_var().sqrt();
    let o = observe_clean(&next, u);
    let o = DVector::from_iterator(o.len(), o.iter().map(|y| *y + sigma * std_normal::<T, R>(rng)));
    Ok((filter_step(b, u, &o, spec)?, r))
}

/// Deterministic transition of a hyperstate treated as fully known, with the
/// reward at the pre-transition state.
pub fn mean_propagate<T: Real>(xi_hat: &Hyperstate<T>, u: &Control<T>, spec: &PlantSpec<T>) -> (Hyperstate<T>, T) {
    (step_deterministic(xi_hat, u, spec), reward(&xi_hat.state, u, spec))
}
