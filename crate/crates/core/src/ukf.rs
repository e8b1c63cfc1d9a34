//! Unscented Kalman filter over the hyperstate, with additive process and
//! measurement noise.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::gaussian::{cross_covariance, propagate, sigma_points_with, symmetrize, Gaussian, UtParams, JITTER_LADDER};
use crate::plant::{observe_clean, step_physics, Control, Hyperstate, PlantSpec, HYPER_DIM, OBS_DIM, STATE_DIM};
use crate::scalar::{lit, Real};

/// Gaussian belief over the 11-dimensional hyperstate.
pub type BeliefState<T> = Gaussian<T>;

/// Number of standard deviations along a covariance axis beyond which the
/// filter is declared divergent.
pub const DIVERGENCE_SIGMAS: f64 = 5.0;

/// Unscented predict through `f` with additive noise covariance `q`.
pub fn predict_with<T, F>(b: &Gaussian<T>, f: F, q: &DMatrix<T>, params: UtParams<T>) -> Result<Gaussian<T>>
where
    T: Real,
    F: FnMut(&DVector<T>) -> DVector<T>,
{
    let s = sigma_points_with(b, params)?;
    let out = propagate(&s, f);
    Ok(Gaussian::new_unchecked(out.mean, symmetrize(&(out.cov + q))))
}

/// Unscented measurement update through `h` with additive noise covariance
/// `r` and observation `o`.
pub fn update_with<T, H>(b: &Gaussian<T>, h: H, o: &DVector<T>, r: &DMatrix<T>, params: UtParams<T>) -> Result<Gaussian<T>>
where
    T: Real,
    H: FnMut(&DVector<T>) -> DVector<T>,
{
    let s = sigma_points_with(b, params)?;
    let y = propagate(&s, h);
    let pxy = cross_covariance(&s, &y);
    let innov_cov = symmetrize(&(&y.cov + r));

    let mut chol = None;
    for jitter in JITTER_LADDER {
        let mut m = innov_cov.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += lit(jitter);
        }
        if let Some(c) = Cholesky::new(m) {
            chol = Some(c);
            break;
        }
    }
    let chol = chol.ok_or_else(|| Error::FilterFailure("innovation covariance is not positive definite".into()))?;
    // K = Pxy S⁻¹, computed as (S⁻¹ Pxyᵀ)ᵀ
    let gain = chol.solve(&pxy.transpose()).transpose();
    let mean = &b.mean + &gain * (o - &y.mean);
    let cov = symmetrize(&(&b.cov - &gain * pxy.transpose()));
    if mean.iter().chain(cov.iter()).any(|x| !x.is_finite()) {
        return Err(Error::FilterFailure("non-finite posterior".into()));
    }
    Ok(Gaussian::new_unchecked(mean, cov))
}

fn clamp_param_mean<T: Real>(b: &mut Gaussian<T>, floor: T) {
    for i in STATE_DIM..HYPER_DIM {
        b.mean[i] = b.mean[i].max(floor);
    }
}

/// Noise-free hyperstate transition used inside the filter. Parameters are
/// carried over unchanged: clamping individual sigma points would bias the
/// recovered mean by the large sigma-point weights, so the floor is applied
/// to the predicted mean instead.
fn filter_transition<T: Real>(u: Control<T>, dt: T) -> impl Fn(&DVector<T>) -> DVector<T> {
    move |x| {
        let xi = Hyperstate::from_slice(x.as_slice());
        let next = Hyperstate { state: step_physics(&xi, &u, dt), params: xi.params };
        next.to_dvector()
    }
}

/// Time update with the filter's process variance.
pub fn predict<T: Real>(b: &BeliefState<T>, u: &Control<T>, spec: &PlantSpec<T>) -> Result<BeliefState<T>> {
    let q = DMatrix::<T>::identity(HYPER_DIM, HYPER_DIM) * spec.filter_process_var();
    let mut out = predict_with(b, filter_transition(*u, spec.dt), &q, UtParams::default())?;
    clamp_param_mean(&mut out, spec.param_floor);
    Ok(out)
}

/// Measurement update with the filter's measurement variance.
pub fn update<T: Real>(b: &BeliefState<T>, u: &Control<T>, o: &DVector<T>, spec: &PlantSpec<T>) -> Result<BeliefState<T>> {
    if o.len() != OBS_DIM {
        return Err(Error::Domain(format!("observation has {} components, expected {OBS_DIM}", o.len())));
    }
    let r = DMatrix::<T>::identity(OBS_DIM, OBS_DIM) * spec.filter_meas_var();
    let uu = *u;
    let h = move |x: &DVector<T>| {
        let y = observe_clean(&Hyperstate::from_slice(x.as_slice()), &uu);
        DVector::from_column_slice(y.as_slice())
    };
    let mut out = update_with(b, h, o, &r, UtParams::default())?;
    clamp_param_mean(&mut out, spec.param_floor);
    Ok(out)
}

/// Predict followed by update.
pub fn filter_step<T: Real>(b: &BeliefState<T>, u: &Control<T>, o: &DVector<T>, spec: &PlantSpec<T>) -> Result<BeliefState<T>> {
    update(&predict(b, u, spec)?, u, o, spec)
}

/// True when the estimation error, expressed in the covariance eigenbasis,
/// exceeds five standard deviations along any axis.
pub fn divergence_check<T: Real>(b: &BeliefState<T>, xi_true: &DVector<T>) -> bool {
    let eig = SymmetricEigen::new(symmetrize(&b.cov));
    let rotated = eig.eigenvectors.transpose() * (xi_true - &b.mean);
    let k = lit::<T>(DIVERGENCE_SIGMAS);
    rotated.iter().zip(eig.eigenvalues.iter()).any(|(e, l)| e.abs() > k * l.max(T::zero()).sqrt())
}

/// Trace of the parameter block of the covariance.
pub fn param_trace<T: Real>(b: &BeliefState<T>) -> T {
    (STATE_DIM..HYPER_DIM).fold(T::zero(), |acc, i| acc + b.cov[(i, i)])
}
