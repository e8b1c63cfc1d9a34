//! Planar box-pushing plant: rigid body driven by a force and torque applied
//! at an offset contact point, with unknown mass, friction, inertia and
//! contact offset.

use nalgebra::{DVector, Matrix3, Matrix6, Matrix6x3, SVector, Vector2, Vector3, Vector6};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::std_normal;
use crate::scalar::{lit, Real};

pub const STATE_DIM: usize = 6;
pub const PARAM_DIM: usize = 5;
pub const HYPER_DIM: usize = 11;
pub const OBS_DIM: usize = 9;
pub const CONTROL_DIM: usize = 3;

pub const PARAM_NAMES: [&str; PARAM_DIM] = ["m", "mu_v", "J", "r_bx", "r_by"];

/// Position and velocity of the box's center of mass.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhysState<T: Real> {
    pub p_x: T,
    pub p_y: T,
    pub p_theta: T,
    pub v_x: T,
    pub v_y: T,
    pub v_w: T,
}

impl<T: Real> PhysState<T> {
    pub fn zero() -> Self {
        Self::from_vector(&Vector6::zeros())
    }

    pub fn from_vector(v: &Vector6<T>) -> Self {
        Self { p_x: v[0], p_y: v[1], p_theta: v[2], v_x: v[3], v_y: v[4], v_w: v[5] }
    }

    pub fn to_vector(&self) -> Vector6<T> {
        Vector6::new(self.p_x, self.p_y, self.p_theta, self.v_x, self.v_y, self.v_w)
    }

    /// Euclidean norm of the 6-vector.
    pub fn norm(&self) -> T {
        self.to_vector().norm()
    }
}

/// Unknown dynamics parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamVec<T: Real> {
    pub m: T,
    pub mu_v: T,
    pub j: T,
    pub r_bx: T,
    pub r_by: T,
}

impl<T: Real> ParamVec<T> {
    pub fn ones() -> Self {
        Self::splat(T::one())
    }

    pub fn splat(x: T) -> Self {
        Self { m: x, mu_v: x, j: x, r_bx: x, r_by: x }
    }

    pub fn from_vector(v: &SVector<T, PARAM_DIM>) -> Self {
        Self { m: v[0], mu_v: v[1], j: v[2], r_bx: v[3], r_by: v[4] }
    }

    pub fn to_vector(&self) -> SVector<T, PARAM_DIM> {
        SVector::<T, PARAM_DIM>::from([self.m, self.mu_v, self.j, self.r_bx, self.r_by])
    }

    /// Componentwise `max(·, floor)`.
    pub fn clamped(&self, floor: T) -> Self {
        Self::from_vector(&self.to_vector().map(|x| x.max(floor)))
    }

    pub fn check_floor(&self, floor: T) -> Result<()> {
        for (name, value) in PARAM_NAMES.iter().zip(self.to_vector().iter()) {
            if !(*value >= floor) {
                return Err(Error::FloorViolation { name, value: value.as_f64(), floor: floor.as_f64() });
            }
        }
        Ok(())
    }
}

/// Physical state and parameters stacked as one 11-vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperstate<T: Real> {
    pub state: PhysState<T>,
    pub params: ParamVec<T>,
}

impl<T: Real> Hyperstate<T> {
    pub fn from_slice(v: &[T]) -> Self {
        assert_eq!(v.len(), HYPER_DIM, "hyperstate needs {HYPER_DIM} components");
        Self {
            state: PhysState { p_x: v[0], p_y: v[1], p_theta: v[2], v_x: v[3], v_y: v[4], v_w: v[5] },
            params: ParamVec { m: v[6], mu_v: v[7], j: v[8], r_bx: v[9], r_by: v[10] },
        }
    }

    pub fn to_svector(&self) -> SVector<T, HYPER_DIM> {
        let s = &self.state;
        let p = &self.params;
        SVector::<T, HYPER_DIM>::from([s.p_x, s.p_y, s.p_theta, s.v_x, s.v_y, s.v_w, p.m, p.mu_v, p.j, p.r_bx, p.r_by])
    }

    pub fn to_dvector(&self) -> DVector<T> {
        DVector::from_column_slice(self.to_svector().as_slice())
    }
}

/// Applied force and torque.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Control<T: Real> {
    pub f_x: T,
    pub f_y: T,
    pub torque: T,
}

impl<T: Real> Control<T> {
    pub fn new(f_x: T, f_y: T, torque: T) -> Self {
        Self { f_x, f_y, torque }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn from_vector(v: &Vector3<T>) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_vector(&self) -> Vector3<T> {
        Vector3::new(self.f_x, self.f_y, self.torque)
    }

    /// Componentwise clamp into `[-u_max, u_max]`.
    pub fn clamped(&self, u_max: T) -> Self {
        Self::from_vector(&self.to_vector().map(|x| x.max(-u_max).min(u_max)))
    }

    pub fn within(&self, u_max: T) -> bool {
        self.to_vector().iter().all(|x| x.abs() <= u_max)
    }

    /// Uniform draw from the box `[-u_max, u_max]³`.
    pub fn sample_uniform<R: Rng + ?Sized>(u_max: T, rng: &mut R) -> Self {
        let u = u_max.as_f64();
        let mut draw = || lit::<T>(rng.random_range(-u..=u));
        let (a, b, c) = (draw(), draw(), draw());
        Self::new(a, b, c)
    }
}

/// Physical and noise constants of the task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantSpec<T: Real> {
    pub dt: T,
    pub u_max: T,
    /// Lower bound ℓ on every parameter.
    pub param_floor: T,
    /// Variance of the additive process noise on every hyperstate component.
    pub process_var: T,
    pub meas_var: T,
    pub r_pos: T,
    pub r_vel: T,
    pub r_u: T,
    pub horizon_steps: usize,
    /// Multiplier on the process variance assumed by the filter.
    pub filter_inflation: T,
}

impl<T: Real> Default for PlantSpec<T> {
    fn default() -> Self {
        Self {
            dt: lit(0.1),
            u_max: lit(5.0),
            param_floor: lit(0.0625),
            process_var: lit(0.01),
            meas_var: T::zero(),
            r_pos: lit(-2.5),
            r_vel: lit(-50.0),
            r_u: lit(-0.3),
            horizon_steps: 50,
            filter_inflation: T::one(),
        }
    }
}

/// Floor on the measurement variance assumed by the filter.
pub const FILTER_MEAS_FLOOR: f64 = 1e-6;

impl<T: Real> PlantSpec<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: T| Err(Error::Config(format!("{what} = {v} is out of range")));
        if !(self.dt > T::zero()) {
            return bad("dt", self.dt);
        }
        if !(self.u_max > T::zero()) {
            return bad("u_max", self.u_max);
        }
        if !(self.param_floor > T::zero()) {
            return bad("param_floor", self.param_floor);
        }
        if !(self.process_var >= T::zero()) {
            return bad("process_var", self.process_var);
        }
        if !(self.meas_var >= T::zero()) {
            return bad("meas_var", self.meas_var);
        }
        if !(self.filter_inflation >= T::one()) {
            return bad("filter_inflation", self.filter_inflation);
        }
        if self.r_pos > T::zero() || self.r_vel > T::zero() || self.r_u > T::zero() {
            return Err(Error::Config("reward weights must be non-positive".into()));
        }
        if self.horizon_steps == 0 {
            return Err(Error::Config("horizon_steps must be at least 1".into()));
        }
        Ok(())
    }

    /// Process variance used by the filter.
    pub fn filter_process_var(&self) -> T {
        self.process_var * self.filter_inflation
    }

    /// Measurement variance used by the filter.
    pub fn filter_meas_var(&self) -> T {
        self.meas_var.max(lit(FILTER_MEAS_FLOOR))
    }
}

/// Contact offset in the world frame.
#[inline]
fn contact_offset<T: Real>(p_theta: T, params: &ParamVec<T>) -> Vector2<T> {
    let (s, c) = p_theta.sin_cos();
    Vector2::new(c * params.r_bx - s * params.r_by, s * params.r_bx + c * params.r_by)
}

/// Torque coupling coefficients `(c1, c2)` of the contact force.
#[inline]
fn torque_coupling<T: Real>(p_theta: T, params: &ParamVec<T>) -> (T, T) {
    let (s, c) = p_theta.sin_cos();
    (c * params.r_by + s * params.r_bx, c * params.r_bx - s * params.r_by)
}

/// Net body force after friction, `F - mu_v v`.
#[inline]
fn body_force<T: Real>(xi: &Hyperstate<T>, u: &Control<T>) -> Vector2<T> {
    Vector2::new(u.f_x - xi.params.mu_v * xi.state.v_x, u.f_y - xi.params.mu_v * xi.state.v_y)
}

/// Linear and angular accelerations `(a_x, a_y, a_alpha)`.
pub fn accelerations<T: Real>(xi: &Hyperstate<T>, u: &Control<T>) -> Vector3<T> {
    let p = &xi.params;
    let f = body_force(xi, u);
    let (c1, c2) = torque_coupling(xi.state.p_theta, p);
    Vector3::new(f.x / p.m, f.y / p.m, (u.torque + c1 * f.x + c2 * f.y) / p.j)
}

/// One Euler step of the physics with parameters held fixed.
pub fn step_physics<T: Real>(xi: &Hyperstate<T>, u: &Control<T>, dt: T) -> PhysState<T> {
    let a = accelerations(xi, u);
    let s = &xi.state;
    PhysState {
        p_x: s.p_x + s.v_x * dt,
        p_y: s.p_y + s.v_y * dt,
        p_theta: s.p_theta + s.v_w * dt,
        v_x: s.v_x + a[0] * dt,
        v_y: s.v_y + a[1] * dt,
        v_w: s.v_w + a[2] * dt,
    }
}

/// Noise-free hyperstate transition: physics step, parameters clamped at
/// the floor.
pub fn step_deterministic<T: Real>(xi: &Hyperstate<T>, u: &Control<T>, spec: &PlantSpec<T>) -> Hyperstate<T> {
    Hyperstate { state: step_physics(xi, u, spec.dt), params: xi.params.clamped(spec.param_floor) }
}

/// True plant transition with additive process noise on all eleven
/// components, followed by the parameter clamp.
pub fn step_truth<T: Real, R: Rng + ?Sized>(xi: &Hyperstate<T>, u: &Control<T>, spec: &PlantSpec<T>, rng: &mut R) -> Hyperstate<T> {
    let sigma = spec.process_var.sqrt();
    let mut next = Hyperstate { state: step_physics(xi, u, spec.dt), params: xi.params }.to_svector();
    for x in next.iter_mut() {
        *x += sigma * std_normal::<T, R>(rng);
    }
    let mut out = Hyperstate::from_slice(next.as_slice());
    out.params = out.params.clamped(spec.param_floor);
    out
}

/// Noise-free 9-dimensional measurement: contact-point position, angle,
/// contact-point velocity, angular rate, contact-point acceleration and
/// angular acceleration.
pub fn observe_clean<T: Real>(xi: &Hyperstate<T>, u: &Control<T>) -> SVector<T, OBS_DIM> {
    let s = &xi.state;
    let p = &xi.params;
    let r = contact_offset(s.p_theta, p);
    let perp = Vector2::new(-r.y, r.x);
    let f = body_force(xi, u);
    let a = accelerations(xi, u);
    let alpha = a[2];
    let w2 = s.v_w * s.v_w;
    SVector::<T, OBS_DIM>::from([
        s.p_x + r.x,
        s.p_y + r.y,
        s.p_theta,
        s.v_x + s.v_w * perp.x,
        s.v_y + s.v_w * perp.y,
        s.v_w,
        f.x / p.m + alpha * perp.x - w2 * r.x,
        f.y / p.m + alpha * perp.y - w2 * r.y,
        alpha,
    ])
}

/// Measurement with additive noise of variance `spec.meas_var`.
pub fn observe<T: Real, R: Rng + ?Sized>(xi: &Hyperstate<T>, u: &Control<T>, spec: &PlantSpec<T>, rng: &mut R) -> SVector<T, OBS_DIM> {
    let mut o = observe_clean(xi, u);
    if spec.meas_var > T::zero() {
        let sigma = spec.meas_var.sqrt();
        for x in o.iter_mut() {
            *x += sigma * std_normal::<T, R>(rng);
        }
    }
    o
}

/// Weighted L1 stage reward (non-positive).
pub fn reward<T: Real>(x: &PhysState<T>, u: &Control<T>, spec: &PlantSpec<T>) -> T {
    let pos = x.p_x.abs() + x.p_y.abs() + x.p_theta.abs();
    let vel = x.v_x.abs() + x.v_y.abs() + x.v_w.abs();
    let eff = u.f_x.abs() + u.f_y.abs() + u.torque.abs();
    spec.r_pos * pos + spec.r_vel * vel + spec.r_u * eff
}

/// State-space matrices `(A, B)` of the physics step with parameters and
/// orientation frozen. The step is affine in `(x, u)` under that freeze, with
/// zero offset, so evaluating it on basis vectors recovers it exactly.
pub fn linearize<T: Real>(theta_hat: &ParamVec<T>, p_theta_hat: T, spec: &PlantSpec<T>) -> Result<(Matrix6<T>, Matrix6x3<T>)> {
    theta_hat.check_floor(spec.param_floor)?;
    let dt = spec.dt;
    let (c1, c2) = torque_coupling(p_theta_hat, theta_hat);
    let inv_m = T::one() / theta_hat.m;
    let inv_j = T::one() / theta_hat.j;
    let mu = theta_hat.mu_v;

    let mut a = Matrix6::<T>::identity();
    for i in 0..3 {
        a[(i, i + 3)] = dt;
    }
    a[(3, 3)] = T::one() - mu * dt * inv_m;
    a[(4, 4)] = T::one() - mu * dt * inv_m;
    a[(5, 3)] = -c1 * mu * dt * inv_j;
    a[(5, 4)] = -c2 * mu * dt * inv_j;

    let mut b = Matrix6x3::<T>::zeros();
    let lower = Matrix3::new(dt * inv_m, T::zero(), T::zero(), T::zero(), dt * inv_m, T::zero(), c1 * dt * inv_j, c2 * dt * inv_j, dt * inv_j);
    b.fixed_view_mut::<3, 3>(3, 0).copy_from(&lower);
    Ok((a, b))
}
