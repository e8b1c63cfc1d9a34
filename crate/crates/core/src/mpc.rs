//! Certainty-equivalent receding-horizon control with an L1 stage cost.
//!
//! Dynamics are frozen at the current parameter and orientation estimate,
//! states are eliminated as affine functions of the inputs, and the
//! resulting weighted L1 problem is solved exactly by [`crate::lp`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lp::{solve_l1, L1Problem, L1Solution};
use crate::plant::{linearize, Control, Hyperstate, ParamVec, PhysState, PlantSpec, CONTROL_DIM, STATE_DIM};
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpcVariant {
    /// Plans with the filter's parameter estimate.
    Standard,
    /// Plans with the true parameters and state.
    Oracle,
    /// Standard planning on a filter with inflated process noise.
    Cautious,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcParams<T: Real> {
    pub horizon: usize,
    pub lp_tolerance: T,
    pub variant: MpcVariant,
    pub cautious_inflation: T,
}

impl<T: Real> Default for MpcParams<T> {
    fn default() -> Self {
        Self { horizon: 12, lp_tolerance: lit(1e-7), variant: MpcVariant::Standard, cautious_inflation: lit(4.0) }
    }
}

/// Optimal open-loop input sequence.
#[derive(Debug, Clone)]
pub struct MpcSolution<T: Real> {
    pub controls: Vec<Control<T>>,
    /// Predicted reward of the sequence, the negated LP objective.
    pub predicted_reward: T,
    pub lp: L1Solution<T>,
}

/// Input sequence returned to callers; all zeros with `failed` set when the
/// program could not be solved.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcPlan<T: Real> {
    pub controls: Vec<Control<T>>,
    pub failed: bool,
}

impl<T: Real> MpcPlan<T> {
    pub fn first(&self) -> Control<T> {
        self.controls.first().copied().unwrap_or_else(Control::zero)
    }
}

/// Condensed L1 program for `x_{k+1} = A x_k + B u_k` over `horizon` steps:
///
/// ```text
/// minimise Σ_{k=0}^{H-1} Σ_j sw_j |x_{k+1,j}| + uw Σ_i |u_{k,i}|,  |u| ≤ u_max
/// ```
///
/// Rows are ordered per step: state rows, then input rows.
pub fn condensed_problem<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    x0: &DVector<T>,
    state_weights: &DVector<T>,
    input_weight: T,
    u_max: T,
    horizon: usize,
) -> L1Problem<T> {
    let nx = a.nrows();
    let nu = b.ncols();
    let rows_per = nx + nu;
    let n = nu * horizon;
    let m = rows_per * horizon;

    // powers A^j B for j < H
    let mut ab = Vec::with_capacity(horizon);
    let mut cur = b.clone();
    for _ in 0..horizon {
        ab.push(cur.clone());
        cur = a * cur;
    }

    let mut mat = DMatrix::<T>::zeros(m, n);
    let mut c = DVector::<T>::zeros(m);
    let mut w = DVector::<T>::zeros(m);
    let mut free = x0.clone();
    for k in 0..horizon {
        free = a * free;
        let r0 = k * rows_per;
        for i in 0..=k {
            mat.view_mut((r0, i * nu), (nx, nu)).copy_from(&ab[k - i]);
        }
        c.rows_mut(r0, nx).copy_from(&free);
        w.rows_mut(r0, nx).copy_from(state_weights);
        for j in 0..nu {
            mat[(r0 + nx + j, k * nu + j)] = T::one();
            w[r0 + nx + j] = input_weight;
        }
    }
    L1Problem { a: mat, c, w, lo: DVector::from_element(n, -u_max), hi: DVector::from_element(n, u_max) }
}

/// Builds the program for the box-pushing plant from a state estimate and
/// parameter estimate.
pub fn build_problem<T: Real>(x_hat: &PhysState<T>, theta_hat: &ParamVec<T>, horizon: usize, spec: &PlantSpec<T>) -> Result<L1Problem<T>> {
    if horizon == 0 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    let (a, b) = linearize(theta_hat, x_hat.p_theta, spec)?;
    let a = DMatrix::from_column_slice(STATE_DIM, STATE_DIM, a.as_slice());
    let b = DMatrix::from_column_slice(STATE_DIM, CONTROL_DIM, b.as_slice());
    let x0 = DVector::from_column_slice(x_hat.to_vector().as_slice());
    let sw = DVector::from_fn(STATE_DIM, |i, _| if i < 3 { -spec.r_pos } else { -spec.r_vel });
    Ok(condensed_problem(&a, &b, &x0, &sw, -spec.r_u, spec.u_max, horizon))
}

/// Solves the horizon-`H` program and returns the optimal inputs.
pub fn solve<T: Real>(x_hat: &PhysState<T>, theta_hat: &ParamVec<T>, params: &MpcParams<T>, spec: &PlantSpec<T>) -> Result<MpcSolution<T>> {
    let problem = build_problem(x_hat, theta_hat, params.horizon, spec)?;
    let lp = solve_l1(&problem, params.lp_tolerance)?;
    let controls = (0..params.horizon)
        .map(|k| Control::new(lp.u[3 * k], lp.u[3 * k + 1], lp.u[3 * k + 2]).clamped(spec.u_max))
        .collect();
    Ok(MpcSolution { controls, predicted_reward: -lp.objective, lp })
}

/// [`solve`] with the zero-input fallback on failure.
pub fn plan<T: Real>(x_hat: &PhysState<T>, theta_hat: &ParamVec<T>, params: &MpcParams<T>, spec: &PlantSpec<T>) -> MpcPlan<T> {
    match solve(x_hat, theta_hat, params, spec) {
        Ok(sol) => MpcPlan { controls: sol.controls, failed: false },
        Err(e) => {
            log::debug!("mpc fallback: {e}");
            MpcPlan { controls: vec![Control::zero(); params.horizon], failed: true }
        }
    }
}

/// First action of the plan computed from the true hyperstate.
pub fn oracle_policy<T: Real>(xi_true: &Hyperstate<T>, params: &MpcParams<T>, spec: &PlantSpec<T>) -> MpcPlan<T> {
    plan(&xi_true.state, &xi_true.params, params, spec)
}

/// Copy of `spec` whose filter assumes `factor` times the process variance.
/// The truth model is unchanged.
pub fn cautious_inflation_hook<T: Real>(spec: &PlantSpec<T>, factor: T) -> Result<PlantSpec<T>> {
    if !(factor >= T::one()) {
        return Err(Error::Domain(format!("inflation factor {factor} below 1")));
    }
    Ok(PlantSpec { filter_inflation: spec.filter_inflation * factor, ..*spec })
}
