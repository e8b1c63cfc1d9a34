//! Simultaneous estimation and control of input-constrained systems with
//! unknown, time-varying parameters.
//!
//! The numerical modules are generic over the scalar type ([`scalar::Real`],
//! implemented for `f32` and `f64`). The aliases at the crate root fix the
//! scalar to `f64`, which is what the simulation harness uses.

// `!(x > 0)` style range checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod belief_mdp;
pub mod bounding;
pub mod cross_entropy;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod lp;
pub mod mpc;
pub mod planner;
pub mod plant;
pub mod scalar;
pub mod ukf;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Gaussian = gaussian::Gaussian<f64>;
pub type Ellipsoid = gaussian::Ellipsoid<f64>;
pub type SigmaPointSet = gaussian::SigmaPointSet<f64>;
pub type PhysState = plant::PhysState<f64>;
pub type ParamVec = plant::ParamVec<f64>;
pub type Hyperstate = plant::Hyperstate<f64>;
pub type Control = plant::Control<f64>;
pub type PlantSpec = plant::PlantSpec<f64>;
pub type BeliefState = ukf::BeliefState<f64>;
pub type MpcParams = mpc::MpcParams<f64>;
