use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, Policy};
use crate::error::Result;
use crate::gaussian::{std_normal, Gaussian};
use crate::mpc::{self, cautious_inflation_hook};
use crate::planner;
use crate::plant::{observe, reward, step_truth, Control, Hyperstate, PlantSpec, HYPER_DIM, PARAM_DIM, STATE_DIM};
use crate::ukf::{divergence_check, filter_step, param_trace, BeliefState};

/// Mean and variance of every component of the initial hyperstate.
pub const INIT_MEAN: f64 = 1.0;
pub const INIT_VAR: f64 = 0.5;
/// Initial belief variance of the physical-state block.
pub const INIT_STATE_BELIEF_VAR: f64 = 1e-4;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `trial` under experiment seed `seed`.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed ^ splitmix64(trial as u64)
}

/// Environment and policy streams of one trial. The environment stream is
/// shared by every policy run on the same trial seed.
pub fn trial_streams(trial_seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let env = ChaCha8Rng::seed_from_u64(trial_seed);
    let mut policy = ChaCha8Rng::seed_from_u64(trial_seed);
    policy.set_stream(1);
    (env, policy)
}

/// Draws the true initial hyperstate i.i.d. `N(1, 0.5)` (parameters clamped
/// at the floor) and the matching prior belief: the state block centred on
/// the truth with variance 1e-4, the parameter block `N(1₅, 0.5·I)`.
pub fn init_trial<R: Rng + ?Sized>(spec: &PlantSpec<f64>, rng: &mut R) -> (Hyperstate<f64>, BeliefState<f64>) {
    let sd = INIT_VAR.sqrt();
    let draws: Vec<f64> = (0..HYPER_DIM).map(|_| INIT_MEAN + sd * std_normal::<f64, R>(rng)).collect();
    let mut xi = Hyperstate::from_slice(&draws);
    xi.params = xi.params.clamped(spec.param_floor);

    let mut mean = DVector::from_element(HYPER_DIM, INIT_MEAN);
    mean.rows_mut(0, STATE_DIM).copy_from(&DVector::from_row_slice(&xi.state.to_vector().as_slice()[..STATE_DIM]));
    let mut cov = DMatrix::zeros(HYPER_DIM, HYPER_DIM);
    for i in 0..HYPER_DIM {
        cov[(i, i)] = if i < STATE_DIM { INIT_STATE_BELIEF_VAR } else { INIT_VAR };
    }
    (xi, Gaussian::new_unchecked(mean, cov))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// True hyperstate after the step.
    pub truth: Hyperstate<f64>,
    /// Posterior belief mean after the measurement update.
    pub belief_mean: Hyperstate<f64>,
    pub cov_trace: f64,
    pub param_cov_trace: f64,
    pub action: Control<f64>,
    /// Reward of the action at the pre-step state.
    pub reward: f64,
    /// Norm of the physical state after the step.
    pub state_norm: f64,
    /// Mean absolute parameter error after the update.
    pub param_mae: f64,
    pub diverged: bool,
    /// The controller fell back to zero or the planner had nothing to expand.
    pub policy_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub policy: Policy,
    pub trial: usize,
    pub seed: u64,
    pub initial_truth: Hyperstate<f64>,
    pub initial_param_mae: f64,
    pub steps: Vec<StepRecord>,
    /// Undiscounted sum of the step rewards.
    pub total_reward: f64,
    /// Set when a filter failure ended the trial early.
    pub aborted: Option<String>,
}

impl TrialRecord {
    pub fn diverged(&self) -> bool {
        self.steps.iter().any(|s| s.diverged)
    }

    pub fn divergence_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.diverged).count()
    }

    pub fn out_of_bound_steps(&self, bound: f64) -> usize {
        self.steps.iter().filter(|s| s.state_norm > bound).count()
    }

    pub fn param_mae_series(&self) -> Vec<f64> {
        std::iter::once(self.initial_param_mae).chain(self.steps.iter().map(|s| s.param_mae)).collect()
    }
}

fn param_mae(truth: &Hyperstate<f64>, mean: &Hyperstate<f64>) -> f64 {
    (truth.params.to_vector() - mean.params.to_vector()).abs().sum() / PARAM_DIM as f64
}

/// Runs trial `trial` of `cfg` under `cfg.policy`.
pub fn run_trial(cfg: &ExperimentConfig, trial: usize) -> TrialRecord {
    run_trial_seeded(cfg, trial, trial_seed(cfg.seed, trial))
}

/// Closed loop: act on the belief, step the true plant, measure, filter.
pub fn run_trial_seeded(cfg: &ExperimentConfig, trial: usize, seed: u64) -> TrialRecord {
    let spec = cfg.spec;
    let (mut env, mut policy_rng) = trial_streams(seed);
    let (mut xi, mut b) = init_trial(&spec, &mut env);
    let filter_spec = match cfg.policy {
        Policy::MpcCautious => cautious_inflation_hook(&spec, cfg.mpc.cautious_inflation).unwrap_or(spec),
        _ => spec,
    };
    let search = cfg.search_for(cfg.policy);
    let mut record = TrialRecord {
        policy: cfg.policy,
        trial,
        seed,
        initial_truth: xi,
        initial_param_mae: param_mae(&xi, &Hyperstate::from_slice(b.mean.as_slice())),
        steps: Vec::with_capacity(cfg.steps()),
        total_reward: 0.0,
        aborted: None,
    };

    for k in 0..cfg.steps() {
        let (u, policy_fallback) = act(cfg, &search, &xi, &b, &mut policy_rng);
        let r = reward(&xi.state, &u, &spec);
        let next = step_truth(&xi, &u, &spec, &mut env);
        let o = observe(&next, &u, &spec, &mut env);
        let nb = match filter_step(&b, &u, &DVector::from_column_slice(o.as_slice()), &filter_spec) {
            Ok(nb) => nb,
            Err(e) => {
                log::warn!("trial {trial} ({}) aborted at step {k}: {e}", cfg.policy);
                record.aborted = Some(format!("step {k}: {e}"));
                break;
            }
        };
        let mean = Hyperstate::from_slice(nb.mean.as_slice());
        record.steps.push(StepRecord {
            truth: next,
            belief_mean: mean,
            cov_trace: nb.cov.trace(),
            param_cov_trace: param_trace(&nb),
            action: u,
            reward: r,
            state_norm: next.state.norm(),
            param_mae: param_mae(&next, &mean),
            diverged: divergence_check(&nb, &next.to_dvector()),
            policy_fallback,
        });
        record.total_reward += r;
        xi = next;
        b = nb;
    }
    record
}

fn act(cfg: &ExperimentConfig, search: &planner::SearchParams<f64>, xi: &Hyperstate<f64>, b: &BeliefState<f64>, rng: &mut ChaCha8Rng) -> (Control<f64>, bool) {
    let spec = &cfg.spec;
    match cfg.policy {
        Policy::Mcts | Policy::QmdpTs => {
            let out = planner::plan(b, search, spec, rng);
            (out.action, out.warning)
        }
        Policy::Mpc | Policy::MpcCautious => {
            let mut mean = Hyperstate::from_slice(b.mean.as_slice());
            mean.params = mean.params.clamped(spec.param_floor);
            let p = mpc::plan(&mean.state, &mean.params, &cfg.mpc, spec);
            (p.first(), p.failed)
        }
        Policy::MpcOracle => {
            let p = mpc::oracle_policy(xi, &cfg.mpc, spec);
            (p.first(), p.failed)
        }
    }
}

/// Runs trials `0..cfg.trials` in parallel; the output order is by trial.
pub fn run_trials(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    use rayon::prelude::*;
    cfg.validate()?;
    Ok((0..cfg.trials).into_par_iter().map(|t| run_trial(cfg, t)).collect())
}
