//! Closed-loop experiments: trial initialisation, the estimation and control
//! loop, sweeps under common random numbers, the bounding study, planner
//! tuning, and CSV/SVG output.

pub mod config;
pub mod output;
pub mod sweep;
pub mod trial;

pub use config::{ConfigFile, ExperimentConfig, Policy, Preset};
pub use sweep::{bounding_study, bounding_study_config, mean_sem, pooled_sem, summarize, sweep, Axis, BoundingRow, SweepCell, SweepPoint};
pub use trial::{init_trial, run_trial, run_trial_seeded, run_trials, trial_seed, StepRecord, TrialRecord};

use rand::Rng;

use crate::cross_entropy::{optimize, CeResult, CE_DIM};
use crate::error::Result;

/// Search parameters with `[k_action, k_state, depth, explore_c]` taken from `v`.
pub fn with_hyperparameters(cfg: &ExperimentConfig, v: &[i64; CE_DIM]) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.search.k_action = v[0] as f64;
    c.search.k_state = v[1] as f64;
    c.search.depth = v[2].max(1) as usize;
    c.search.explore_c = v[3] as f64;
    c
}

/// Mean total reward of `cfg.ce.trials_per_sample` closed-loop trials under
/// the tree-search policy with hyperparameters `v`. Every candidate sees the
/// same trial seeds; an aborted trial makes the objective `-inf`.
pub fn tuning_objective(cfg: &ExperimentConfig, v: &[i64; CE_DIM]) -> f64 {
    let c = with_hyperparameters(cfg, v);
    let mut total = 0.0;
    for t in 0..cfg.ce.trials_per_sample {
        let r = run_trial(&c, t);
        if r.aborted.is_some() {
            return f64::NEG_INFINITY;
        }
        total += r.total_reward;
    }
    total / cfg.ce.trials_per_sample as f64
}

/// Cross-entropy tuning of the search hyperparameters at σ²_w = 0.01.
pub fn tune<R: Rng + ?Sized>(cfg: &ExperimentConfig, rng: &mut R) -> Result<CeResult<f64>> {
    let mut c = cfg.clone();
    c.spec.process_var = 0.01;
    if !c.policy.is_tree_search() {
        c.policy = Policy::Mcts;
    }
    c.validate()?;
    optimize(|v| tuning_objective(&c, v), &c.ce, rng)
}
