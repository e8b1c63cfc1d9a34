use std::fmt;
use std::str::FromStr;

use super::config::{ExperimentConfig, Policy};
use super::trial::{run_trials, TrialRecord};
use crate::bounding::BoundingParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    /// Process noise variance σ²_w.
    Noise,
    /// Parameter floor ℓ.
    Floor,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Noise => "noise",
            Axis::Floor => "floor",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Axis::Noise => "Process noise variance",
            Axis::Floor => "Parameter lower bound",
        }
    }

    /// Sweep values used when none are given.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            Axis::Noise => vec![0.005, 0.01, 0.015, 0.02, 0.025, 0.03],
            Axis::Floor => vec![0.0375, 0.05, 0.0625, 0.075, 0.0875, 0.1],
        }
    }

    /// Copy of `cfg` with this axis set to `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> ExperimentConfig {
        let mut c = cfg.clone();
        match self {
            Axis::Noise => c.spec.process_var = value,
            Axis::Floor => c.spec.param_floor = value,
        }
        c
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(Axis::Noise),
            "floor" => Ok(Axis::Floor),
            _ => Err(Error::Config(format!("unknown sweep axis '{s}'"))),
        }
    }
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub policy: Policy,
    pub axis: Axis,
    pub value: f64,
    pub mean_reward: f64,
    pub sem: f64,
    /// Completed trials entering the statistics.
    pub trials: usize,
    pub oob_frac: f64,
    pub failed: usize,
    pub diverged: usize,
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub point: SweepPoint,
    pub records: Vec<TrialRecord>,
}

/// Sample mean and standard error `s / sqrt(n)`; the error is 0 for n < 2.
pub fn mean_sem(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// `sqrt(a² + b²)` for two independent standard errors.
pub fn pooled_sem(a: f64, b: f64) -> f64 {
    a.hypot(b)
}

/// Aggregates records; aborted trials are counted and left out of the
/// reward statistics.
pub fn summarize(policy: Policy, axis: Axis, value: f64, records: &[TrialRecord], oob_bound: f64) -> SweepPoint {
    let done: Vec<&TrialRecord> = records.iter().filter(|r| r.aborted.is_none()).collect();
    let totals: Vec<f64> = done.iter().map(|r| r.total_reward).collect();
    let (mean_reward, sem) = mean_sem(&totals);
    let steps: usize = done.iter().map(|r| r.steps.len()).sum();
    let outside: usize = done.iter().map(|r| r.out_of_bound_steps(oob_bound)).sum();
    SweepPoint {
        policy,
        axis,
        value,
        mean_reward,
        sem,
        trials: done.len(),
        oob_frac: if steps == 0 { 0.0 } else { outside as f64 / steps as f64 },
        failed: records.len() - done.len(),
        diverged: records.iter().filter(|r| r.diverged()).count(),
    }
}

/// Runs every policy at every value on the same trial seeds.
pub fn sweep(cfg: &ExperimentConfig, axis: Axis, values: &[f64], policies: &[Policy]) -> Result<Vec<SweepCell>> {
    let mut out = Vec::with_capacity(values.len() * policies.len());
    for &value in values {
        for &policy in policies {
            let c = ExperimentConfig { policy, ..axis.apply(cfg, value) };
            let records = run_trials(&c)?;
            let point = summarize(policy, axis, value, &records, cfg.oob_bound);
            log::info!("{policy} {axis}={value}: {:.1} ± {:.1} over {} trials", point.mean_reward, point.sem, point.trials);
            if point.failed > 0 {
                log::warn!("{policy} {axis}={value}: {} trials aborted", point.failed);
            }
            out.push(SweepCell { point, records });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundingRow {
    pub bound: f64,
    /// Percentage of steps whose state norm exceeds `bound`.
    pub pct_outside_plain: f64,
    pub pct_outside_heuristic: f64,
    pub mean_reward_plain: f64,
    pub sem_plain: f64,
    pub mean_reward_heuristic: f64,
    pub sem_heuristic: f64,
    pub failed: usize,
}

fn pct_outside(records: &[TrialRecord], bound: f64) -> f64 {
    let steps: usize = records.iter().map(|r| r.steps.len()).sum();
    let outside: usize = records.iter().map(|r| r.out_of_bound_steps(bound)).sum();
    if steps == 0 { 0.0 } else { 100.0 * outside as f64 / steps as f64 }
}

/// MCTS with and without the action filter at each bound. The plain run is
/// shared by all bounds; the heuristic run uses `filter` with `beta_des` set
/// to the bound.
pub fn bounding_study(cfg: &ExperimentConfig, bounds: &[f64], filter: &BoundingParams<f64>) -> Result<Vec<BoundingRow>> {
    let plain_cfg = ExperimentConfig { policy: Policy::Mcts, bounding: None, ..cfg.clone() };
    let plain = run_trials(&plain_cfg)?;
    let plain_done: Vec<TrialRecord> = plain.iter().filter(|r| r.aborted.is_none()).cloned().collect();
    let (mean_plain, sem_plain) = mean_sem(&plain_done.iter().map(|r| r.total_reward).collect::<Vec<_>>());
    let mut rows = Vec::with_capacity(bounds.len());
    for &bound in bounds {
        let heur_cfg = ExperimentConfig { policy: Policy::Mcts, bounding: Some(BoundingParams { beta_des: bound, ..*filter }), ..cfg.clone() };
        let heur = run_trials(&heur_cfg)?;
        let done: Vec<TrialRecord> = heur.iter().filter(|r| r.aborted.is_none()).cloned().collect();
        let (mean_h, sem_h) = mean_sem(&done.iter().map(|r| r.total_reward).collect::<Vec<_>>());
        let row = BoundingRow {
            bound,
            pct_outside_plain: pct_outside(&plain_done, bound),
            pct_outside_heuristic: pct_outside(&done, bound),
            mean_reward_plain: mean_plain,
            sem_plain,
            mean_reward_heuristic: mean_h,
            sem_heuristic: sem_h,
            failed: (plain.len() - plain_done.len()) + (heur.len() - done.len()),
        };
        log::info!("bound {bound}: outside {:.2}% plain vs {:.2}% heuristic", row.pct_outside_plain, row.pct_outside_heuristic);
        rows.push(row);
    }
    Ok(rows)
}

/// Settings of the bounding study: σ²_w = 0.01, ℓ = 0.1 and 300 tree nodes.
pub fn bounding_study_config(base: &ExperimentConfig) -> ExperimentConfig {
    let mut c = base.clone();
    c.spec.process_var = 0.01;
    c.spec.param_floor = 0.1;
    c.search.node_budget = 300;
    c
}
