//! Cross-entropy search over the four integer search hyperparameters
//! `[k_action, k_state, depth, explore_c]`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{sample_mvn, symmetrize, Gaussian};
use crate::scalar::{count, lit, Real};

pub const CE_DIM: usize = 4;

/// Ridge added to the refit covariance.
pub const CE_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CeConfig<T: Real> {
    pub init_mean: [T; CE_DIM],
    /// Diagonal of the initial covariance.
    pub init_var: [T; CE_DIM],
    pub population: usize,
    pub elites: usize,
    pub max_iters: usize,
    pub eig_threshold: T,
    /// Closed-loop trials averaged per objective evaluation when tuning the planner.
    pub trials_per_sample: usize,
}

impl<T: Real> Default for CeConfig<T> {
    fn default() -> Self {
        Self {
            init_mean: [lit(20.0), lit(20.0), lit(10.0), lit(20.0)],
            init_var: [lit(64.0), lit(64.0), lit(16.0), lit(81.0)],
            population: 50,
            elites: 10,
            max_iters: 25,
            eig_threshold: lit(3.0),
            trials_per_sample: 5,
        }
    }
}

impl<T: Real> CeConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 || self.elites == 0 || self.max_iters == 0 || self.trials_per_sample == 0 {
            return Err(Error::Config("cross-entropy counts must be at least 1".into()));
        }
        if self.elites > self.population {
            return Err(Error::Config(format!("elites = {} exceeds population = {}", self.elites, self.population)));
        }
        if self.init_var.iter().any(|v| !(*v >= T::zero())) {
            return Err(Error::Config("initial variances must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Rounds half away from zero and enforces a minimum of 1.
pub fn integerize<T: Real>(v: &[T; CE_DIM]) -> [i64; CE_DIM] {
    v.map(|x| x.round().to_i64().unwrap_or(1).max(1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CeIteration<T: Real> {
    pub iteration: usize,
    /// Best objective found so far, over all iterations.
    pub best: T,
    /// Best objective in this iteration's population.
    pub iter_best: T,
    /// Population mean objective.
    pub mean: T,
    /// Largest eigenvalue of the refit covariance.
    pub eig_max: T,
    pub dist_mean: [T; CE_DIM],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CeResult<T: Real> {
    pub mean: [T; CE_DIM],
    pub cov: DMatrix<T>,
    pub best_sample: [i64; CE_DIM],
    pub history: Vec<CeIteration<T>>,
    /// True when the eigenvalue threshold ended the run.
    pub converged: bool,
}

/// Maximises `objective` over integer 4-vectors. Samples are drawn serially
/// from `rng`; evaluations run in parallel. Non-finite objective values are
/// treated as `-inf`.
pub fn optimize<T, F, R>(objective: F, cfg: &CeConfig<T>, rng: &mut R) -> Result<CeResult<T>>
where
    T: Real,
    F: Fn(&[i64; CE_DIM]) -> T + Sync,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let mut dist = Gaussian::new(DVector::from_row_slice(&cfg.init_mean), DMatrix::from_diagonal(&DVector::from_row_slice(&cfg.init_var)))?;
    let mut history = Vec::with_capacity(cfg.max_iters);
    let mut best = lit(f64::NEG_INFINITY);
    let mut best_sample = integerize(&cfg.init_mean);
    let mut have_best = false;
    let mut converged = false;

    for iteration in 0..cfg.max_iters {
        let raw: Vec<[T; CE_DIM]> = (0..cfg.population).map(|_| sample_mvn(&dist, rng).map(|x| [x[0], x[1], x[2], x[3]])).collect::<Result<_>>()?;
        let samples: Vec<[i64; CE_DIM]> = raw.iter().map(integerize).collect();
        let values: Vec<T> = samples
            .par_iter()
            .map(|s| {
                let v = objective(s);
                if v.is_finite() { v } else { lit(f64::NEG_INFINITY) }
            })
            .collect();

        let mut order: Vec<usize> = (0..samples.len()).collect();
        // stable: equal objectives keep sample order
        order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(std::cmp::Ordering::Equal));
        let elites: Vec<usize> = order[..cfg.elites].to_vec();

        let iter_best = values[elites[0]];
        if !have_best || iter_best > best {
            best = iter_best;
            best_sample = samples[elites[0]];
            have_best = true;
        }
        let pop_mean = values.iter().fold(T::zero(), |a, v| a + *v) / count(values.len());

        let (mean, cov) = elite_moments(&raw, &elites);
        let eig_max = SymmetricEigen::new(cov.clone()).eigenvalues.max();
        dist = Gaussian::new_unchecked(mean, cov);
        let dist_mean = [dist.mean[0], dist.mean[1], dist.mean[2], dist.mean[3]];
        history.push(CeIteration { iteration, best, iter_best, mean: pop_mean, eig_max, dist_mean });
        log::debug!("ce iteration {iteration}: best {best}, mean {pop_mean}, eig_max {eig_max}");
        if eig_max < cfg.eig_threshold {
            converged = true;
            break;
        }
    }
    Ok(CeResult { mean: [dist.mean[0], dist.mean[1], dist.mean[2], dist.mean[3]], cov: dist.cov, best_sample, history, converged })
}

/// Maximum-likelihood mean and covariance of the selected samples, plus ridge.
pub fn elite_moments<T: Real>(samples: &[[T; CE_DIM]], elites: &[usize]) -> (DVector<T>, DMatrix<T>) {
    let n: T = count(elites.len());
    let to_vec = |s: &[T; CE_DIM]| DVector::from_row_slice(s);
    let mut mean = DVector::zeros(CE_DIM);
    for &i in elites {
        mean += to_vec(&samples[i]);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(CE_DIM, CE_DIM);
    for &i in elites {
        let d = to_vec(&samples[i]) - &mean;
        cov += &d * d.transpose();
    }
    cov /= n;
    for k in 0..CE_DIM {
        cov[(k, k)] += lit(CE_RIDGE);
    }
    (mean, symmetrize(&cov))
}
