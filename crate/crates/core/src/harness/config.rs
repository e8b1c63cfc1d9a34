use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use crate::bounding::BoundingParams;
use crate::cross_entropy::CeConfig;
use crate::error::{Error, Result};
use crate::mpc::MpcParams;
use crate::planner::{SearchMode, SearchParams};
use crate::plant::PlantSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Policy {
    Mcts,
    QmdpTs,
    Mpc,
    MpcCautious,
    MpcOracle,
}

impl Policy {
    pub const ALL: [Policy; 5] = [Policy::Mcts, Policy::QmdpTs, Policy::Mpc, Policy::MpcCautious, Policy::MpcOracle];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Mcts => "mcts",
            Policy::QmdpTs => "qmdp-ts",
            Policy::Mpc => "mpc",
            Policy::MpcCautious => "mpc-cautious",
            Policy::MpcOracle => "mpc-oracle",
        }
    }

    pub fn is_tree_search(self) -> bool {
        matches!(self, Policy::Mcts | Policy::QmdpTs)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s) || p.name().replace('-', "_").eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown policy '{s}' (expected one of mcts, qmdp-ts, mpc, mpc-cautious, mpc-oracle)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 20 trials, 600 tree nodes, 5 trials per CE sample.
    Desk,
    /// 100 trials, 3000 tree nodes.
    PaperFull,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper-full" => Ok(Preset::PaperFull),
            _ => Err(Error::Config(format!("unknown preset '{s}' (expected desk or paper-full)"))),
        }
    }
}

/// Everything a closed-loop experiment needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub policy: Policy,
    pub trials: usize,
    pub seed: u64,
    /// Plant constants; `spec.horizon_steps` is the number of closed-loop steps.
    pub spec: PlantSpec<f64>,
    pub search: SearchParams<f64>,
    pub mpc: MpcParams<f64>,
    /// Action filter applied to tree-search policies when set.
    pub bounding: Option<BoundingParams<f64>>,
    /// State-norm bound used for the out-of-bounds fraction in summaries.
    pub oob_bound: f64,
    pub ce: CeConfig<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

impl ExperimentConfig {
    pub fn preset(p: Preset) -> Self {
        let (trials, budget) = match p {
            Preset::Desk => (20, 600),
            Preset::PaperFull => (100, 3000),
        };
        Self {
            policy: Policy::Mcts,
            trials,
            seed: 0,
            spec: PlantSpec::default(),
            search: SearchParams { node_budget: budget, ..Default::default() },
            mpc: MpcParams::default(),
            bounding: None,
            oob_bound: 6.0,
            ce: CeConfig { trials_per_sample: 5, ..Default::default() },
        }
    }

    pub fn steps(&self) -> usize {
        self.spec.horizon_steps
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.search.validate()?;
        self.ce.validate()?;
        if let Some(b) = &self.bounding {
            b.validate()?;
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.mpc.horizon == 0 {
            return Err(Error::Config("MPC horizon must be at least 1".into()));
        }
        if !(self.mpc.cautious_inflation >= 1.0) {
            return Err(Error::Config(format!("cautious_inflation = {} must be at least 1", self.mpc.cautious_inflation)));
        }
        Ok(())
    }

    /// Search parameters used by `policy` in closed loop.
    pub fn search_for(&self, policy: Policy) -> SearchParams<f64> {
        let mode = if policy == Policy::QmdpTs { SearchMode::QmdpTs } else { SearchMode::Mcts };
        SearchParams { mode, action_filter: self.bounding, mpc: self.mpc, ..self.search }
    }

    /// Applies every key present in `file`.
    pub fn apply(&mut self, file: &ConfigFile) -> Result<()> {
        macro_rules! set {
            ($($key:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = file.$key { $target = v; })*
            };
        }
        set! {
            trials => self.trials,
            seed => self.seed,
            dt => self.spec.dt,
            u_max => self.spec.u_max,
            param_floor => self.spec.param_floor,
            process_var => self.spec.process_var,
            meas_var => self.spec.meas_var,
            r_pos => self.spec.r_pos,
            r_vel => self.spec.r_vel,
            r_u => self.spec.r_u,
            steps => self.spec.horizon_steps,
            filter_inflation => self.spec.filter_inflation,
            k_action => self.search.k_action,
            k_state => self.search.k_state,
            dpw_exponent => self.search.dpw_exponent,
            depth => self.search.depth,
            explore_c => self.search.explore_c,
            node_budget => self.search.node_budget,
            epsilon_mpc => self.search.epsilon_mpc,
            discount => self.search.discount,
            horizon => self.mpc.horizon,
            lp_tolerance => self.mpc.lp_tolerance,
            cautious_inflation => self.mpc.cautious_inflation,
            oob_bound => self.oob_bound,
            ce_population => self.ce.population,
            ce_elites => self.ce.elites,
            ce_max_iters => self.ce.max_iters,
            ce_eig_threshold => self.ce.eig_threshold,
            ce_trials_per_sample => self.ce.trials_per_sample,
        }
        if let Some(p) = &file.policy {
            self.policy = p.parse()?;
        }
        if file.beta_des.is_some() || file.alpha.is_some() || file.n_u.is_some() || file.n_b.is_some() {
            let mut b = self.bounding.unwrap_or_default();
            set! { beta_des => b.beta_des, alpha => b.alpha, n_u => b.n_u, n_b => b.n_b }
            self.bounding = Some(b);
        }
        self.validate()
    }
}

/// Optional overrides read from a TOML file of flat `key = value` pairs.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub policy: Option<String>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub dt: Option<f64>,
    pub u_max: Option<f64>,
    pub param_floor: Option<f64>,
    pub process_var: Option<f64>,
    pub meas_var: Option<f64>,
    pub r_pos: Option<f64>,
    pub r_vel: Option<f64>,
    pub r_u: Option<f64>,
    pub filter_inflation: Option<f64>,
    pub k_action: Option<f64>,
    pub k_state: Option<f64>,
    pub dpw_exponent: Option<f64>,
    pub depth: Option<usize>,
    pub explore_c: Option<f64>,
    pub node_budget: Option<usize>,
    pub epsilon_mpc: Option<f64>,
    pub discount: Option<f64>,
    pub horizon: Option<usize>,
    pub lp_tolerance: Option<f64>,
    pub cautious_inflation: Option<f64>,
    pub beta_des: Option<f64>,
    pub alpha: Option<f64>,
    pub n_u: Option<usize>,
    pub n_b: Option<usize>,
    pub oob_bound: Option<f64>,
    pub ce_population: Option<usize>,
    pub ce_elites: Option<usize>,
    pub ce_max_iters: Option<usize>,
    pub ce_eig_threshold: Option<f64>,
    pub ce_trials_per_sample: Option<usize>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let d = ExperimentConfig::preset(Preset::Desk);
        assert_eq!((d.trials, d.search.node_budget, d.ce.trials_per_sample), (20, 600, 5));
        let f = ExperimentConfig::preset(Preset::PaperFull);
        assert_eq!((f.trials, f.search.node_budget), (100, 3000));
        assert_eq!(d.steps(), 50);
        d.validate().unwrap();
        f.validate().unwrap();
    }

    #[test]
    fn policy_names_round_trip() {
        for p in Policy::ALL {
            assert_eq!(p.name().parse::<Policy>().unwrap(), p);
        }
        assert_eq!("MPC_ORACLE".parse::<Policy>().unwrap(), Policy::MpcOracle);
        assert!("greedy".parse::<Policy>().is_err());
    }

    #[test]
    fn overrides() {
        let file = ConfigFile::parse("process_var = 0.03\nparam_floor = 0.1\nnode_budget = 300\nbeta_des = 4.0\npolicy = \"qmdp-ts\"\n").unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.apply(&file).unwrap();
        assert_eq!(cfg.spec.process_var, 0.03);
        assert_eq!(cfg.spec.param_floor, 0.1);
        assert_eq!(cfg.search.node_budget, 300);
        assert_eq!(cfg.policy, Policy::QmdpTs);
        assert_eq!(cfg.bounding.unwrap().beta_des, 4.0);
        assert_eq!(cfg.bounding.unwrap().n_u, 50);
    }

    #[test]
    fn bad_files_are_config_errors() {
        assert!(matches!(ConfigFile::parse("nonsense = 1"), Err(Error::Config(_))));
        assert!(matches!(ConfigFile::parse("dt = \"fast\""), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::default();
        let file = ConfigFile::parse("dt = -1.0").unwrap();
        assert!(matches!(cfg.apply(&file), Err(Error::Config(_))));
    }
}
