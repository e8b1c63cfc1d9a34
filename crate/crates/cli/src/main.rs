use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dualctl::harness::output::{self, trial_csv_string, write_bounding_csv, write_ce_csv, write_file, write_summary_csv};
use dualctl::harness::{bounding_study, bounding_study_config, run_trial, sweep, tune, Axis, ConfigFile, ExperimentConfig, Policy, Preset};
use dualctl::Error;

#[derive(Parser, Debug)]
#[command(name = "dualctl", version, about = "Closed-loop estimation and control experiments on the planar pushing plant")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Base seed; trial i uses seed ^ splitmix64(i).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Trials per sweep point.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Policy, or a comma-separated list for sweeps.
    #[arg(long, global = true, value_delimiter = ',')]
    policy: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,
    /// desk (20 trials, 600 nodes) or paper-full (100 trials, 3000 nodes).
    #[arg(long, global = true, default_value = "desk")]
    preset: String,
    /// TOML file of overrides applied on top of the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one trial and write its per-step CSV.
    Run {
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
    /// Sweep the process noise variance.
    SweepNoise {
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Sweep the parameter floor.
    SweepFloor {
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// MCTS with and without the action filter at several norm bounds.
    Bounding {
        #[arg(long, value_delimiter = ',', default_values_t = [6.0, 5.0, 4.0])]
        values: Vec<f64>,
    },
    /// Cross-entropy search over the tree-search hyperparameters.
    Tune,
    /// Re-run a trial and compare its CSV byte for byte.
    Replay {
        #[arg(long, default_value_t = 0)]
        trial: usize,
        /// Previously written trial CSV to compare against.
        #[arg(long)]
        against: Option<PathBuf>,
    },
}

enum Outcome {
    Ok,
    Aborted(usize),
    Mismatch,
}

fn config(g: &Global) -> Result<ExperimentConfig, Error> {
    let preset: Preset = g.preset.parse()?;
    let mut cfg = ExperimentConfig::preset(preset);
    if let Some(path) = &g.config {
        cfg.apply(&ConfigFile::load(path)?)?;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(t) = g.trials {
        cfg.trials = t;
    }
    if let Some(p) = g.policy.first() {
        cfg.policy = p.parse()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn policies(g: &Global) -> Result<Vec<Policy>, Error> {
    if g.policy.is_empty() {
        return Ok(Policy::ALL.to_vec());
    }
    g.policy.iter().map(|p| p.parse()).collect()
}

fn out_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn trial_file(cfg: &ExperimentConfig, trial: usize) -> String {
    format!("trial-{}-s{}-t{trial}.csv", cfg.policy, cfg.seed)
}

fn run_sweep(g: &Global, cfg: &ExperimentConfig, axis: Axis, values: &[f64]) -> anyhow::Result<Outcome> {
    let values = if values.is_empty() { axis.default_values() } else { values.to_vec() };
    let policies = policies(g)?;
    out_dir(&g.out)?;
    let cells = sweep(cfg, axis, &values, &policies)?;
    let points: Vec<_> = cells.iter().map(|c| c.point.clone()).collect();
    let stem = format!("sweep-{}", axis.name());
    let csv_path = g.out.join(format!("{stem}.csv"));
    write_file(&csv_path, |w| write_summary_csv(w, &points))?;
    std::fs::write(g.out.join(format!("{stem}.svg")), output::summary_svg(&points, axis))?;
    for p in &points {
        println!("{:<13} {}={:<8} {:>10.1} ± {:<8.1} trials {:>3} failed {:>3} oob {:.3}", p.policy.name(), axis.name(), p.value, p.mean_reward, p.sem, p.trials, p.failed, p.oob_frac);
    }
    println!("wrote {}", csv_path.display());
    let failed: usize = points.iter().map(|p| p.failed).sum();
    Ok(if failed > 0 { Outcome::Aborted(failed) } else { Outcome::Ok })
}

fn execute(cli: &Cli) -> anyhow::Result<Outcome> {
    let g = &cli.global;
    let cfg = config(g)?;
    match &cli.command {
        Command::Run { trial } => {
            let record = run_trial(&cfg, *trial);
            out_dir(&g.out)?;
            let path = g.out.join(trial_file(&cfg, *trial));
            std::fs::write(&path, trial_csv_string(&record)?).with_context(|| format!("writing {}", path.display()))?;
            println!("{} trial {trial}: total reward {:.3} over {} steps", cfg.policy, record.total_reward, record.steps.len());
            println!("wrote {}", path.display());
            Ok(match &record.aborted {
                Some(why) => {
                    eprintln!("trial aborted at {why}");
                    Outcome::Aborted(1)
                }
                None => Outcome::Ok,
            })
        }
        Command::SweepNoise { values } => run_sweep(g, &cfg, Axis::Noise, values),
        Command::SweepFloor { values } => run_sweep(g, &cfg, Axis::Floor, values),
        Command::Bounding { values } => {
            let study = bounding_study_config(&cfg);
            let filter = cfg.bounding.unwrap_or_default();
            out_dir(&g.out)?;
            let rows = bounding_study(&study, values, &filter)?;
            let path = g.out.join("bounding.csv");
            write_file(&path, |w| write_bounding_csv(w, &rows))?;
            for r in &rows {
                println!(
                    "bound {:<4} outside {:>6.2}% plain {:>6.2}% filtered   reward {:>9.1} ± {:<7.1} plain {:>9.1} ± {:.1} filtered",
                    r.bound, r.pct_outside_plain, r.pct_outside_heuristic, r.mean_reward_plain, r.sem_plain, r.mean_reward_heuristic, r.sem_heuristic
                );
            }
            println!("wrote {}", path.display());
            let failed: usize = rows.iter().map(|r| r.failed).max().unwrap_or(0);
            Ok(if failed > 0 { Outcome::Aborted(failed) } else { Outcome::Ok })
        }
        Command::Tune => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let result = tune(&cfg, &mut rng)?;
            out_dir(&g.out)?;
            let path = g.out.join("ce.csv");
            write_file(&path, |w| write_ce_csv(w, &result.history))?;
            let best_value = result.history.last().map_or(f64::NAN, |h| h.best);
            println!("best [k_action, k_state, depth, explore_c] = {:?} with mean reward {best_value:.1}", result.best_sample);
            println!("final mean {:?}, converged: {}", result.mean, result.converged);
            println!("wrote {}", path.display());
            Ok(Outcome::Ok)
        }
        Command::Replay { trial, against } => {
            let first = trial_csv_string(&run_trial(&cfg, *trial))?;
            let second = trial_csv_string(&run_trial(&cfg, *trial))?;
            if first != second {
                report_mismatch("two fresh runs", &first, &second);
                return Ok(Outcome::Mismatch);
            }
            if let Some(path) = against {
                let stored = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                if stored != first {
                    report_mismatch(&path.display().to_string(), &stored, &first);
                    return Ok(Outcome::Mismatch);
                }
            }
            println!("replay of {} seed {} trial {trial} is byte-identical ({} bytes)", cfg.policy, cfg.seed, first.len());
            Ok(Outcome::Ok)
        }
    }
}

fn report_mismatch(what: &str, a: &str, b: &str) {
    let line = a.lines().zip(b.lines()).position(|(x, y)| x != y).unwrap_or_else(|| a.lines().count().min(b.lines().count()));
    eprintln!("replay mismatch against {what}: first difference on line {}", line + 1);
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Aborted(n)) => {
            eprintln!("{n} trial(s) aborted");
            ExitCode::from(3)
        }
        Ok(Outcome::Mismatch) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Config(_)) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
