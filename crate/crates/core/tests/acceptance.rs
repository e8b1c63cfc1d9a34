//! Acceptance run: one PASS/FAIL line per criterion on stdout.
//!
//! Criteria with exact oracles are asserted. The closed-loop trend criteria
//! and CE recovery are Monte Carlo outcomes; they are reported as measured
//! and do not fail the test. `DUALCTL_ACCEPTANCE_TRIALS` overrides the
//! number of trials per sweep point (20 at desk scale).

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dualctl::bounding::BoundingParams;
use dualctl::cross_entropy::{integerize, optimize, CeConfig};
use dualctl::gaussian::{chi2_quantile, confidence_ellipsoid, sample_mvn, sigma_points, unscented_transform, Gaussian, UtParams};
use dualctl::harness::output::trial_csv_string;
use dualctl::harness::{bounding_study, bounding_study_config, pooled_sem, run_trial, sweep, Axis, ExperimentConfig, Policy, SweepCell, SweepPoint};
use dualctl::lp::L1Problem;
use dualctl::mpc::{build_problem, solve, MpcParams};
use dualctl::planner::{search, Proposal, SearchMode, SearchModel, SearchParams};
use dualctl::plant::{linearize, ParamVec, PhysState, PlantSpec, HYPER_DIM};
use dualctl::ukf::{divergence_check, predict_with, update_with};
use dualctl::Result;

struct Verdict {
    id: usize,
    pass: bool,
    asserted: bool,
}

fn report(id: usize, name: &str, pass: bool, asserted: bool, detail: &str, started: Instant, out: &mut Vec<Verdict>) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let secs = started.elapsed().as_secs_f64();
    // bypasses the test harness's output capture
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "criterion {id:>2} {tag}  {name}: {detail} [{secs:.1} s]").unwrap();
    stdout.flush().unwrap();
    out.push(Verdict { id, pass, asserted });
}

fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &l * l.transpose() + DMatrix::identity(n, n) * 0.1
}

// ---------------------------------------------------------------------------
// 1. Gaussian suite

/// Simpson quadrature of the unnormalised χ² density in `t = sqrt(y)`, which
/// removes the singularity at zero for one degree of freedom.
fn chi2_mass(k: u32, x: f64) -> f64 {
    let f = |t: f64| t.powi(k as i32 - 1) * (-t * t / 2.0).exp();
    let top = x.sqrt();
    let n = 4000;
    let h = top / n as f64;
    let mut sum = f(0.0) + f(top);
    for i in 1..n {
        sum += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    sum * h / 3.0
}

fn chi2_cdf_quadrature(k: u32, x: f64) -> f64 {
    // the tail beyond y = 900 is below 1e-180 for k ≤ 12
    chi2_mass(k, x) / chi2_mass(k, 900.0)
}

fn chi2_quantile_quadrature(k: u32, p: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 200.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf_quadrature(k, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn gaussian_suite() -> (bool, String) {
    let mut worst_q = 0.0f64;
    for k in 1..=12 {
        for p in [0.5, 0.9, 0.95, 0.99] {
            let err = (chi2_quantile(k, p).unwrap() - chi2_quantile_quadrature(k, p)).abs();
            worst_q = worst_q.max(err);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mean = DVector::from_fn(HYPER_DIM, |_, _| rng.random_range(-2.0..2.0));
    let g = Gaussian::new(mean, random_spd(HYPER_DIM, &mut rng)).unwrap();
    let e = confidence_ellipsoid(&g, 0.05).unwrap();
    let n = 100_000;
    let inside = (0..n).filter(|_| e.contains(&sample_mvn(&g, &mut rng).unwrap(), 0.0)).count();
    let coverage = inside as f64 / n as f64;

    let mut worst_ut = 0.0f64;
    for &(dim, out) in &[(1, 1), (3, 4), (6, 9), (11, 9), (11, 11)] {
        let g = Gaussian::new(DVector::from_fn(dim, |_, _| rng.random_range(-3.0..3.0)), random_spd(dim, &mut rng)).unwrap();
        let a = DMatrix::from_fn(out, dim, |_, _| rng.random_range(-2.0..2.0));
        let b = DVector::from_fn(out, |_, _| rng.random_range(-5.0..5.0));
        let y = unscented_transform(&sigma_points(&g).unwrap(), |x| &a * x + &b);
        worst_ut = worst_ut.max((&y.mean - (&a * &g.mean + &b)).amax());
        worst_ut = worst_ut.max((&y.cov - &a * &g.cov * a.transpose()).amax());
    }

    let pass = worst_q < 1e-6 && (coverage - 0.95).abs() <= 0.005 && worst_ut < 1e-8;
    (pass, format!("max quantile error {worst_q:.1e}, coverage {coverage:.4} over {n} draws, affine UT error {worst_ut:.1e}"))
}

// ---------------------------------------------------------------------------
// 2. UKF against the Kalman filter on the frozen linear plant

fn filter_equivalence() -> (bool, String) {
    let spec = PlantSpec::default();
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let theta = ParamVec { m: rng.random_range(0.3..2.0), mu_v: rng.random_range(0.3..2.0), j: rng.random_range(0.3..2.0), r_bx: rng.random_range(0.1..1.0), r_by: rng.random_range(0.1..1.0) };
        let (a6, b6) = linearize(&theta, rng.random_range(-1.0..1.0), &spec).unwrap();
        let a = DMatrix::from_column_slice(6, 6, a6.as_slice());
        let b = DMatrix::from_column_slice(6, 3, b6.as_slice());
        // positions, velocities and the accelerations implied by the step
        let mut c = DMatrix::<f64>::zeros(9, 6);
        let mut d = DMatrix::<f64>::zeros(9, 3);
        c.view_mut((0, 0), (6, 6)).fill_with_identity();
        let accel = (&a - DMatrix::identity(6, 6)) / spec.dt;
        c.view_mut((6, 0), (3, 6)).copy_from(&accel.rows(3, 3));
        d.view_mut((6, 0), (3, 3)).copy_from(&(b.rows(3, 3) / spec.dt));
        let q = DMatrix::identity(6, 6) * spec.filter_process_var();
        let r = DMatrix::identity(9, 9) * spec.filter_meas_var();

        let mut x = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let mut kf = Gaussian::new(DVector::zeros(6), DMatrix::identity(6, 6) * 0.5).unwrap();
        let mut ukf = kf.clone();
        for _ in 0..50 {
            let u = DVector::from_fn(3, |_, _| rng.random_range(-5.0..5.0));
            x = &a * &x + &b * &u + DVector::from_fn(6, |_, _| rng.random_range(-0.1..0.1));
            let y = &c * &x + &d * &u;

            let m = &a * &kf.mean + &b * &u;
            let p = &a * &kf.cov * a.transpose() + &q;
            let s = &c * &p * c.transpose() + &r;
            let k = &p * c.transpose() * s.try_inverse().unwrap();
            let ikc = DMatrix::identity(6, 6) - &k * &c;
            let mean = &m + &k * (&y - &c * &m - &d * &u);
            let cov = &ikc * &p * ikc.transpose() + &k * &r * k.transpose();
            kf = Gaussian::new_unchecked(mean, cov);

            let (au, bu, cu, du) = (a.clone(), &b * &u, c.clone(), &d * &u);
            let pred = predict_with(&ukf, move |z| &au * z + &bu, &q, UtParams::default()).unwrap();
            ukf = update_with(&pred, move |z| &cu * z + &du, &y, &r, UtParams::default()).unwrap();

            worst = worst.max((&ukf.mean - &kf.mean).amax()).max((&ukf.cov - &kf.cov).amax());
        }
    }
    (worst < 1e-6, format!("max deviation {worst:.1e} over 10 seeds × 50 steps"))
}

// ---------------------------------------------------------------------------
// 3. MPC against exhaustive input grids

/// Cost of an input sequence by direct simulation of the frozen dynamics.
fn rollout_cost(a: &DMatrix<f64>, b: &DMatrix<f64>, x0: &DVector<f64>, us: &[DVector<f64>], spec: &PlantSpec<f64>) -> f64 {
    let mut x = x0.clone();
    let mut cost = 0.0;
    for u in us {
        x = a * &x + b * u;
        cost += state_cost(&x, spec) - spec.r_u * u.abs().sum();
    }
    cost
}

fn state_cost(x: &DVector<f64>, spec: &PlantSpec<f64>) -> f64 {
    (0..6).map(|i| x[i].abs() * if i < 3 { -spec.r_pos } else { -spec.r_vel }).sum()
}

fn grid(points: usize, u_max: f64) -> Vec<DVector<f64>> {
    let step = 2.0 * u_max / (points - 1) as f64;
    let axis: Vec<f64> = (0..points).map(|i| -u_max + step * i as f64).collect();
    let mut out = Vec::with_capacity(points.pow(3));
    for &a in &axis {
        for &b in &axis {
            for &c in &axis {
                out.push(DVector::from_vec(vec![a, b, c]));
            }
        }
    }
    out
}

fn lp_cost(p: &L1Problem<f64>, u: &DVector<f64>) -> f64 {
    (&p.a * u + &p.c).iter().zip(p.w.iter()).map(|(z, w)| w * z.abs()).sum()
}

fn mpc_optimality() -> (bool, String) {
    let spec = PlantSpec::default();
    let params = MpcParams::default();
    let tol = 10.0 * params.lp_tolerance;
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let g = grid(21, spec.u_max);
    let mut worst_margin = f64::NEG_INFINITY;
    let mut worst_model = 0.0f64;
    for _ in 0..25 {
        let x = PhysState::from_vector(&nalgebra::Vector6::from_fn(|_, _| rng.random_range(-2.0..2.0)));
        let theta = ParamVec { m: rng.random_range(0.3..2.0), mu_v: rng.random_range(0.3..2.0), j: rng.random_range(0.3..2.0), r_bx: rng.random_range(0.1..1.0), r_by: rng.random_range(0.1..1.0) };
        let (a6, b6) = linearize(&theta, x.p_theta, &spec).unwrap();
        let a = DMatrix::from_column_slice(6, 6, a6.as_slice());
        let b = DMatrix::from_column_slice(6, 3, b6.as_slice());
        let x0 = DVector::from_column_slice(x.to_vector().as_slice());

        for horizon in [1, 2] {
            let sol = solve(&x, &theta, &MpcParams { horizon, ..params }, &spec).unwrap();
            let us: Vec<DVector<f64>> = sol.controls.iter().map(|c| DVector::from_column_slice(c.to_vector().as_slice())).collect();
            let achieved = rollout_cost(&a, &b, &x0, &us, &spec);
            // the condensed program and the simulated cost must agree
            let problem = build_problem(&x, &theta, horizon, &spec).unwrap();
            worst_model = worst_model.max((lp_cost(&problem, &sol.lp.u) - achieved).abs());

            let best = if horizon == 1 {
                g.iter().map(|u| rollout_cost(&a, &b, &x0, std::slice::from_ref(u), &spec)).fold(f64::INFINITY, f64::min)
            } else {
                // split the double loop: x_2 = A x_1 + B u_1
                let first: Vec<(f64, DVector<f64>)> = g
                    .iter()
                    .map(|u0| {
                        let x1 = &a * &x0 + &b * u0;
                        (state_cost(&x1, &spec) - spec.r_u * u0.abs().sum(), &a * x1)
                    })
                    .collect();
                let second: Vec<(f64, DVector<f64>)> = g.iter().map(|u1| (-spec.r_u * u1.abs().sum(), &b * u1)).collect();
                let w: Vec<f64> = (0..6).map(|i| if i < 3 { -spec.r_pos } else { -spec.r_vel }).collect();
                let mut best = f64::INFINITY;
                for (c0, ax1) in &first {
                    for (c1, bu1) in &second {
                        let mut total = c0 + c1;
                        for i in 0..6 {
                            total += w[i] * (ax1[i] + bu1[i]).abs();
                        }
                        best = best.min(total);
                    }
                }
                best
            };
            worst_margin = worst_margin.max(achieved - best);
        }
    }
    let pass = worst_margin <= tol && worst_model < 1e-9;
    (pass, format!("solver cost minus grid minimum at most {worst_margin:.2e} (tolerance {tol:.0e}), program vs simulation {worst_model:.1e}, 25 instances × H∈{{1,2}}, 21 points per input axis"))
}

// ---------------------------------------------------------------------------
// 4. Tree mechanics on a toy model

struct Drift;

impl SearchModel<f64> for Drift {
    type State = f64;
    type Action = f64;
    type Scratch = ();

    fn propose<R: Rng + ?Sized>(&self, _: &f64, _: &mut (), rng: &mut R) -> Proposal<f64> {
        Proposal { action: rng.random_range(-1.0..1.0), accepted: true }
    }

    fn transition<R: Rng + ?Sized>(&self, s: &f64, a: &f64, rng: &mut R) -> Result<(f64, f64)> {
        let next = s + a + rng.random_range(-0.5..0.5);
        if next.abs() > 4.0 {
            return Err(dualctl::Error::FilterFailure("toy state left the box".into()));
        }
        Ok((next, -next.abs() - 0.1 * a.abs()))
    }

    fn mean_transition(&self, s: &f64, a: &f64) -> (f64, f64) {
        let next = s + a;
        (next, -next.abs() - 0.1 * a.abs())
    }

    fn rollout(&self, s: &f64, depth: usize, discount: f64) -> f64 {
        (0..depth).map(|k| -s.abs() * discount.powi(k as i32)).sum()
    }

    fn default_action(&self) -> f64 {
        0.0
    }
}

fn cap(k: f64, exponent: f64, n: usize) -> usize {
    ((k * (n.max(1) as f64).powf(exponent)).ceil() as usize).max(1)
}

fn tree_mechanics() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let (mut expansions, mut searches, mut exact_budget, mut stalled) = (0usize, 0usize, 0usize, 0usize);
    let mut problems: Vec<String> = Vec::new();
    let mut worst_q = 0.0f64;
    while expansions < 1_000_000 {
        let params = SearchParams {
            k_action: rng.random_range(0.5..30.0),
            k_state: rng.random_range(0.5..10.0),
            dpw_exponent: rng.random_range(0.01..0.6),
            depth: rng.random_range(1..16),
            explore_c: rng.random_range(0.0..30.0),
            node_budget: rng.random_range(1..4000),
            mode: if rng.random_bool(0.5) { SearchMode::Mcts } else { SearchMode::QmdpTs },
            reward_shift: if rng.random_bool(0.3) { 5.0 } else { 0.0 },
            ..SearchParams::default()
        };
        let root = rng.random_range(-3.0..3.0);
        let (outcome, tree) = search(&Drift, root, &params, &mut rng);
        searches += 1;
        expansions += tree.node_count();

        if tree.node_count() > params.node_budget {
            problems.push(format!("{} nodes over budget {}", tree.node_count(), params.node_budget));
        }
        let max_iterations = 20 * params.node_budget + 100;
        if outcome.iterations < max_iterations {
            exact_budget += 1;
            if tree.node_count() != params.node_budget {
                problems.push(format!("stopped at {} of {} nodes before the iteration cap", tree.node_count(), params.node_budget));
            }
        } else {
            stalled += 1;
        }

        for b in &tree.beliefs {
            let limit = cap(params.k_action, params.dpw_exponent, b.visits.saturating_sub(1));
            if b.actions.len() > limit {
                problems.push(format!("belief with {} actions over cap {limit}", b.actions.len()));
            }
            let sum: usize = b.actions.iter().map(|&a| tree.actions[a].visits).sum();
            if sum != b.visits {
                problems.push(format!("belief visits {} vs child sum {sum}", b.visits));
            }
        }
        let root_actions = &tree.beliefs[0].actions;
        for (i, a) in tree.actions.iter().enumerate() {
            let limit = if params.mode == SearchMode::QmdpTs && !root_actions.contains(&i) { 1 } else { cap(params.k_state, params.dpw_exponent, a.visits.saturating_sub(1)) };
            if a.children.len() > limit {
                problems.push(format!("action with {} children over cap {limit}", a.children.len()));
            }
            if a.visits > 0 {
                worst_q = worst_q.max((a.return_sum / a.visits as f64 - a.q).abs() / (1.0 + a.q.abs()));
            }
        }
        if problems.len() > 5 {
            break;
        }
    }
    let pass = problems.is_empty() && worst_q < 1e-9;
    let first = problems.first().cloned().unwrap_or_else(|| "no cap violations".into());
    (pass, format!("{expansions} expansions over {searches} searches ({exact_budget} filled the budget exactly, {stalled} hit the iteration cap), max relative |Q - shadow mean| {worst_q:.1e}, {first}"))
}

// ---------------------------------------------------------------------------
// 5-9, 11. Closed-loop criteria

fn point(cells: &[SweepCell], policy: Policy, value: f64) -> &SweepPoint {
    &cells.iter().find(|c| c.point.policy == policy && c.point.value == value).expect("sweep cell").point
}

fn gap(a: &SweepPoint, b: &SweepPoint) -> (f64, f64) {
    (a.mean_reward - b.mean_reward, pooled_sem(a.sem, b.sem))
}

fn describe(p: &SweepPoint) -> String {
    format!("{} {:.1} ± {:.1} (n={}, aborted {})", p.policy, p.mean_reward, p.sem, p.trials, p.failed)
}

fn synthetic_divergence() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let g = Gaussian::new(DVector::from_fn(HYPER_DIM, |_, _| rng.random_range(-1.0..1.0)), random_spd(HYPER_DIM, &mut rng)).unwrap();
    let eig = SymmetricEigen::new(g.cov.clone());
    let mut ok = true;
    for i in 0..HYPER_DIM {
        let axis = eig.eigenvectors.column(i) * eig.eigenvalues[i].sqrt();
        ok &= divergence_check(&g, &(&g.mean + &axis * 6.0));
        ok &= divergence_check(&g, &(&g.mean - &axis * 6.0));
        ok &= !divergence_check(&g, &(&g.mean + &axis));
    }
    // one sigma along every axis at once
    let all = &eig.eigenvectors * eig.eigenvalues.map(f64::sqrt);
    ok &= !divergence_check(&g, &(&g.mean + all));
    ok
}

#[test]
fn acceptance() {
    let mut verdicts = Vec::new();

    let t = Instant::now();
    let (pass, detail) = gaussian_suite();
    report(1, "gaussian suite", pass, true, &detail, t, &mut verdicts);

    let t = Instant::now();
    let (pass, detail) = filter_equivalence();
    report(2, "filter equivalence", pass, true, &detail, t, &mut verdicts);

    let t = Instant::now();
    let (pass, detail) = mpc_optimality();
    report(3, "mpc optimality", pass, true, &detail, t, &mut verdicts);

    let t = Instant::now();
    let (pass, detail) = tree_mechanics();
    report(4, "tree mechanics", pass, true, &detail, t, &mut verdicts);

    let mut cfg = ExperimentConfig::default();
    if let Ok(n) = std::env::var("DUALCTL_ACCEPTANCE_TRIALS") {
        cfg.trials = n.parse().expect("DUALCTL_ACCEPTANCE_TRIALS must be a count");
    }

    let t = Instant::now();
    let noise = sweep(&cfg, Axis::Noise, &[0.005, 0.03], &Policy::ALL).unwrap();
    let (mcts, mpc) = (point(&noise, Policy::Mcts, 0.03), point(&noise, Policy::Mpc, 0.03));
    let (d, s) = gap(mcts, mpc);
    report(5, "trend A", d > 2.0 * s, false, &format!("σ²_w=0.03: {} vs {}, gap {d:.1} vs 2·pooled SEM {:.1}", describe(mcts), describe(mpc), 2.0 * s), t, &mut verdicts);

    let t = Instant::now();
    let floor = sweep(&cfg, Axis::Floor, &[0.0375, 0.1], &Policy::ALL).unwrap();
    let (mcts_lo, mpc_lo, mcts_hi) = (point(&floor, Policy::Mcts, 0.0375), point(&floor, Policy::Mpc, 0.0375), point(&floor, Policy::Mcts, 0.1));
    let (d1, s1) = gap(mcts_lo, mpc_lo);
    let (d2, s2) = gap(mcts_lo, mcts_hi);
    report(
        6,
        "trend B",
        d1 > 2.0 * s1 && d2.abs() < 2.0 * s2,
        false,
        &format!("ℓ=0.0375: {} vs {}, gap {d1:.1} vs {:.1}; mcts at ℓ=0.1 {:.1} ± {:.1}, |Δ| {:.1} vs {:.1}", describe(mcts_lo), describe(mpc_lo), 2.0 * s1, mcts_hi.mean_reward, mcts_hi.sem, d2.abs(), 2.0 * s2),
        t,
        &mut verdicts,
    );

    let t = Instant::now();
    let (mcts, mpc) = (point(&noise, Policy::Mcts, 0.005), point(&noise, Policy::Mpc, 0.005));
    let (d, s) = gap(mcts, mpc);
    report(7, "trend C", d.abs() < 4.0 * s, false, &format!("σ²_w=0.005: {} vs {}, |gap| {:.1} vs 4·pooled SEM {:.1}", describe(mcts), describe(mpc), d.abs(), 4.0 * s), t, &mut verdicts);

    let t = Instant::now();
    let mut violations = Vec::new();
    let mut checked = 0;
    for cells in [&noise, &floor] {
        for oracle in cells.iter().filter(|c| c.point.policy == Policy::MpcOracle) {
            for other in cells.iter().filter(|c| c.point.value == oracle.point.value && c.point.policy != Policy::MpcOracle) {
                checked += 1;
                let (d, s) = gap(&oracle.point, &other.point);
                if d < -s {
                    violations.push(format!("{}={}: {} above oracle by {:.1}", oracle.point.axis, oracle.point.value, other.point.policy, -d));
                }
            }
        }
    }
    let detail = if violations.is_empty() { format!("oracle ahead in all {checked} comparisons") } else { format!("{} of {checked} comparisons violated: {}", violations.len(), violations.join("; ")) };
    report(8, "oracle dominance", violations.is_empty(), false, &detail, t, &mut verdicts);

    let t = Instant::now();
    let study = bounding_study_config(&cfg);
    let rows = bounding_study(&study, &[6.0, 5.0, 4.0], &BoundingParams::default()).unwrap();
    let at = |b: f64| rows.iter().find(|r| r.bound == b).unwrap();
    let (r6, r4) = (at(6.0), at(4.0));
    let halved = r6.pct_outside_heuristic <= 0.5 * r6.pct_outside_plain;
    let reduced = r4.pct_outside_heuristic < r4.pct_outside_plain;
    let monotone = rows.windows(2).all(|w| w[1].mean_reward_heuristic <= w[0].mean_reward_heuristic + pooled_sem(w[0].sem_heuristic, w[1].sem_heuristic));
    let table: Vec<String> = rows.iter().map(|r| format!("{}: {:.2}%→{:.2}%, reward {:.1} ± {:.1}", r.bound, r.pct_outside_plain, r.pct_outside_heuristic, r.mean_reward_heuristic, r.sem_heuristic)).collect();
    report(9, "bounding", halved && reduced && monotone, false, &format!("{} (plain reward {:.1} ± {:.1}); halved at 6: {halved}, reduced at 4: {reduced}, monotone: {monotone}", table.join("; "), r6.mean_reward_plain, r6.sem_plain), t, &mut verdicts);

    let t = Instant::now();
    let target = [22, 5, 12, 27];
    let quadratic = |v: &[i64; 4]| -> f64 { -v.iter().zip(target).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() };
    let ce = CeConfig::<f64>::default();
    let mut recovered = 0;
    let mut mean_recovered = 0;
    for seed in 0..20 {
        let r = optimize(quadratic, &ce, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        recovered += usize::from(r.best_sample == target);
        mean_recovered += usize::from(integerize(&r.mean) == target);
    }
    let r = optimize(quadratic, &ce, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    let terminated = r.converged && r.history.len() <= 25;
    report(
        10,
        "cross-entropy",
        recovered >= 18 && terminated,
        false,
        &format!("best sample at the optimum in {recovered}/20 runs (rounded mean {mean_recovered}/20); eigenvalue stop after {} iterations: {terminated}", r.history.len()),
        t,
        &mut verdicts,
    );

    let t = Instant::now();
    let records: Vec<_> = noise.iter().chain(&floor).flat_map(|c| &c.records).collect();
    let flagged = records.iter().filter(|r| r.diverged()).count();
    let flagged_steps: usize = records.iter().map(|r| r.divergence_steps()).sum();
    let total_steps: usize = records.iter().map(|r| r.steps.len()).sum();
    let synthetic = synthetic_divergence();
    report(
        11,
        "divergence criterion",
        synthetic,
        true,
        &format!("{flagged}/{} sweep trials flagged ({flagged_steps}/{total_steps} steps); synthetic 6σ flagged and 1σ clear: {synthetic}", records.len()),
        t,
        &mut verdicts,
    );

    let t = Instant::now();
    let mut identical = 0;
    for policy in Policy::ALL {
        let c = ExperimentConfig { policy, ..Axis::Noise.apply(&cfg, 0.03) };
        let stored = &noise.iter().find(|cell| cell.point.policy == policy && cell.point.value == 0.03).unwrap().records[0];
        let again = run_trial(&c, 0);
        identical += usize::from(trial_csv_string(stored).unwrap() == trial_csv_string(&again).unwrap());
    }
    report(12, "determinism", identical == Policy::ALL.len(), true, &format!("{identical}/{} policies replay byte-identically", Policy::ALL.len()), t, &mut verdicts);

    let failed: Vec<usize> = verdicts.iter().filter(|v| v.asserted && !v.pass).map(|v| v.id).collect();
    assert!(failed.is_empty(), "asserted criteria failed: {failed:?}");
    assert!(terminated, "cross-entropy did not stop on the eigenvalue threshold");
}
