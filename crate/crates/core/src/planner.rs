//! Monte Carlo tree search with UCB selection and double progressive
//! widening over the belief MDP, plus the QMDP variant that treats every
//! depth below the root as fully observable.
//!
//! The search engine is generic over a [`SearchModel`]; [`BeliefModel`]
//! binds it to the box-pushing plant.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::belief_mdp::{generative, mean_propagate, sample_hyperstate};
use crate::bounding::{point_belief, BoundingContext, BoundingParams};
use crate::error::{Error, Result};
use crate::mpc::{self, MpcParams};
use crate::plant::{Control, Hyperstate, PlantSpec};
use crate::scalar::{count, lit, Real};
use crate::ukf::BeliefState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SearchMode {
    Mcts,
    QmdpTs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchParams<T: Real> {
    pub k_action: T,
    pub k_state: T,
    pub dpw_exponent: T,
    pub depth: usize,
    pub explore_c: T,
    /// Cap on the total number of belief and action nodes.
    pub node_budget: usize,
    /// Probability of proposing a uniform random action instead of MPC.
    pub epsilon_mpc: T,
    pub discount: T,
    pub mode: SearchMode,
    pub action_filter: Option<BoundingParams<T>>,
    /// Constant added to every one-step reward.
    pub reward_shift: T,
    /// Controller used for proposals and rollouts.
    pub mpc: MpcParams<T>,
}

impl<T: Real> Default for SearchParams<T> {
    fn default() -> Self {
        Self {
            k_action: lit(22.0),
            k_state: lit(5.0),
            dpw_exponent: lit(1.0 / 30.0),
            depth: 12,
            explore_c: lit(27.0),
            node_budget: 3000,
            epsilon_mpc: lit(0.8),
            discount: lit(0.99),
            mode: SearchMode::Mcts,
            action_filter: None,
            reward_shift: T::zero(),
            mpc: MpcParams::default(),
        }
    }
}

impl<T: Real> SearchParams<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.k_action > T::zero() && self.k_state > T::zero()) {
            return bad("widening coefficients must be positive".into());
        }
        if !(self.explore_c >= T::zero()) {
            return bad(format!("explore_c = {} must be nonnegative", self.explore_c));
        }
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if self.node_budget == 0 {
            return bad("node_budget must be at least 1".into());
        }
        if !(self.epsilon_mpc >= T::zero() && self.epsilon_mpc <= T::one()) {
            return bad(format!("epsilon_mpc = {} outside [0, 1]", self.epsilon_mpc));
        }
        if !(self.discount > T::zero() && self.discount <= T::one()) {
            return bad(format!("discount = {} outside (0, 1]", self.discount));
        }
        if let Some(f) = &self.action_filter {
            f.validate()?;
        }
        Ok(())
    }

    /// Widening cap `⌈k · max(n, 1)^δ⌉`.
    pub fn widening_cap(&self, k: T, n: usize) -> usize {
        let n: T = count(n.max(1));
        (k * n.powf(self.dpw_exponent)).ceil().to_usize().unwrap_or(usize::MAX)
    }
}

/// A candidate action together with whether it passed the action filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal<A> {
    pub action: A,
    pub accepted: bool,
}

/// Everything the search needs to know about a decision problem.
pub trait SearchModel<T: Real> {
    type State: Clone;
    type Action: Clone;
    /// Per-belief-node cache available to `propose`.
    type Scratch: Default;

    fn propose<R: Rng + ?Sized>(&self, s: &Self::State, scratch: &mut Self::Scratch, rng: &mut R) -> Proposal<Self::Action>;
    /// Sampled transition and its one-step reward.
    fn transition<R: Rng + ?Sized>(&self, s: &Self::State, a: &Self::Action, rng: &mut R) -> Result<(Self::State, T)>;
    /// Deterministic transition of the state's mean.
    fn mean_transition(&self, s: &Self::State, a: &Self::Action) -> (Self::State, T);
    /// Discounted sum of `depth` rewards under the default policy.
    fn rollout(&self, s: &Self::State, depth: usize, discount: T) -> T;
    /// Action returned when nothing was expanded.
    fn default_action(&self) -> Self::Action;
}

#[derive(Debug, Clone)]
pub struct BeliefNode<S, X> {
    /// `None` for the terminal child left by a failed transition.
    pub state: Option<S>,
    pub visits: usize,
    pub actions: Vec<usize>,
    scratch: X,
}

#[derive(Debug, Clone)]
pub struct ActionNode<A, T> {
    pub action: A,
    pub accepted: bool,
    pub visits: usize,
    pub q: T,
    /// Shadow sum of every return backed up through this node.
    pub return_sum: T,
    /// Child belief nodes with the reward of the transition into them.
    pub children: Vec<(usize, T)>,
}

/// Arena-allocated search tree; index 0 of `beliefs` is the root.
#[derive(Debug, Clone)]
pub struct SearchTree<S, A, X, T> {
    pub beliefs: Vec<BeliefNode<S, X>>,
    pub actions: Vec<ActionNode<A, T>>,
}

impl<S, A, X: Default, T: Real> SearchTree<S, A, X, T> {
    fn new(root: S) -> Self {
        Self { beliefs: vec![BeliefNode { state: Some(root), visits: 0, actions: Vec::new(), scratch: X::default() }], actions: Vec::new() }
    }

    pub fn node_count(&self) -> usize {
        self.beliefs.len() + self.actions.len()
    }

    fn add_belief(&mut self, state: Option<S>) -> usize {
        self.beliefs.push(BeliefNode { state, visits: 0, actions: Vec::new(), scratch: X::default() });
        self.beliefs.len() - 1
    }

    /// Checks visit bookkeeping, widening caps and the running averages.
    pub fn check_invariants(&self, params: &SearchParams<T>) -> std::result::Result<(), String> {
        for (i, b) in self.beliefs.iter().enumerate() {
            let sum: usize = b.actions.iter().map(|&a| self.actions[a].visits).sum();
            if sum != b.visits {
                return Err(format!("belief {i}: N = {} but children sum to {sum}", b.visits));
            }
            // widening happens before the visit is counted
            let cap = params.widening_cap(params.k_action, b.visits.saturating_sub(1));
            if b.actions.len() > cap.max(1) {
                return Err(format!("belief {i}: {} actions over cap {cap}", b.actions.len()));
            }
        }
        let root_actions = self.beliefs.first().map(|b| b.actions.as_slice()).unwrap_or(&[]);
        for (i, a) in self.actions.iter().enumerate() {
            let cap = if params.mode == SearchMode::QmdpTs && !root_actions.contains(&i) { 1 } else { params.widening_cap(params.k_state, a.visits.saturating_sub(1)) };
            if a.children.len() > cap.max(1) {
                return Err(format!("action {i}: {} children over cap {cap}", a.children.len()));
            }
            if a.visits > 0 {
                let avg = a.return_sum / count(a.visits);
                let tol = lit::<T>(1e-9) * (T::one() + avg.abs());
                if (avg - a.q).abs() > tol {
                    return Err(format!("action {i}: Q = {} but mean return {}", a.q, avg));
                }
            }
        }
        Ok(())
    }
}

/// Index maximising `q + c·sqrt(ln N / n)` over `(q, n)` pairs. Unvisited
/// entries come first in order; ties go to the earliest entry.
pub fn ucb_select<T: Real>(children: &[(T, usize)], parent_visits: usize, c: T) -> usize {
    if let Some(i) = children.iter().position(|&(_, n)| n == 0) {
        return i;
    }
    let ln_n = count::<T>(parent_visits.max(1)).ln();
    let mut best: Option<(usize, T)> = None;
    for (i, &(q, n)) in children.iter().enumerate() {
        let score = q + c * (ln_n / count(n)).sqrt();
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((i, score));
        }
    }
    best.map_or(0, |(i, _)| i)
}

/// Result of a planning call.
#[derive(Debug, Clone)]
pub struct SearchOutcome<A, T> {
    pub action: A,
    /// Set when no root action could be expanded.
    pub warning: bool,
    pub iterations: usize,
    pub nodes: usize,
    /// `(Q̃, N)` of the chosen root action.
    pub q: T,
    pub visits: usize,
}

struct Search<'m, M: SearchModel<T>, T: Real> {
    model: &'m M,
    params: SearchParams<T>,
    tree: SearchTree<M::State, M::Action, M::Scratch, T>,
    proposal_rng: ChaCha8Rng,
    transition_rng: ChaCha8Rng,
    worst_rollout: T,
}

impl<M: SearchModel<T>, T: Real> Search<'_, M, T> {
    fn has_room(&self) -> bool {
        self.tree.node_count() < self.params.node_budget
    }

    /// `shift · Σ_{k<d} γ^k`
    fn shift_sum(&self, depth: usize) -> T {
        let s = self.params.reward_shift;
        if s == T::zero() {
            return s;
        }
        let mut total = T::zero();
        let mut disc = T::one();
        for _ in 0..depth {
            total += disc * s;
            disc *= self.params.discount;
        }
        total
    }

    fn rollout(&mut self, s: &M::State, depth: usize) -> T {
        if depth == 0 {
            return T::zero();
        }
        let v = self.model.rollout(s, depth, self.params.discount) + self.shift_sum(depth);
        self.worst_rollout = self.worst_rollout.min(v);
        v
    }

    fn failure_penalty(&self) -> T {
        lit::<T>(10.0) * self.worst_rollout.min(-T::one())
    }

    fn simulate(&mut self, id: usize, depth: usize) -> T {
        if depth == 0 {
            return T::zero();
        }
        let Some(state) = self.tree.beliefs[id].state.clone() else {
            return T::zero();
        };
        let n_b = self.tree.beliefs[id].visits;
        let qmdp_below_root = self.params.mode == SearchMode::QmdpTs && id != 0;

        let cap_a = self.params.widening_cap(self.params.k_action, n_b);
        if self.tree.beliefs[id].actions.len() < cap_a && self.has_room() {
            let p = self.model.propose(&state, &mut self.tree.beliefs[id].scratch, &mut self.proposal_rng);
            self.tree.actions.push(ActionNode { action: p.action, accepted: p.accepted, visits: 0, q: T::zero(), return_sum: T::zero(), children: Vec::new() });
            let a = self.tree.actions.len() - 1;
            self.tree.beliefs[id].actions.push(a);
        }
        if self.tree.beliefs[id].actions.is_empty() {
            // out of budget before anything could be expanded here
            return self.rollout(&state, depth);
        }

        let arms: Vec<(T, usize)> = self.tree.beliefs[id].actions.iter().map(|&a| (self.tree.actions[a].q, self.tree.actions[a].visits)).collect();
        let a = self.tree.beliefs[id].actions[ucb_select(&arms, n_b, self.params.explore_c)];
        let action = self.tree.actions[a].action.clone();
        let n_ba = self.tree.actions[a].visits;
        let n_children = self.tree.actions[a].children.len();
        let gamma = self.params.discount;

        let value = if qmdp_below_root {
            if n_children == 0 && self.has_room() {
                let (next, r) = self.model.mean_transition(&state, &action);
                let r = r + self.params.reward_shift;
                let child = self.tree.add_belief(Some(next.clone()));
                self.tree.actions[a].children.push((child, r));
                r + gamma * self.rollout(&next, depth - 1)
            } else if n_children > 0 {
                let (child, r) = self.tree.actions[a].children[0];
                r + gamma * self.simulate(child, depth - 1)
            } else {
                self.leaf_estimate(&state, &action, depth)
            }
        } else if n_children < self.params.widening_cap(self.params.k_state, n_ba) && self.has_room() {
            match self.model.transition(&state, &action, &mut self.transition_rng) {
                Ok((next, r)) => {
                    let r = r + self.params.reward_shift;
                    let child = self.tree.add_belief(Some(next.clone()));
                    self.tree.actions[a].children.push((child, r));
                    r + gamma * self.rollout(&next, depth - 1)
                }
                Err(e) => {
                    warn!("transition failed inside the search tree: {e}");
                    let r = self.failure_penalty();
                    let child = self.tree.add_belief(None);
                    self.tree.actions[a].children.push((child, r));
                    r
                }
            }
        } else if n_children > 0 {
            let k = if n_children == 1 { 0 } else { self.transition_rng.random_range(0..n_children) };
            let (child, r) = self.tree.actions[a].children[k];
            r + gamma * self.simulate(child, depth - 1)
        } else {
            self.leaf_estimate(&state, &action, depth)
        };

        self.tree.beliefs[id].visits += 1;
        let node = &mut self.tree.actions[a];
        node.visits += 1;
        node.return_sum += value;
        node.q = if node.visits == 1 { value } else { node.q + (value - node.q) / count(node.visits) };
        value
    }

    /// Value of an action whose children could not be expanded: one mean
    /// step followed by a rollout, without touching the tree.
    fn leaf_estimate(&mut self, s: &M::State, a: &M::Action, depth: usize) -> T {
        let (next, r) = self.model.mean_transition(s, a);
        r + self.params.reward_shift + self.params.discount * self.rollout(&next, depth - 1)
    }
}

/// Runs the search from `root` and returns the root action with the highest
/// value estimate, together with the final tree.
pub fn search<T, M, R>(model: &M, root: M::State, params: &SearchParams<T>, rng: &mut R) -> (SearchOutcome<M::Action, T>, SearchTree<M::State, M::Action, M::Scratch, T>)
where
    T: Real,
    M: SearchModel<T>,
    R: Rng + ?Sized,
{
    let mut s = Search {
        model,
        params: *params,
        tree: SearchTree::new(root),
        proposal_rng: ChaCha8Rng::seed_from_u64(rng.random()),
        transition_rng: ChaCha8Rng::seed_from_u64(rng.random()),
        worst_rollout: T::zero(),
    };
    let max_iterations = 20 * params.node_budget + 100;
    let mut iterations = 0;
    while s.has_room() && iterations < max_iterations {
        s.simulate(0, params.depth);
        iterations += 1;
    }

    let tree = s.tree;
    let root_actions = &tree.beliefs[0].actions;
    let best = root_actions.iter().copied().filter(|&a| tree.actions[a].visits > 0).reduce(|best, a| {
        let (x, y) = (&tree.actions[a], &tree.actions[best]);
        if x.q > y.q || (x.q == y.q && x.visits > y.visits) {
            a
        } else {
            best
        }
    });
    let outcome = match best {
        Some(a) => SearchOutcome { action: tree.actions[a].action.clone(), warning: false, iterations, nodes: tree.node_count(), q: tree.actions[a].q, visits: tree.actions[a].visits },
        None => {
            warn!("node budget {} too small to expand a root action; returning the default action", params.node_budget);
            SearchOutcome { action: model.default_action(), warning: true, iterations, nodes: tree.node_count(), q: T::zero(), visits: 0 }
        }
    };
    (outcome, tree)
}

/// Node content of the box-pushing search: a filter belief, or a hyperstate
/// treated as known below the root of a QMDP search.
#[derive(Debug, Clone, PartialEq)]
pub enum PlanState<T: Real> {
    Belief(BeliefState<T>),
    Point(Hyperstate<T>),
}

impl<T: Real> PlanState<T> {
    /// Mean hyperstate with parameters clamped at the floor.
    pub fn mean(&self, floor: T) -> Hyperstate<T> {
        match self {
            PlanState::Belief(b) => {
                let mut xi = Hyperstate::from_slice(b.mean.as_slice());
                xi.params = xi.params.clamped(floor);
                xi
            }
            PlanState::Point(xi) => *xi,
        }
    }
}

/// The box-pushing belief MDP as a search model.
#[derive(Debug, Clone)]
pub struct BeliefModel<T: Real> {
    pub spec: PlantSpec<T>,
    pub epsilon_mpc: T,
    pub mpc: MpcParams<T>,
    pub filter: Option<BoundingParams<T>>,
}

impl<T: Real> BeliefModel<T> {
    pub fn new(spec: &PlantSpec<T>, params: &SearchParams<T>) -> Self {
        Self { spec: *spec, epsilon_mpc: params.epsilon_mpc, mpc: params.mpc, filter: params.action_filter }
    }

    fn base_proposal<R: Rng + ?Sized>(&self, s: &PlanState<T>, rng: &mut R) -> Control<T> {
        if rng.random::<f64>() < self.epsilon_mpc.as_f64() {
            return Control::sample_uniform(self.spec.u_max, rng);
        }
        let xi = match s {
            // a degenerate belief has nothing to sample
            PlanState::Belief(b) if b.cov.iter().all(|c| *c == T::zero()) => s.mean(self.spec.param_floor),
            PlanState::Belief(b) => sample_hyperstate(b, &self.spec, rng).unwrap_or_else(|_| s.mean(self.spec.param_floor)),
            PlanState::Point(xi) => *xi,
        };
        mpc::plan(&xi.state, &xi.params, &self.mpc, &self.spec).first()
    }
}

impl<T: Real> SearchModel<T> for BeliefModel<T> {
    type State = PlanState<T>;
    type Action = Control<T>;
    type Scratch = Option<BoundingContext<T>>;

    fn propose<R: Rng + ?Sized>(&self, s: &PlanState<T>, scratch: &mut Self::Scratch, rng: &mut R) -> Proposal<Control<T>> {
        let candidate = self.base_proposal(s, rng);
        let Some(filter) = &self.filter else {
            return Proposal { action: candidate, accepted: true };
        };
        if scratch.is_none() {
            let b = match s {
                PlanState::Belief(b) => b.clone(),
                PlanState::Point(xi) => point_belief(xi),
            };
            match BoundingContext::new(&b, filter, &self.spec, rng) {
                Ok(ctx) => *scratch = Some(ctx),
                Err(e) => {
                    warn!("bounding context unavailable: {e}");
                    return Proposal { action: candidate, accepted: false };
                }
            }
        }
        let ctx = scratch.as_ref().expect("context initialised above");
        let dt = self.spec.dt;
        if ctx.accepts(&candidate, dt) {
            return Proposal { action: candidate, accepted: true };
        }
        let mut last = candidate;
        for _ in 1..filter.n_u {
            last = Control::sample_uniform(self.spec.u_max, rng);
            if ctx.accepts(&last, dt) {
                return Proposal { action: last, accepted: true };
            }
        }
        Proposal { action: last, accepted: false }
    }

    fn transition<R: Rng + ?Sized>(&self, s: &PlanState<T>, a: &Control<T>, rng: &mut R) -> Result<(PlanState<T>, T)> {
        match s {
            PlanState::Belief(b) => generative(b, a, &self.spec, rng).map(|(nb, r)| (PlanState::Belief(nb), r)),
            PlanState::Point(xi) => {
                let (next, r) = mean_propagate(xi, a, &self.spec);
                Ok((PlanState::Point(next), r))
            }
        }
    }

    fn mean_transition(&self, s: &PlanState<T>, a: &Control<T>) -> (PlanState<T>, T) {
        let (next, r) = mean_propagate(&s.mean(self.spec.param_floor), a, &self.spec);
        (PlanState::Point(next), r)
    }

    fn rollout(&self, s: &PlanState<T>, depth: usize, discount: T) -> T {
        rollout(&s.mean(self.spec.param_floor), depth, discount, &self.mpc, &self.spec)
    }

    fn default_action(&self) -> Control<T> {
        Control::zero()
    }
}

/// Discounted return of `depth` mean-propagation steps under an MPC plan
/// computed once at `xi` and applied open loop (zeros past its horizon).
pub fn rollout<T: Real>(xi: &Hyperstate<T>, depth: usize, discount: T, params: &MpcParams<T>, spec: &PlantSpec<T>) -> T {
    if depth == 0 {
        return T::zero();
    }
    let p = MpcParams { horizon: params.horizon.min(depth), ..*params };
    let plan = mpc::plan(&xi.state, &xi.params, &p, spec);
    let mut xi = *xi;
    let mut total = T::zero();
    let mut disc = T::one();
    for k in 0..depth {
        let u = plan.controls.get(k).copied().unwrap_or_else(Control::zero);
        let (next, r) = mean_propagate(&xi, &u, spec);
        total += disc * r;
        disc *= discount;
        xi = next;
    }
    total
}

/// Candidate action for a belief: uniform with probability `epsilon_mpc`,
/// otherwise the MPC action at a sampled hyperstate, passed through the
/// bounding filter when one is given.
pub fn propose_action<T: Real, R: Rng + ?Sized>(b: &BeliefState<T>, params: &SearchParams<T>, spec: &PlantSpec<T>, rng: &mut R) -> Proposal<Control<T>> {
    let model = BeliefModel::new(spec, params);
    model.propose(&PlanState::Belief(b.clone()), &mut None, rng)
}

/// Plans one action for belief `b`.
pub fn plan<T: Real, R: Rng + ?Sized>(b: &BeliefState<T>, params: &SearchParams<T>, spec: &PlantSpec<T>, rng: &mut R) -> SearchOutcome<Control<T>, T> {
    let model = BeliefModel::new(spec, params);
    search(&model, PlanState::Belief(b.clone()), params, rng).0
}
