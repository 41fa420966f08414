//! Dynamic programming for finite MDPs and for POMDPs through their
//! belief-state MDP.
//!
//! POMDP value functions are kept as sets of alpha vectors. A backup
//! conceptually enumerates every `(action, per-observation choice of
//! previous vector)` combination and then discards vectors that are not
//! maximal at any point of a witness grid on the belief simplex. Since the
//! maximizer at a witness decomposes per observation, the pruned set is built
//! directly by selecting, at each witness, the best previous vector for every
//! observation; [`enumerate_backup`] and [`prune_on_witnesses`] provide the
//! literal two-step route for cross-checking.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::machine::{BeliefDynamics, BeliefMachine, StochasticMooreMachine};
use crate::pomdp::{Belief, Pomdp, BELIEF_MERGE_TOL};
use crate::prob::{Conditioned, FiniteDist, LabelSet, TabularKernel};

pub const DEFAULT_EPSILON: f64 = 1e-7;
pub const DEFAULT_WITNESS_RESOLUTION: usize = 200;
pub const DEFAULT_VECTOR_BUDGET: usize = 100_000;
pub const DEFAULT_TREE_BUDGET: usize = 5_000_000;

/// Vectors closer than this in max-abs are treated as one.
const DUPLICATE_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct Mdp {
    states: LabelSet,
    actions: LabelSet,
    /// `τ: X × A → PX`.
    transition: TabularKernel,
    /// Row-major `r[x][a]`.
    reward: Vec<f64>,
    discount: f64,
}

impl Mdp {
    pub fn new(transition: TabularKernel, reward: Vec<f64>, discount: f64) -> Result<Self> {
        let [states, actions] = transition.domain() else {
            return Err(Error::Domain("MDP transition must have domain X × A".into()));
        };
        transition.codomain().check_same(states, "MDP transition codomain")?;
        if reward.len() != states.len() * actions.len() {
            return Err(Error::Domain(format!(
                "reward table needs {} entries, got {}",
                states.len() * actions.len(),
                reward.len()
            )));
        }
        if let Some(r) = reward.iter().find(|r| !r.is_finite()) {
            return Err(Error::Model(format!("non-finite reward {r}")));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::Model(format!("discount {discount} outside (0, 1)")));
        }
        Ok(Self {
            states: states.clone(),
            actions: actions.clone(),
            transition,
            reward,
            discount,
        })
    }

    /// The MDP underlying a POMDP: same hidden dynamics, utilities in the
    /// maximization sense.
    pub fn underlying(p: &Pomdp) -> Result<Self> {
        let transition = p.kappa().state_marginal()?;
        let (nh, na) = (p.hidden().len(), p.actions().len());
        let reward = (0..nh * na).map(|k| p.utility(k / na, k % na)).collect();
        Self::new(transition, reward, p.discount())
    }

    pub fn states(&self) -> &LabelSet {
        &self.states
    }

    pub fn actions(&self) -> &LabelSet {
        &self.actions
    }

    pub fn transition(&self) -> &TabularKernel {
        &self.transition
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn reward(&self, x: usize, a: usize) -> f64 {
        self.reward[x * self.actions.len() + a]
    }

    fn q_value(&self, values: &[f64], x: usize, a: usize) -> f64 {
        self.reward(x, a) + self.discount * self.transition.row(&[x, a]).expect(values)
    }

    /// One Bellman backup, returning the new values and greedy actions.
    fn backup(&self, values: &[f64]) -> (Vec<f64>, Vec<usize>) {
        (0..self.states.len())
            .map(|x| {
                let mut best = (f64::NEG_INFINITY, 0);
                for a in 0..self.actions.len() {
                    let q = self.q_value(values, x, a);
                    if q > best.0 {
                        best = (q, a);
                    }
                }
                best
            })
            .unzip()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MdpSolution {
    pub values: Vec<f64>,
    /// Greedy action per state, lowest index on ties.
    pub policy: Vec<usize>,
    /// Sup-norm Bellman residual of `values`.
    pub residual: f64,
    pub iterations: usize,
}

/// Value iteration until the returned values are within `epsilon / 2` of the
/// optimum, which also bounds their Bellman residual by `epsilon`.
pub fn mdp_value_iteration(m: &Mdp, epsilon: f64) -> Result<MdpSolution> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Model(format!("epsilon must be positive, got {epsilon}")));
    }
    let gamma = m.discount;
    let threshold = epsilon * (1.0 - gamma) / (2.0 * gamma);
    let mut values = vec![0.0; m.states.len()];
    let mut iterations = 0;
    loop {
        let (next, _) = m.backup(&values);
        iterations += 1;
        let change = sup_distance(&next, &values);
        values = next;
        if change <= threshold {
            break;
        }
    }
    let (check, policy) = m.backup(&values);
    Ok(MdpSolution {
        residual: sup_distance(&check, &values),
        values,
        policy,
        iterations,
    })
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A linear functional on the belief simplex tagged with the action of its
/// first step. Values are utilities (maximization sense).
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaVector {
    pub values: Vec<f64>,
    pub action: usize,
}

/// When value iteration stops.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stopping {
    /// Exactly this many backups from the zero function.
    Horizon(usize),
    /// Until the solution is `epsilon`-optimal on the witness grid.
    Epsilon(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub stopping: Stopping,
    /// Denominator of the witness grid on the simplex.
    pub witness_resolution: usize,
    /// Maximum number of alpha vectors retained (or enumerated) per stage.
    pub budget: usize,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            stopping: Stopping::Epsilon(DEFAULT_EPSILON),
            witness_resolution: DEFAULT_WITNESS_RESOLUTION,
            budget: DEFAULT_VECTOR_BUDGET,
            max_iterations: 1_000_000,
        }
    }
}

impl SolverConfig {
    pub fn horizon(horizon: usize) -> Self {
        Self {
            stopping: Stopping::Horizon(horizon),
            ..Self::default()
        }
    }

    pub fn epsilon(epsilon: f64) -> Self {
        Self {
            stopping: Stopping::Epsilon(epsilon),
            ..Self::default()
        }
    }

    pub fn with_witness_resolution(mut self, resolution: usize) -> Self {
        self.witness_resolution = resolution;
        self
    }
}

/// A piecewise-linear convex value function with its greedy policy.
#[derive(Clone, Debug)]
pub struct AlphaVectorPolicy {
    model: Arc<Pomdp>,
    vectors: Vec<AlphaVector>,
    stages: usize,
    last_change: f64,
}

/// The decision of [`AlphaVectorPolicy::optimal_policy_at`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub action: usize,
    /// One-step lookahead value, in the model's objective units.
    pub value: f64,
}

impl AlphaVectorPolicy {
    /// Wraps explicit vectors, e.g. for evaluating a hand-built value function.
    pub fn from_vectors(model: Arc<Pomdp>, vectors: Vec<AlphaVector>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::Model("alpha-vector set is empty".into()));
        }
        for v in &vectors {
            if v.values.len() != model.hidden().len() || v.action >= model.actions().len() {
                return Err(Error::Domain("alpha vector does not match the model".into()));
            }
        }
        Ok(Self {
            model,
            vectors,
            stages: 0,
            last_change: f64::NAN,
        })
    }

    pub fn model(&self) -> &Arc<Pomdp> {
        &self.model
    }

    pub fn vectors(&self) -> &[AlphaVector] {
        &self.vectors
    }

    pub fn discount(&self) -> f64 {
        self.model.discount()
    }

    /// Number of backups performed.
    pub fn stages(&self) -> usize {
        self.stages
    }

    /// Sup-norm change on the witness grid during the final backup.
    pub fn last_change(&self) -> f64 {
        self.last_change
    }

    fn utility_at(&self, b: &[f64]) -> f64 {
        self.vectors
            .iter()
            .map(|v| dot(&v.values, b))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn check_belief(&self, b: &Belief) -> Result<()> {
        b.set().check_same(self.model.hidden(), "policy belief")
    }

    /// `max_α ⟨α, b⟩`, in the model's objective units.
    pub fn value(&self, b: &Belief) -> Result<f64> {
        self.check_belief(b)?;
        Ok(self.model.objective().sign() * self.utility_at(b.weights()))
    }

    /// Greedy action and value at `b` by one-step lookahead on the stored
    /// value function. Ties go to the lowest action index.
    pub fn optimal_policy_at(&self, b: &Belief) -> Result<Decision> {
        self.check_belief(b)?;
        let p = &self.model;
        let gamma = p.discount();
        let mut best = (f64::NEG_INFINITY, 0);
        for a in 0..p.actions().len() {
            let mut q = p.objective().sign() * p.belief_reward_index(b, a);
            let joint = p.predictive(b, a)?;
            for s in 0..p.sensors().len() {
                if let Conditioned::Posterior { posterior, marginal } = joint.condition_on_second_index(s) {
                    q += gamma * marginal * self.utility_at(posterior.weights());
                }
            }
            if q > best.0 {
                best = (q, a);
            }
        }
        Ok(Decision {
            action: best.1,
            value: p.objective().sign() * best.0,
        })
    }
}

/// Free-function form of [`AlphaVectorPolicy::optimal_policy_at`].
pub fn optimal_policy_at(pol: &AlphaVectorPolicy, b: &Belief) -> Result<Decision> {
    pol.optimal_policy_at(b)
}

/// All points of the simplex in `dim` dimensions with coordinates that are
/// multiples of `1 / resolution`, in lexicographic order.
pub fn simplex_grid(dim: usize, resolution: usize) -> Vec<Vec<f64>> {
    fn fill(dim: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() + 1 == dim {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in (0..=left).rev() {
            prefix.push(k);
            fill(dim, left - k, prefix, out);
            prefix.pop();
        }
    }
    if dim == 0 {
        return Vec::new();
    }
    let resolution = resolution.max(1);
    let mut raw = Vec::new();
    fill(dim, resolution, &mut Vec::with_capacity(dim), &mut raw);
    raw.into_iter()
        .map(|p| p.into_iter().map(|k| k as f64 / resolution as f64).collect())
        .collect()
}

/// `Σ_{h'} κ(h', s | h, a) α(h')` for every `(a, s, α)`, flattened as
/// `[a][s][k] -> Vec<h>`.
struct Projections {
    na: usize,
    ns: usize,
    nk: usize,
    data: Vec<Vec<f64>>,
}

impl Projections {
    fn new(p: &Pomdp, vectors: &[AlphaVector]) -> Self {
        let (nh, na, ns) = (p.hidden().len(), p.actions().len(), p.sensors().len());
        let kappa = p.kappa();
        let mut data = Vec::with_capacity(na * ns * vectors.len());
        for a in 0..na {
            for s in 0..ns {
                for v in vectors {
                    data.push(
                        (0..nh)
                            .map(|h| (0..nh).map(|h2| kappa.get(h, a, h2, s) * v.values[h2]).sum())
                            .collect(),
                    );
                }
            }
        }
        Self {
            na,
            ns,
            nk: vectors.len(),
            data,
        }
    }

    fn get(&self, a: usize, s: usize, k: usize) -> &[f64] {
        &self.data[(a * self.ns + s) * self.nk + k]
    }

    /// The vector for action `a` with previous-stage choices `choice[s]`.
    fn combine(&self, p: &Pomdp, a: usize, choice: &[usize]) -> AlphaVector {
        let gamma = p.discount();
        let values = (0..p.hidden().len())
            .map(|h| {
                p.utility(h, a)
                    + gamma * choice.iter().enumerate().map(|(s, &k)| self.get(a, s, k)[h]).sum::<f64>()
            })
            .collect();
        AlphaVector { values, action: a }
    }

    /// Best `(action, choices)` at belief `b`, lowest indices on ties.
    fn select(&self, p: &Pomdp, b: &[f64]) -> (usize, Vec<usize>) {
        let gamma = p.discount();
        let mut best: Option<(f64, usize, Vec<usize>)> = None;
        for a in 0..self.na {
            let mut q: f64 = (0..b.len()).map(|h| b[h] * p.utility(h, a)).sum();
            let mut choice = Vec::with_capacity(self.ns);
            for s in 0..self.ns {
                let mut arg = (f64::NEG_INFINITY, 0);
                for k in 0..self.nk {
                    let v = dot(self.get(a, s, k), b);
                    if v > arg.0 {
                        arg = (v, k);
                    }
                }
                q += gamma * arg.0;
                choice.push(arg.1);
            }
            if best.as_ref().is_none_or(|(bq, _, _)| q > *bq) {
                best = Some((q, a, choice));
            }
        }
        let (_, a, choice) = best.expect("at least one action");
        (a, choice)
    }
}

/// Every backed-up vector, one per `(action, choice tuple)`, without pruning.
pub fn enumerate_backup(p: &Pomdp, vectors: &[AlphaVector], budget: usize) -> Result<Vec<AlphaVector>> {
    let (na, ns, nk) = (p.actions().len(), p.sensors().len(), vectors.len());
    let needed = na as f64 * (nk as f64).powi(ns as i32);
    if needed > budget as f64 {
        return Err(Error::Budget {
            what: "enumerated alpha vectors",
            needed,
            budget,
        });
    }
    let proj = Projections::new(p, vectors);
    let mut out = Vec::with_capacity(needed as usize);
    let mut choice = vec![0; ns];
    for a in 0..na {
        loop {
            out.push(proj.combine(p, a, &choice));
            if !advance(&mut choice, nk) {
                break;
            }
        }
    }
    Ok(out)
}

/// Odometer increment; false once every tuple has been produced.
fn advance(digits: &mut [usize], base: usize) -> bool {
    for d in digits.iter_mut().rev() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

/// Keeps the vectors that are maximal at some witness (first on ties), then
/// drops duplicates and pointwise-dominated vectors.
pub fn prune_on_witnesses(vectors: &[AlphaVector], witnesses: &[Vec<f64>]) -> Vec<AlphaVector> {
    clean(winners(vectors, witnesses, 0.0).into_iter().map(|k| vectors[k].clone()).collect())
}

/// Indices (ascending) of the vectors chosen at some witness, where each
/// witness takes the lowest-index vector within `slack` of its maximum.
fn winners(vectors: &[AlphaVector], witnesses: &[Vec<f64>], slack: f64) -> Vec<usize> {
    let chosen: Vec<usize> = witnesses
        .par_iter()
        .map(|b| {
            let values: Vec<f64> = vectors.iter().map(|v| dot(&v.values, b)).collect();
            let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            values.iter().position(|&x| x >= best - slack).unwrap_or(0)
        })
        .collect();
    let mut keep = vec![false; vectors.len()];
    for k in chosen {
        keep[k] = true;
    }
    (0..vectors.len()).filter(|&k| keep[k]).collect()
}

fn clean(vectors: Vec<AlphaVector>) -> Vec<AlphaVector> {
    let mut unique: Vec<AlphaVector> = Vec::with_capacity(vectors.len());
    for v in vectors {
        if !unique.iter().any(|u| sup_distance(&u.values, &v.values) <= DUPLICATE_TOL) {
            unique.push(v);
        }
    }
    let dominated: Vec<bool> = unique
        .iter()
        .enumerate()
        .map(|(i, v)| {
            unique
                .iter()
                .enumerate()
                .any(|(j, u)| i != j && u.values.iter().zip(&v.values).all(|(x, y)| x >= y))
        })
        .collect();
    unique
        .into_iter()
        .zip(dominated)
        .filter(|(_, d)| !d)
        .map(|(v, _)| v)
        .collect()
}

fn witness_backup(p: &Pomdp, vectors: &[AlphaVector], witnesses: &[Vec<f64>], budget: usize) -> Result<Vec<AlphaVector>> {
    let proj = Projections::new(p, vectors);
    let keys: Vec<(usize, Vec<usize>)> = witnesses.par_iter().map(|b| proj.select(p, b)).collect();
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for key in keys {
        if seen.contains_key(&key) {
            continue;
        }
        let v = proj.combine(p, key.0, &key.1);
        seen.insert(key, ());
        out.push(v);
        if out.len() > budget {
            return Err(Error::Budget {
                what: "retained alpha vectors",
                needed: out.len() as f64,
                budget,
            });
        }
    }
    Ok(clean(out))
}

fn grid_values(vectors: &[AlphaVector], witnesses: &[Vec<f64>]) -> Vec<f64> {
    witnesses
        .par_iter()
        .map(|b| vectors.iter().map(|v| dot(&v.values, b)).fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Alpha-vector value iteration on the belief-state MDP of `p`.
pub fn pomdp_value_iteration(p: &Pomdp, config: &SolverConfig) -> Result<AlphaVectorPolicy> {
    pomdp_value_iteration_shared(Arc::new(p.clone()), config)
}

pub fn pomdp_value_iteration_shared(p: Arc<Pomdp>, config: &SolverConfig) -> Result<AlphaVectorPolicy> {
    let witnesses = simplex_grid(p.hidden().len(), config.witness_resolution);
    match config.stopping {
        Stopping::Horizon(0) => Err(Error::Model("horizon must be at least 1".into())),
        Stopping::Horizon(h) => {
            let mut vectors = vec![AlphaVector {
                values: vec![0.0; p.hidden().len()],
                action: 0,
            }];
            let mut values = vec![0.0; witnesses.len()];
            let mut change = f64::INFINITY;
            for _ in 0..h {
                vectors = witness_backup(&p, &vectors, &witnesses, config.budget)?;
                let next = grid_values(&vectors, &witnesses);
                change = sup_distance(&next, &values);
                values = next;
            }
            Ok(AlphaVectorPolicy {
                model: p,
                vectors,
                stages: h,
                last_change: change,
            })
        }
        Stopping::Epsilon(eps) if eps > 0.0 => converge(p, &witnesses, eps, config),
        Stopping::Epsilon(eps) => Err(Error::Model(format!("epsilon must be positive, got {eps}"))),
    }
}

/// Value of following action `a` forever regardless of observations.
fn blind_vector(p: &Pomdp, a: usize) -> AlphaVector {
    let nh = p.hidden().len();
    let gamma = p.discount();
    let next = p.kappa().state_marginal().expect("kappa has a state marginal");
    let scale = (0..nh).map(|h| p.utility(h, a).abs()).fold(1.0, f64::max) / (1.0 - gamma);
    let mut values = vec![0.0; nh];
    loop {
        let updated: Vec<f64> = (0..nh)
            .map(|h| p.utility(h, a) + gamma * next.row(&[h, a]).expect(&values))
            .collect();
        let change = sup_distance(&updated, &values);
        values = updated;
        if change <= 1e-15 * scale {
            break;
        }
    }
    AlphaVector { values, action: a }
}

/// Infinite-horizon iteration. Starts from the fixed-action plans, which
/// bound the optimal value from below, and keeps last stage's vectors as
/// candidates so that values on the grid never decrease. A witness keeps
/// an older vector when it is within a small slack of the best candidate,
/// which stops the vector set from fragmenting into near-copies.
fn converge(p: Arc<Pomdp>, witnesses: &[Vec<f64>], eps: f64, config: &SolverConfig) -> Result<AlphaVectorPolicy> {
    let gamma = p.discount();
    let threshold = eps * (1.0 - gamma) / (2.0 * gamma);
    let slack = threshold / 16.0;
    let mut vectors = clean((0..p.actions().len()).map(|a| blind_vector(&p, a)).collect());
    let mut values = grid_values(&vectors, witnesses);
    let mut stages = 0;
    let mut change = f64::INFINITY;
    while stages < config.max_iterations {
        let mut pool = vectors.clone();
        pool.extend(witness_backup(&p, &vectors, witnesses, config.budget)?);
        let kept = winners(&pool, witnesses, slack);
        vectors = clean(kept.into_iter().map(|k| pool[k].clone()).collect());
        stages += 1;
        let next = grid_values(&vectors, witnesses);
        change = sup_distance(&next, &values);
        values = next;
        if change <= threshold {
            return Ok(AlphaVectorPolicy {
                model: p,
                vectors,
                stages,
                last_change: change,
            });
        }
    }
    Err(Error::Model(format!(
        "value iteration did not converge in {} iterations (last change {change})",
        config.max_iterations
    )))
}

/// Best expected discounted reward from `b` over all depth-`horizon` policy
/// trees, found by exhaustive enumeration.
pub fn brute_force_value(p: &Pomdp, b: &Belief, horizon: usize, budget: usize) -> Result<f64> {
    Ok(brute_force_values(p, std::slice::from_ref(b), horizon, budget)?[0])
}

/// [`brute_force_value`] for several beliefs sharing one enumeration.
///
/// A tree's value is linear in the starting belief: `Σ_h b(h) W(h)` with
/// `W(h) = r(h, a) + γ Σ_{h', s} κ(h', s | h, a) W_s(h')`, where `a` is the
/// root action and `W_s` the value of the subtree taken after observing `s`.
pub fn brute_force_values(p: &Pomdp, beliefs: &[Belief], horizon: usize, budget: usize) -> Result<Vec<f64>> {
    if horizon == 0 {
        return Err(Error::Model("horizon must be at least 1".into()));
    }
    for b in beliefs {
        b.set().check_same(p.hidden(), "brute-force belief")?;
    }
    let (nh, na, ns) = (p.hidden().len(), p.actions().len(), p.sensors().len());
    let mut count = 1.0_f64;
    for _ in 0..horizon {
        count = na as f64 * count.powi(ns as i32);
        if count > budget as f64 {
            return Err(Error::Budget {
                what: "policy trees",
                needed: count,
                budget,
            });
        }
    }

    let gamma = p.discount();
    let kappa = p.kappa();
    let tree_value = |a: usize, subtrees: &[&[f64]]| -> Vec<f64> {
        (0..nh)
            .map(|h| {
                let mut future = 0.0;
                for h2 in 0..nh {
                    for (s, sub) in subtrees.iter().enumerate() {
                        future += kappa.get(h, a, h2, s) * sub[h2];
                    }
                }
                p.utility(h, a) + gamma * future
            })
            .collect()
    };

    // All trees one level short of the horizon, built level by level.
    let mut level: Vec<Vec<f64>> = vec![vec![0.0; nh]];
    for _ in 1..horizon {
        let mut next = Vec::new();
        let mut choice = vec![0; ns];
        for a in 0..na {
            loop {
                let subs: Vec<&[f64]> = choice.iter().map(|&k| level[k].as_slice()).collect();
                next.push(tree_value(a, &subs));
                if !advance(&mut choice, level.len()) {
                    break;
                }
            }
            choice.iter_mut().for_each(|c| *c = 0);
        }
        level = next;
    }

    // Stream the full-depth trees.
    let mut best = vec![f64::NEG_INFINITY; beliefs.len()];
    let mut choice = vec![0; ns];
    for a in 0..na {
        loop {
            let subs: Vec<&[f64]> = choice.iter().map(|&k| level[k].as_slice()).collect();
            let w = tree_value(a, &subs);
            for (slot, b) in best.iter_mut().zip(beliefs) {
                *slot = slot.max(dot(&w, b.weights()));
            }
            if !advance(&mut choice, level.len()) {
                break;
            }
        }
        choice.iter_mut().for_each(|c| *c = 0);
    }
    let sign = p.objective().sign();
    Ok(best.into_iter().map(|v| sign * v).collect())
}

/// Belief dynamics `b ↦ f(b, π*(b), s)`, exposing `π*(b)`. A zero-probability
/// observation leaves the belief unchanged.
#[derive(Debug)]
pub struct PolicyFilter {
    policy: AlphaVectorPolicy,
}

impl PolicyFilter {
    pub fn new(policy: AlphaVectorPolicy) -> Self {
        Self { policy }
    }

    pub fn policy(&self) -> &AlphaVectorPolicy {
        &self.policy
    }

    fn belief(&self, weights: &[f64]) -> Result<Belief> {
        FiniteDist::new(self.policy.model.hidden().clone(), weights.to_vec())
    }
}

impl BeliefDynamics for PolicyFilter {
    fn hidden(&self) -> &LabelSet {
        self.policy.model.hidden()
    }

    fn next(&self, input: usize, belief: &[f64]) -> Result<Vec<f64>> {
        let b = self.belief(belief)?;
        let a = self.policy.optimal_policy_at(&b)?.action;
        Ok(match self.policy.model.belief_update_index(&b, a, input)? {
            Conditioned::Posterior { posterior, .. } => posterior.weights().to_vec(),
            Conditioned::ZeroMarginal => belief.to_vec(),
        })
    }

    fn expose(&self, belief: &[f64]) -> Result<usize> {
        Ok(self.policy.optimal_policy_at(&self.belief(belief)?)?.action)
    }
}

/// Limits on the forward-reachability exploration of a canonical machine.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReachLimits {
    pub max_depth: usize,
    pub max_states: usize,
}

impl Default for ReachLimits {
    fn default() -> Self {
        Self {
            max_depth: 8,
            max_states: 10_000,
        }
    }
}

/// The belief machine of a policy, with the beliefs reached from the seeds.
#[derive(Clone, Debug)]
pub struct CanonicalMachine {
    pub machine: StochasticMooreMachine,
    /// Distinct beliefs reached from the seeds, in breadth-first order.
    pub reachable: Vec<Belief>,
    /// `(from, input, to)` indices into `reachable`; `to` is `None` when the
    /// successor lies beyond the depth limit.
    pub transitions: Vec<(usize, usize, Option<usize>)>,
}

impl CanonicalMachine {
    pub fn reachable_states(&self) -> Vec<crate::machine::MachineState> {
        self.reachable
            .iter()
            .map(|b| crate::machine::MachineState::Belief(b.weights().to_vec()))
            .collect()
    }
}

/// Builds the Moore machine whose states are beliefs, whose kernel is
/// `δ_{f(b, π*(b), s)}` and whose output is `π*(b)`, and explores the beliefs
/// reachable from `seeds`.
pub fn canonical_machine(pol: &AlphaVectorPolicy, seeds: &[Belief], limits: ReachLimits) -> Result<CanonicalMachine> {
    let p = pol.model.clone();
    let filter = Arc::new(PolicyFilter::new(pol.clone()));
    let machine = StochasticMooreMachine::Belief(BeliefMachine::new(
        p.sensors().clone(),
        p.actions().clone(),
        filter.clone(),
    ));

    let find = |list: &[Belief], b: &Belief| {
        list.iter()
            .position(|x| x.total_variation(b).is_ok_and(|tv| tv <= BELIEF_MERGE_TOL))
    };
    let mut reachable: Vec<Belief> = Vec::new();
    let mut depth: Vec<usize> = Vec::new();
    for seed in seeds {
        seed.set().check_same(p.hidden(), "canonical seed")?;
        if find(&reachable, seed).is_none() {
            reachable.push(seed.clone());
            depth.push(0);
        }
    }
    let mut transitions = Vec::new();
    let mut cursor = 0;
    while cursor < reachable.len() {
        let b = reachable[cursor].clone();
        for s in 0..p.sensors().len() {
            let next = FiniteDist::new(p.hidden().clone(), filter.next(s, b.weights())?)?;
            let target = match find(&reachable, &next) {
                Some(k) => Some(k),
                None if depth[cursor] < limits.max_depth => {
                    if reachable.len() >= limits.max_states {
                        return Err(Error::Budget {
                            what: "reachable beliefs",
                            needed: (reachable.len() + 1) as f64,
                            budget: limits.max_states,
                        });
                    }
                    reachable.push(next);
                    depth.push(depth[cursor] + 1);
                    Some(reachable.len() - 1)
                }
                None => None,
            };
            transitions.push((cursor, s, target));
        }
        cursor += 1;
    }
    Ok(CanonicalMachine {
        machine,
        reachable,
        transitions,
    })
}
