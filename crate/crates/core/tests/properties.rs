mod common;

use std::sync::Arc;

use moorebelief::interpretation::{
    check_influenced_filtering, check_plain_filtering, check_proposition1, min_positive_marginal, ActionFunction,
    FilteringModel, Interpretation, Prop1Outcome, Psi,
};
use moorebelief::io::{emit, ModelDocument, PomdpDoc};
use moorebelief::machine::{BeliefDynamics, BeliefMachine, MachineState, StateSample, StochasticMooreMachine};
use moorebelief::pomdp::Pomdp;
use moorebelief::prob::{joint_then_condition, FiniteDist, JointDist, LabelSet};
use moorebelief::solver::{
    brute_force_values, canonical_machine, enumerate_backup, mdp_value_iteration, pomdp_value_iteration,
    pomdp_value_iteration_shared, prune_on_witnesses, simplex_grid, AlphaVector, AlphaVectorPolicy, Mdp,
    PolicyFilter, ReachLimits, SolverConfig, DEFAULT_TREE_BUDGET,
};
use moorebelief::{sondik, Result};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn sizes() -> impl Strategy<Value = (u64, usize, usize, usize)> {
    (any::<u64>(), 1..=3usize, 1..=3usize, 1..=3usize)
}

fn grid_max(vectors: &[AlphaVector], b: &[f64]) -> f64 {
    vectors
        .iter()
        .map(|v| v.values.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

fn seeds(p: &Pomdp) -> Vec<FiniteDist> {
    let n = p.hidden().len();
    let mut out = vec![p.belief(vec![1.0 / n as f64; n]).unwrap()];
    out.extend((0..n).map(|h| common::vertex(p, h)));
    out
}

/// The canonical filter with every posterior nudged towards a fixed
/// direction, so that consistency holds only approximately.
#[derive(Debug)]
struct NoisyFilter {
    inner: PolicyFilter,
    eta: f64,
}

impl BeliefDynamics for NoisyFilter {
    fn hidden(&self) -> &LabelSet {
        self.inner.hidden()
    }

    fn next(&self, input: usize, belief: &[f64]) -> Result<Vec<f64>> {
        let mut w = self.inner.next(input, belief)?;
        for x in w.iter_mut() {
            *x *= 1.0 - self.eta;
        }
        w[0] += self.eta;
        Ok(w)
    }

    fn expose(&self, belief: &[f64]) -> Result<usize> {
        self.inner.expose(belief)
    }
}

fn noisy_machine(pol: &AlphaVectorPolicy, eta: f64) -> StochasticMooreMachine {
    let p = pol.model();
    StochasticMooreMachine::Belief(BeliefMachine::new(
        p.sensors().clone(),
        p.actions().clone(),
        Arc::new(NoisyFilter {
            inner: PolicyFilter::new(pol.clone()),
            eta,
        }),
    ))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn normalized_distributions_sum_to_one(weights in prop::collection::vec(0.0f64..10.0, 1..8)) {
        prop_assume!(weights.iter().any(|&w| w > 0.0));
        let set = LabelSet::numbered("X", weights.len()).unwrap();
        let d = FiniteDist::normalized(set, weights).unwrap();
        prop_assert!((d.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn pushforward_stays_normalized((seed, n, _, _) in sizes()) {
        let mut r = rng(seed);
        let x = LabelSet::numbered("X", n).unwrap();
        let k = common::random_kernel(&mut r, vec![x.clone()], &x, 0.3);
        let d = FiniteDist::new(x.clone(), common::random_weights(&mut r, n, 0.3)).unwrap();
        let out = k.pushforward(&d).unwrap();
        prop_assert!((out.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn conditioning_round_trip((seed, ny, nz, _) in sizes()) {
        let mut r = rng(seed);
        let y = LabelSet::numbered("Y", ny).unwrap();
        let z = LabelSet::numbered("Z", nz).unwrap();
        let j = JointDist::new(y, z.clone(), common::random_weights(&mut r, ny * nz, 0.3)).unwrap();
        for (zi, label) in z.iter().enumerate() {
            let column = j.column(zi);
            match joint_then_condition(&j, label).unwrap().posterior() {
                Some(post) => {
                    let marginal: f64 = column.iter().sum();
                    for (k, c) in column.iter().enumerate() {
                        prop_assert!((post.weight(k) * marginal - c).abs() <= 1e-12);
                    }
                }
                None => prop_assert!(column.iter().all(|&c| c == 0.0)),
            }
        }
    }

    #[test]
    fn joint_kernel_rows_sum_to_one((seed, nh, na, ns) in sizes()) {
        let p = common::random_pomdp(&mut rng(seed), nh, na, ns, 0.9);
        for h in 0..nh {
            for a in 0..na {
                let total: f64 = p.kappa().row(h, a).marginal_first().weights().iter().sum();
                prop_assert!((total - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn bayes_consistency((seed, nh, na, ns) in sizes()) {
        let mut r = rng(seed);
        let p = common::random_pomdp(&mut r, nh, na, ns, 0.9);
        let b = common::random_belief(&mut r, &p);
        let nu = p.kappa().state_marginal().unwrap();
        for a in 0..na {
            let prior: Vec<f64> = (0..nh)
                .map(|h2| (0..nh).map(|h| b.weight(h) * nu.row(&[h, a]).weight(h2)).sum())
                .collect();
            let mut mixed = vec![0.0; nh];
            for s in 0..ns {
                let c = p.belief_update_index(&b, a, s).unwrap();
                if let Some(post) = c.posterior() {
                    prop_assert!((post.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                    for (h, m) in mixed.iter_mut().enumerate() {
                        *m += c.marginal() * post.weight(h);
                    }
                }
            }
            for h in 0..nh {
                prop_assert!((mixed[h] - prior[h]).abs() <= 1e-9);
            }
            let total: f64 = p.belief_transition_index(&b, a).unwrap().iter().map(|t| t.1).sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn mdp_bellman_residual_within_epsilon((seed, nx, na, _) in sizes()) {
        let p = common::random_pomdp(&mut rng(seed), nx, na, 1, 0.9);
        let m = Mdp::underlying(&p).unwrap();
        let eps = 1e-7;
        let sol = mdp_value_iteration(&m, eps).unwrap();
        for x in 0..nx {
            let best = (0..na)
                .map(|a| m.reward(x, a) + m.discount() * m.transition().row(&[x, a]).expect(&sol.values))
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((best - sol.values[x]).abs() <= eps);
        }
    }

    #[test]
    fn machine_runs_are_reproducible(seed in any::<u64>(), inputs in prop::collection::vec(0..2usize, 0..20)) {
        let m = sondik::machine();
        let labels: Vec<&str> = inputs.iter().map(|&i| if i == 0 { "1" } else { "2" }).collect();
        let a = m.run(MachineState::Point(0.3), &labels, seed).unwrap();
        let b = m.run(MachineState::Point(0.3), &labels, seed.wrapping_add(1)).unwrap();
        prop_assert_eq!(a.steps, b.steps);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn value_is_convex_on_the_grid((seed, _, na, ns) in sizes()) {
        let mut r = rng(seed);
        let p = common::random_pomdp(&mut r, 2, na, ns, 0.9);
        let pol = pomdp_value_iteration(&p, &SolverConfig::horizon(4)).unwrap();
        let grid = simplex_grid(2, 40);
        for _ in 0..50 {
            let (i, j) = (r.gen_range(0..grid.len()), r.gen_range(0..grid.len()));
            let lambda: f64 = r.gen();
            let mid: Vec<f64> = grid[i].iter().zip(&grid[j]).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect();
            let v = |w: &[f64]| pol.value(&p.belief(w.to_vec()).unwrap()).unwrap();
            prop_assert!(v(&mid) <= lambda * v(&grid[i]) + (1.0 - lambda) * v(&grid[j]) + 1e-9);
        }
    }

    #[test]
    fn pruning_keeps_grid_values((seed, nh, na, ns) in sizes()) {
        let p = common::random_pomdp(&mut rng(seed), nh, na, ns, 0.9);
        let grid = simplex_grid(nh, 12);
        let zero = vec![AlphaVector { values: vec![0.0; nh], action: 0 }];
        let stage1 = enumerate_backup(&p, &zero, 1_000_000).unwrap();
        let stage2 = enumerate_backup(&p, &prune_on_witnesses(&stage1, &grid), 1_000_000).unwrap();
        let pruned = prune_on_witnesses(&stage2, &grid);
        for b in &grid {
            prop_assert!((grid_max(&stage2, b) - grid_max(&pruned, b)).abs() <= 1e-12);
        }
        // The solver's direct witness selection gives the same function.
        let mut cfg = SolverConfig::horizon(2).with_witness_resolution(12);
        cfg.budget = 1_000_000;
        let pol = pomdp_value_iteration(&p, &cfg).unwrap();
        for b in &grid {
            prop_assert!((grid_max(pol.vectors(), b) - grid_max(&pruned, b)).abs() <= 1e-12);
        }
    }

    #[test]
    fn solver_matches_brute_force((seed, nh, na, ns) in sizes(), horizon in 1..=3usize) {
        let mut r = rng(seed);
        let p = common::random_pomdp(&mut r, nh, na, ns, 0.9);
        let pol = pomdp_value_iteration(&p, &SolverConfig::horizon(horizon)).unwrap();
        let beliefs: Vec<_> = (0..20).map(|_| common::random_belief(&mut r, &p)).collect();
        let oracle = brute_force_values(&p, &beliefs, horizon, DEFAULT_TREE_BUDGET).unwrap();
        for (b, want) in beliefs.iter().zip(oracle) {
            prop_assert!((pol.value(b).unwrap() - want).abs() <= 1e-9);
        }
    }

    #[test]
    fn value_beats_every_fixed_action_plan((seed, nh, na, ns) in sizes()) {
        let p = Arc::new(common::random_pomdp(&mut rng(seed), nh, na, ns, 0.9));
        let cfg = SolverConfig::epsilon(1e-6).with_witness_resolution(16);
        let pol = pomdp_value_iteration_shared(p.clone(), &cfg).unwrap();
        let nu = p.kappa().state_marginal().unwrap();
        for a in 0..na {
            // Fixed point of the single-action policy evaluation, iterated independently.
            let mut w = vec![0.0; nh];
            for _ in 0..2000 {
                w = (0..nh).map(|h| p.utility(h, a) + 0.9 * nu.row(&[h, a]).expect(&w)).collect();
            }
            for b in simplex_grid(nh, 16) {
                let fixed: f64 = b.iter().zip(&w).map(|(x, y)| x * y).sum();
                prop_assert!(pol.value(&p.belief(b).unwrap()).unwrap() >= fixed - 1e-9);
            }
        }
    }

    #[test]
    fn canonical_outputs_are_optimal_actions((seed, nh, na, ns) in sizes()) {
        let p = Arc::new(common::random_pomdp(&mut rng(seed), nh, na, ns, 0.9));
        let pol = pomdp_value_iteration_shared(p.clone(), &SolverConfig::horizon(3)).unwrap();
        let limits = ReachLimits { max_depth: 3, ..ReachLimits::default() };
        let canon = canonical_machine(&pol, &seeds(&p), limits).unwrap();
        for (m, b) in canon.reachable_states().iter().zip(&canon.reachable) {
            prop_assert_eq!(canon.machine.expose(m).unwrap(), pol.optimal_policy_at(b).unwrap().action);
        }
    }

    #[test]
    fn optimal_update_error_is_bounded_by_filtering_error((seed, nh, na, ns) in sizes(), eta in 1e-6f64..1e-3) {
        let p = Arc::new(common::random_pomdp(&mut rng(seed), nh, na, ns, 0.9));
        let pol = pomdp_value_iteration_shared(p.clone(), &SolverConfig::horizon(3)).unwrap();
        let limits = ReachLimits { max_depth: 3, ..ReachLimits::default() };
        let states = canonical_machine(&pol, &seeds(&p), limits).unwrap().reachable_states();
        let machine = noisy_machine(&pol, eta);
        let psi = Psi::Identity(p.hidden().clone());
        let itp = Interpretation::new(psi.clone(), ActionFunction::Expose, p.kappa().clone()).unwrap();
        let sample = StateSample::Explicit(states.clone());
        let t = check_influenced_filtering(&machine, &itp, &sample, 1.0).unwrap().max_residual;
        let floor = min_positive_marginal(&machine, &itp, &sample).unwrap();
        for m in &states {
            for i in 0..ns {
                if let Prop1Outcome::Checked { residual, .. } =
                    check_proposition1(&machine, &p, &psi, &pol, m, i, 1.0).unwrap()
                {
                    prop_assert!(residual <= 2.0 * t / floor + 1e-15, "{residual} > 2 * {t} / {floor}");
                }
            }
        }
    }

    #[test]
    fn single_action_matches_plain_filtering((seed, nh, _, ns) in sizes(), noisy in any::<bool>()) {
        let p = Arc::new(common::random_pomdp(&mut rng(seed), nh, 1, ns, 0.9));
        let pol = pomdp_value_iteration_shared(p.clone(), &SolverConfig::horizon(1)).unwrap();
        let limits = ReachLimits { max_depth: 3, ..ReachLimits::default() };
        let states = canonical_machine(&pol, &seeds(&p), limits).unwrap().reachable_states();
        let machine = noisy_machine(&pol, if noisy { 1e-4 } else { 0.0 });
        let psi = Psi::Identity(p.hidden().clone());
        let sample = StateSample::Explicit(states);

        let itp = Interpretation::new(psi.clone(), ActionFunction::Expose, p.kappa().clone()).unwrap();
        let influenced = check_influenced_filtering(&machine, &itp, &sample, 1e-9).unwrap();
        let model = FilteringModel { rows: (0..nh).map(|h| p.kappa().row(h, 0)).collect() };
        let plain = check_plain_filtering(&machine, &psi, &model, &sample, 1e-9).unwrap();
        prop_assert_eq!(influenced.verdict, plain.verdict);
        prop_assert!((influenced.max_residual - plain.max_residual).abs() <= 1e-15);
        prop_assert_eq!(influenced.violations.len(), plain.violations.len());
        prop_assert_eq!(
            influenced.skipped_subjectively_impossible.len(),
            plain.skipped_subjectively_impossible.len()
        );
    }

    #[test]
    fn documents_round_trip((seed, nh, na, ns) in sizes(), joint in any::<bool>()) {
        let mut r = rng(seed);
        let gamma = r.gen_range(0.5..0.99);
        let mut p = common::random_pomdp(&mut r, nh, na, ns, gamma);
        if joint {
            p = Pomdp::from_joint(p.kappa().clone(), p.reward_table().to_vec(), p.discount()).unwrap();
        }
        let doc = ModelDocument::Pomdp(PomdpDoc::from_pomdp(&p));
        let back = ModelDocument::parse(&emit(&doc)).unwrap();
        prop_assert_eq!(&back, &doc);
        let q = back.into_pomdp().unwrap().to_pomdp().unwrap();
        prop_assert_eq!(q.hidden(), p.hidden());
        for h in 0..nh {
            for a in 0..na {
                for h2 in 0..nh {
                    for s in 0..ns {
                        prop_assert!((q.kappa().get(h, a, h2, s) - p.kappa().get(h, a, h2, s)).abs() <= 1e-12);
                    }
                }
            }
        }
    }
}

#[test]
fn skipped_inputs_are_never_violations() {
    // Under the Sondik model every input has positive probability, so build a
    // model where one observation is impossible from some beliefs.
    let p = Arc::new(common::fully_observed_pomdp(&mut rng(11), 3, 2, 0.9));
    let pol = pomdp_value_iteration_shared(p.clone(), &SolverConfig::horizon(2)).unwrap();
    let states = canonical_machine(&pol, &seeds(&p), ReachLimits::default()).unwrap().reachable_states();
    let machine = noisy_machine(&pol, 0.0);
    let itp = Interpretation::new(Psi::Identity(p.hidden().clone()), ActionFunction::Expose, p.kappa().clone())
        .unwrap();
    let report = check_influenced_filtering(&machine, &itp, &StateSample::Explicit(states), 1e-9).unwrap();
    assert!(!report.skipped_subjectively_impossible.is_empty());
    for (m, i) in &report.skipped_subjectively_impossible {
        assert!(!report.violations.iter().any(|v| &v.state == m && v.input == *i));
    }
    assert!(report.passed());
}
