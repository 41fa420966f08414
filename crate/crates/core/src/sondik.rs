//! Sondik's two-state maintenance example: the machine on `[0, 1]`, its
//! Bernoulli interpretation, the POMDP data, and the end-to-end demo.
//!
//! The machine state `m` is read as the belief that the hidden state is `1`.
//! Its update `g` is the closed-form Bayes posterior under the action the
//! machine exposes, which switches at [`THRESHOLD`].

use std::sync::Arc;
use std::time::Instant;

use crate::error::Result;
use crate::interpretation::{
    check_influenced_filtering, check_pomdp_solution, ActionFunction, ConsistencyReport, Interpretation, Psi,
    SolutionReport,
};
use crate::machine::{IntervalDynamics, IntervalMachine, MachineState, StateSample, StochasticMooreMachine};
use crate::pomdp::{Objective, Pomdp};
use crate::prob::{FiniteDist, LabelSet, TabularKernel};
use crate::solver::{pomdp_value_iteration_shared, AlphaVectorPolicy, SolverConfig};

/// Branch point of `g` and of the expose function.
pub const THRESHOLD: f64 = 0.1188;

/// Discount used by the bundled model file. The source data does not fix one.
pub const DEFAULT_DISCOUNT: f64 = 0.95;

/// `ν(h' | h, a)` as `NU[a][h][h']`.
pub const NU: [[[f64; 2]; 2]; 2] = [[[0.2, 0.8], [0.5, 0.5]], [[0.5, 0.5], [0.4, 0.6]]];
/// `φ(s | h', a)` as `PHI[a][h'][s]`.
pub const PHI: [[[f64; 2]; 2]; 2] = [[[0.2, 0.8], [0.6, 0.4]], [[0.9, 0.1], [0.4, 0.6]]];
/// `r(h, a)` as `REWARD[h][a]`; entries are costs.
pub const REWARD: [[f64; 2]; 2] = [[4.0, 0.0], [-4.0, -3.0]];

/// The closed-form update, with an optional constant shift for controls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SondikDynamics {
    pub offset: f64,
}

impl SondikDynamics {
    /// `g(s, m)` without the shift. Inputs are indices: 0 is `1`, 1 is `2`.
    pub fn g(input: usize, m: f64) -> f64 {
        let low = m < THRESHOLD;
        match (input, low) {
            (0, true) => 15.0 / (6.0 * m + 20.0) - 0.5,
            (0, false) => 9.0 / 5.0 - 72.0 / (5.0 * m + 60.0),
            (_, true) => 2.0 + 20.0 / (3.0 * m - 15.0),
            (_, false) => -0.2 - 12.0 / (5.0 * m - 40.0),
        }
    }
}

impl IntervalDynamics for SondikDynamics {
    fn next(&self, input: usize, m: f64) -> f64 {
        let x = Self::g(input, m);
        if self.offset == 0.0 {
            x
        } else {
            (x + self.offset).clamp(0.0, 1.0)
        }
    }

    fn expose(&self, m: f64) -> usize {
        usize::from(m >= THRESHOLD)
    }

    fn branch_points(&self) -> Vec<f64> {
        vec![THRESHOLD]
    }
}

pub fn machine_with_offset(offset: f64) -> StochasticMooreMachine {
    let labels = LabelSet::numbered("I", 2).expect("static labels");
    let outputs = LabelSet::numbered("O", 2).expect("static labels");
    StochasticMooreMachine::Interval(IntervalMachine::new(
        "sondik",
        labels,
        outputs,
        Arc::new(SondikDynamics { offset }),
    ))
}

pub fn machine() -> StochasticMooreMachine {
    machine_with_offset(0.0)
}

/// The POMDP with hidden states, actions and sensors all labeled `1`, `2`,
/// solved as a cost-minimization problem.
pub fn pomdp(discount: f64) -> Result<Pomdp> {
    let h = LabelSet::numbered("H", 2)?;
    let a = LabelSet::numbered("A", 2)?;
    let s = LabelSet::numbered("S", 2)?;
    let nu = TabularKernel::from_fn(vec![h.clone(), a.clone()], h.clone(), |t| {
        FiniteDist::new(h.clone(), NU[t[1]][t[0]].to_vec())
    })?;
    let phi = TabularKernel::from_fn(vec![h.clone(), a.clone()], s.clone(), |t| {
        FiniteDist::new(s.clone(), PHI[t[1]][t[0]].to_vec())
    })?;
    let reward = REWARD.iter().flatten().copied().collect();
    Ok(Pomdp::from_factored(nu, phi, reward, discount)?.with_objective(Objective::Minimize))
}

pub fn interpretation(p: &Pomdp) -> Result<Interpretation> {
    Interpretation::new(Psi::sondik(), ActionFunction::Expose, p.kappa().clone())
}

/// A maximal interval of `m = b(1)` on which the policy picks one action.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub start: f64,
    pub end: f64,
    pub action: usize,
}

/// The action regions of a two-state policy over `m ∈ [0, 1]`, scanned at
/// `points` uniform points with boundaries refined by bisection.
pub fn policy_regions(pol: &AlphaVectorPolicy, points: usize) -> Result<Vec<Region>> {
    let hidden = pol.model().hidden().clone();
    let action = |m: f64| -> Result<usize> {
        let b = FiniteDist::new(hidden.clone(), vec![m, 1.0 - m])?;
        Ok(pol.optimal_policy_at(&b)?.action)
    };
    let points = points.max(2);
    let mut regions: Vec<Region> = Vec::new();
    let mut prev_m = 0.0;
    let mut prev_a = action(0.0)?;
    regions.push(Region {
        start: 0.0,
        end: 1.0,
        action: prev_a,
    });
    for k in 1..points {
        let m = k as f64 / (points - 1) as f64;
        let a = action(m)?;
        if a != prev_a {
            let (mut lo, mut hi) = (prev_m, m);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if action(mid)? == prev_a {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            regions.last_mut().expect("one region").end = hi;
            regions.push(Region {
                start: hi,
                end: 1.0,
                action: a,
            });
        }
        prev_m = m;
        prev_a = a;
    }
    Ok(regions)
}

/// True when the policy takes action `1` below a single threshold and `2`
/// above it.
pub fn is_low_one_threshold(regions: &[Region]) -> bool {
    matches!(regions, [low, high] if low.action == 0 && high.action == 1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepEntry {
    pub gamma: f64,
    pub regions: Vec<Region>,
    pub threshold_structure: bool,
    /// Boundary between the two regions when `threshold_structure` holds.
    pub threshold: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoConfig {
    pub grid: usize,
    pub tol: f64,
    pub gammas: Vec<f64>,
    pub epsilon: f64,
    pub witness_resolution: usize,
    pub scan_points: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            grid: 1001,
            tol: 1e-9,
            gammas: (90..=99).map(|k| k as f64 / 100.0).collect(),
            epsilon: 1e-7,
            witness_resolution: 200,
            scan_points: 2001,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DemoReport {
    pub config: DemoConfig,
    /// The consistency equation on the grid plus the branch point.
    pub consistency: ConsistencyReport,
    pub consistency_seconds: f64,
    /// `max |g(s, m) − f(ψ(m), ω(m), s)(1)|` over the grid and both inputs.
    pub update_deviation: f64,
    pub sweep: Vec<SweepEntry>,
    /// Index into `sweep` of the threshold closest to [`THRESHOLD`].
    pub best: Option<usize>,
    /// Both solution conditions at the best discount.
    pub solution: Option<SolutionReport>,
}

impl DemoReport {
    pub fn best_entry(&self) -> Option<&SweepEntry> {
        self.best.map(|k| &self.sweep[k])
    }
}

/// Largest deviation between the machine update and the Bayes posterior of
/// the interpreted belief under the exposed action.
pub fn update_deviation(machine: &StochasticMooreMachine, p: &Pomdp, grid: usize) -> Result<f64> {
    let psi = Psi::sondik();
    let mut worst: f64 = 0.0;
    for m in machine.sample_states(&StateSample::Grid(grid))? {
        let b = psi.at(&m)?;
        let a = machine.expose(&m)?;
        for s in 0..2 {
            let Some(post) = p.belief_update_index(&b, a, s)?.posterior().cloned() else {
                continue;
            };
            for (next, _) in machine.successors(&m, s)? {
                let MachineState::Point(x) = next else { unreachable!("interval machine") };
                worst = worst.max((x - post.weight(0)).abs());
            }
        }
    }
    Ok(worst)
}

pub fn run_demo(config: &DemoConfig) -> Result<DemoReport> {
    let machine = machine();
    let base = pomdp(DEFAULT_DISCOUNT)?;
    let itp = interpretation(&base)?;

    let started = Instant::now();
    let consistency = check_influenced_filtering(&machine, &itp, &StateSample::Grid(config.grid), config.tol)?;
    let consistency_seconds = started.elapsed().as_secs_f64();
    let update_deviation = update_deviation(&machine, &base, config.grid)?;

    let mut sweep = Vec::new();
    let mut policies = Vec::new();
    for &gamma in &config.gammas {
        let p = Arc::new(base.clone().with_discount(gamma)?);
        let solver = SolverConfig::epsilon(config.epsilon).with_witness_resolution(config.witness_resolution);
        let pol = pomdp_value_iteration_shared(p, &solver)?;
        let regions = policy_regions(&pol, config.scan_points)?;
        let threshold_structure = is_low_one_threshold(&regions);
        let threshold = threshold_structure.then(|| regions[0].end);
        sweep.push(SweepEntry {
            gamma,
            regions,
            threshold_structure,
            threshold,
        });
        policies.push(pol);
    }
    let best = sweep
        .iter()
        .enumerate()
        .filter_map(|(k, e)| e.threshold.map(|t| (k, (t - THRESHOLD).abs())))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k);
    let solution = match best {
        Some(k) => {
            let pol = &policies[k];
            Some(check_pomdp_solution(
                &machine,
                pol.model(),
                &Psi::sondik(),
                pol,
                &StateSample::Grid(config.grid),
                config.tol,
            )?)
        }
        None => None,
    };
    Ok(DemoReport {
        config: config.clone(),
        consistency,
        consistency_seconds,
        update_deviation,
        sweep,
        best,
        solution,
    })
}
