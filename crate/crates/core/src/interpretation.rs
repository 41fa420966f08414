//! Verification that a stochastic Moore machine can be read as an agent doing
//! exact Bayesian filtering of an interpreted world, and as a POMDP solution.
//!
//! An [`Interpretation`] maps each machine state `m` to a belief `ψ(m)` over
//! hidden states, picks an action `α(m)`, and carries a model kernel
//! `κ: H × A → P(H × I)`. It is consistent when, for every state `m`, input
//! `i` and possible successor `m'`,
//!
//! ```text
//! Σ_h κ(h', i | h, α(m)) ψ(h | m)  =  ψ(h' | m') · Σ_{h, h''} κ(h'', i | h, α(m)) ψ(h | m)
//! ```
//!
//! holds for all `h'`. Inputs with zero predictive probability impose no
//! constraint and are reported as skipped.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::machine::{MachineState, StateSample, StochasticMooreMachine};
use crate::pomdp::Pomdp;
use crate::prob::{FiniteDist, JointDist, JointKernel, LabelSet, TabularKernel};
use crate::solver::AlphaVectorPolicy;

/// Default tolerance for analytic instances.
pub const ANALYTIC_TOL: f64 = 1e-9;
/// Default tolerance for instances loaded from decimal files.
pub const DECIMAL_TOL: f64 = 1e-7;

/// The interpretation map `ψ: M → PH`.
#[derive(Clone, Debug, PartialEq)]
pub enum Psi {
    /// One row per state of a tabular machine.
    Tabular(TabularKernel),
    /// For interval machines: `ψ(first | m) = m`, `ψ(second | m) = 1 - m`.
    Bernoulli(LabelSet),
    /// For belief machines: the state is its own belief.
    Identity(LabelSet),
}

impl Psi {
    /// The Bernoulli map registered as `sondik_psi`.
    pub fn sondik() -> Self {
        Psi::Bernoulli(LabelSet::numbered("H", 2).expect("static labels"))
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "sondik_psi" | "bernoulli" => Ok(Self::sondik()),
            other => Err(Error::Registry(other.to_string())),
        }
    }

    pub fn hidden(&self) -> &LabelSet {
        match self {
            Psi::Tabular(k) => k.codomain(),
            Psi::Bernoulli(h) | Psi::Identity(h) => h,
        }
    }

    /// `ψ(m)`, validated as a distribution.
    pub fn at(&self, m: &MachineState) -> Result<FiniteDist> {
        match (self, m) {
            (Psi::Tabular(k), MachineState::Index(i)) if *i < k.rows().len() => Ok(k.row(&[*i]).clone()),
            (Psi::Bernoulli(h), MachineState::Point(x)) if h.len() == 2 => {
                FiniteDist::new(h.clone(), vec![*x, 1.0 - *x])
            }
            (Psi::Identity(h), MachineState::Belief(b)) => FiniteDist::new(h.clone(), b.clone()),
            _ => Err(Error::Domain(format!("interpretation map cannot evaluate state {m}"))),
        }
    }

    fn check_machine(&self, machine: &StochasticMooreMachine) -> Result<()> {
        match (self, machine) {
            (Psi::Tabular(k), StochasticMooreMachine::Tabular(t)) => match k.domain() {
                [m] => m.check_same(t.states(), "ψ domain"),
                _ => Err(Error::Domain("ψ must have the machine states as domain".into())),
            },
            (Psi::Bernoulli(_), StochasticMooreMachine::Interval(_)) => Ok(()),
            (Psi::Identity(h), StochasticMooreMachine::Belief(b)) => h.check_same(b.hidden(), "ψ identity"),
            _ => Err(Error::Domain("interpretation map does not fit the machine's state space".into())),
        }
    }
}

/// The action function `α: M → A`.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionFunction {
    /// The machine's own output `ω(m)`; outputs must equal the action set.
    Expose,
    /// One action index per state of a tabular machine.
    Table(Vec<usize>),
    Constant(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Interpretation {
    pub psi: Psi,
    pub alpha: ActionFunction,
    /// `κ: H × A → P(H × I)`.
    pub model: JointKernel,
}

impl Interpretation {
    pub fn new(psi: Psi, alpha: ActionFunction, model: JointKernel) -> Result<Self> {
        psi.hidden().check_same(model.states(), "interpretation hidden states")?;
        let na = model.actions().len();
        match &alpha {
            ActionFunction::Constant(a) if *a >= na => {
                return Err(Error::Label(format!("action index {a} out of range")))
            }
            ActionFunction::Table(t) if t.iter().any(|&a| a >= na) => {
                return Err(Error::Label("action table entry out of range".into()))
            }
            _ => {}
        }
        Ok(Self { psi, alpha, model })
    }

    pub fn hidden(&self) -> &LabelSet {
        self.model.states()
    }

    pub fn actions(&self) -> &LabelSet {
        self.model.actions()
    }

    pub fn inputs(&self) -> &LabelSet {
        self.model.outputs()
    }

    fn check_machine(&self, machine: &StochasticMooreMachine) -> Result<()> {
        machine.inputs().check_same(self.inputs(), "machine inputs vs model inputs")?;
        if self.alpha == ActionFunction::Expose {
            machine.outputs().check_same(self.actions(), "machine outputs vs actions")?;
        }
        if let (ActionFunction::Table(t), StochasticMooreMachine::Tabular(m)) = (&self.alpha, machine) {
            if t.len() != m.states().len() {
                return Err(Error::Domain("action table does not cover the machine states".into()));
            }
        }
        self.psi.check_machine(machine)
    }

    pub fn action_at(&self, machine: &StochasticMooreMachine, m: &MachineState) -> Result<usize> {
        match (&self.alpha, m) {
            (ActionFunction::Expose, _) => machine.expose(m),
            (ActionFunction::Constant(a), _) => Ok(*a),
            (ActionFunction::Table(t), MachineState::Index(k)) if *k < t.len() => Ok(t[*k]),
            _ => Err(Error::Domain(format!("action table cannot evaluate state {m}"))),
        }
    }

    /// `ψ_{H,I}(h', i | m) = Σ_h κ(h', i | h, α(m)) ψ(h | m)`.
    pub fn predictive_joint(&self, machine: &StochasticMooreMachine, m: &MachineState) -> Result<JointDist> {
        machine.check_state(m)?;
        let a = self.action_at(machine, m)?;
        self.model.predictive(&self.psi.at(m)?, a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

/// One `(m, i, m')` evaluation of the consistency equation.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckedPoint {
    pub state: MachineState,
    pub input: usize,
    pub next: MachineState,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyReport {
    pub checked_points: Vec<CheckedPoint>,
    pub max_residual: f64,
    pub violations: Vec<CheckedPoint>,
    /// `(m, i)` pairs whose input has zero predictive probability.
    pub skipped_subjectively_impossible: Vec<(MachineState, usize)>,
    pub tol: f64,
    pub verdict: Verdict,
}

type ChunkResult = (Vec<CheckedPoint>, Vec<(MachineState, usize)>);

impl ConsistencyReport {
    fn assemble(parts: Vec<ChunkResult>, tol: f64) -> Self {
        let mut checked_points = Vec::new();
        let mut skipped = Vec::new();
        for (points, skips) in parts {
            checked_points.extend(points);
            skipped.extend(skips);
        }
        let max_residual = checked_points.iter().map(|p| p.residual).fold(0.0, f64::max);
        let violations: Vec<CheckedPoint> = checked_points
            .iter()
            .filter(|p| p.residual.is_nan() || p.residual > tol)
            .cloned()
            .collect();
        let verdict = Verdict::from_pass(violations.is_empty());
        Self {
            checked_points,
            max_residual,
            violations,
            skipped_subjectively_impossible: skipped,
            tol,
            verdict,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict.passed()
    }
}

/// Checks the consistency equation at every sampled state, every input and
/// every successor in the support of the machine kernel.
pub fn check_influenced_filtering(
    machine: &StochasticMooreMachine,
    itp: &Interpretation,
    sample: &StateSample,
    tol: f64,
) -> Result<ConsistencyReport> {
    itp.check_machine(machine)?;
    let states = machine.sample_states(sample)?;
    let ni = machine.inputs().len();
    let parts = states
        .par_iter()
        .map(|m| {
            let joint = itp.predictive_joint(machine, m)?;
            let mut points = Vec::new();
            let mut skipped = Vec::new();
            for i in 0..ni {
                let column = joint.column(i);
                let marginal: f64 = column.iter().sum();
                if marginal <= 0.0 {
                    skipped.push((m.clone(), i));
                    continue;
                }
                for (next, _) in machine.successors(m, i)? {
                    let belief = itp.psi.at(&next)?;
                    let residual = column
                        .iter()
                        .zip(belief.weights())
                        .map(|(lhs, w)| (lhs - w * marginal).abs())
                        .fold(0.0, f64::max);
                    points.push(CheckedPoint {
                        state: m.clone(),
                        input: i,
                        next,
                        residual,
                    });
                }
            }
            Ok((points, skipped))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConsistencyReport::assemble(parts, tol))
}

/// Smallest positive `ψ_I(i | m)` over the sampled states.
pub fn min_positive_marginal(
    machine: &StochasticMooreMachine,
    itp: &Interpretation,
    sample: &StateSample,
) -> Result<f64> {
    let mut min = f64::INFINITY;
    for m in machine.sample_states(sample)? {
        let marginal = itp.predictive_joint(machine, &m)?.marginal_second();
        for &w in marginal.weights() {
            if w > 0.0 {
                min = min.min(w);
            }
        }
    }
    Ok(min)
}

/// A hidden-Markov interpretation without actions: `κ: H → P(H × I)` given
/// as one joint row per hidden state.
#[derive(Clone, Debug, PartialEq)]
pub struct FilteringModel {
    pub rows: Vec<JointDist>,
}

/// The consistency check for plain (action-free) Bayesian filtering.
pub fn check_plain_filtering(
    machine: &StochasticMooreMachine,
    psi: &Psi,
    model: &FilteringModel,
    sample: &StateSample,
    tol: f64,
) -> Result<ConsistencyReport> {
    psi.check_machine(machine)?;
    let Some(first) = model.rows.first() else {
        return Err(Error::Domain("filtering model has no rows".into()));
    };
    if model.rows.len() != psi.hidden().len() {
        return Err(Error::Domain("filtering model needs one row per hidden state".into()));
    }
    machine.inputs().check_same(first.second(), "machine inputs vs model inputs")?;
    let (nh, ni) = (psi.hidden().len(), machine.inputs().len());
    let mut parts = Vec::new();
    for m in machine.sample_states(sample)? {
        let belief = psi.at(&m)?;
        let mut points = Vec::new();
        let mut skipped = Vec::new();
        for i in 0..ni {
            let lhs: Vec<f64> = (0..nh)
                .map(|h2| (0..nh).map(|h| model.rows[h].get(h2, i) * belief.weight(h)).sum())
                .collect();
            let evidence: f64 = lhs.iter().sum();
            if evidence <= 0.0 {
                skipped.push((m.clone(), i));
                continue;
            }
            for (next, _) in machine.successors(&m, i)? {
                let post = psi.at(&next)?;
                let residual = (0..nh)
                    .map(|h2| (lhs[h2] - post.weight(h2) * evidence).abs())
                    .fold(0.0, f64::max);
                points.push(CheckedPoint {
                    state: m.clone(),
                    input: i,
                    next,
                    residual,
                });
            }
        }
        parts.push((points, skipped));
    }
    Ok(ConsistencyReport::assemble(parts, tol))
}

/// A state where the machine's output differs from the policy's choice.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyMismatch {
    pub state: MachineState,
    pub exposed: usize,
    pub optimal: usize,
}

/// Outcome of checking a machine as the solution of a POMDP.
#[derive(Clone, Debug, PartialEq)]
pub struct SolutionReport {
    /// Consistent influenced filtering with `α = ω` and the POMDP kernel.
    pub filtering: ConsistencyReport,
    pub policy_checked: usize,
    /// States where `ω(m) ≠ π*(ψ(m))`.
    pub policy_mismatches: Vec<PolicyMismatch>,
    pub verdict: Verdict,
}

impl SolutionReport {
    pub fn filtering_passed(&self) -> bool {
        self.filtering.passed()
    }

    pub fn policy_passed(&self) -> bool {
        self.policy_mismatches.is_empty()
    }
}

fn check_policy_fits(machine: &StochasticMooreMachine, p: &Pomdp, psi: &Psi, pol: &AlphaVectorPolicy) -> Result<()> {
    machine.outputs().check_same(p.actions(), "machine outputs vs POMDP actions")?;
    machine.inputs().check_same(p.sensors(), "machine inputs vs POMDP sensors")?;
    psi.hidden().check_same(p.hidden(), "ψ codomain vs POMDP hidden states")?;
    let model = pol.model();
    if model.hidden() != p.hidden() || model.actions() != p.actions() || model.sensors() != p.sensors() {
        return Err(Error::Domain("policy was solved for a different POMDP".into()));
    }
    Ok(())
}

/// Checks both conditions: the machine is a consistent influenced filter of
/// the POMDP's kernel with its own outputs as actions, and its outputs agree
/// with the optimal policy at the interpreted beliefs.
pub fn check_pomdp_solution(
    machine: &StochasticMooreMachine,
    p: &Pomdp,
    psi: &Psi,
    pol: &AlphaVectorPolicy,
    sample: &StateSample,
    tol: f64,
) -> Result<SolutionReport> {
    check_policy_fits(machine, p, psi, pol)?;
    let itp = Interpretation::new(psi.clone(), ActionFunction::Expose, p.kappa().clone())?;
    let filtering = check_influenced_filtering(machine, &itp, sample, tol)?;
    let states = machine.sample_states(sample)?;
    let decisions = states
        .par_iter()
        .map(|m| {
            let exposed = machine.expose(m)?;
            let optimal = pol.optimal_policy_at(&psi.at(m)?)?.action;
            Ok((exposed != optimal).then(|| PolicyMismatch {
                state: m.clone(),
                exposed,
                optimal,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let policy_mismatches: Vec<PolicyMismatch> = decisions.into_iter().flatten().collect();
    let verdict = Verdict::from_pass(filtering.passed() && policy_mismatches.is_empty());
    Ok(SolutionReport {
        filtering,
        policy_checked: states.len(),
        policy_mismatches,
        verdict,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Prop1Outcome {
    /// The input is impossible under the interpretation; nothing to check.
    Skipped,
    Checked { residual: f64, pass: bool },
}

/// Checks that every possible successor state `m'` of `(m, i)` carries the
/// belief `f(ψ(m), π*(ψ(m)), i)`, measured in total variation.
pub fn check_proposition1(
    machine: &StochasticMooreMachine,
    p: &Pomdp,
    psi: &Psi,
    pol: &AlphaVectorPolicy,
    m: &MachineState,
    input: usize,
    tol: f64,
) -> Result<Prop1Outcome> {
    check_policy_fits(machine, p, psi, pol)?;
    let b = psi.at(m)?;
    let a = pol.optimal_policy_at(&b)?.action;
    let conditioned = p.belief_update_index(&b, a, input)?;
    let Some(posterior) = conditioned.posterior() else {
        return Ok(Prop1Outcome::Skipped);
    };
    let mut residual: f64 = 0.0;
    for (next, _) in machine.successors(m, input)? {
        residual = residual.max(psi.at(&next)?.total_variation(posterior)?);
    }
    Ok(Prop1Outcome::Checked {
        residual,
        pass: residual <= tol,
    })
}

/// [`check_proposition1`] over a state sample and every input.
#[derive(Clone, Debug, PartialEq)]
pub struct Prop1Report {
    pub checked: Vec<(MachineState, usize, f64)>,
    pub skipped: Vec<(MachineState, usize)>,
    pub max_residual: f64,
    pub tol: f64,
    pub verdict: Verdict,
}

impl Prop1Report {
    pub fn passed(&self) -> bool {
        self.verdict.passed()
    }
}

pub fn check_proposition1_all(
    machine: &StochasticMooreMachine,
    p: &Pomdp,
    psi: &Psi,
    pol: &AlphaVectorPolicy,
    sample: &StateSample,
    tol: f64,
) -> Result<Prop1Report> {
    let states = machine.sample_states(sample)?;
    let ni = machine.inputs().len();
    let outcomes = states
        .par_iter()
        .map(|m| {
            (0..ni)
                .map(|i| Ok((m.clone(), i, check_proposition1(machine, p, psi, pol, m, i, tol)?)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut checked = Vec::new();
    let mut skipped = Vec::new();
    for (m, i, outcome) in outcomes.into_iter().flatten() {
        match outcome {
            Prop1Outcome::Skipped => skipped.push((m, i)),
            Prop1Outcome::Checked { residual, .. } => checked.push((m, i, residual)),
        }
    }
    let max_residual = checked.iter().map(|c| c.2).fold(0.0, f64::max);
    let verdict = Verdict::from_pass(checked.iter().all(|c| c.2 <= tol));
    Ok(Prop1Report {
        checked,
        skipped,
        max_residual,
        tol,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::builtin;
    use crate::sondik;

    fn sondik_itp() -> Interpretation {
        let p = sondik::pomdp(0.95).unwrap();
        Interpretation::new(Psi::sondik(), ActionFunction::Expose, p.kappa().clone()).unwrap()
    }

    #[test]
    fn sondik_predictive_joint_at_zero() {
        let machine = builtin("sondik", &serde_json::Value::Null).unwrap();
        let joint = sondik_itp().predictive_joint(&machine, &MachineState::Point(0.0)).unwrap();
        assert!((joint.prob("1", "1").unwrap() - 0.1).abs() < 1e-15);
        assert!((joint.marginal_second().prob("1").unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn constant_model_predictive_is_its_row() {
        let h = LabelSet::numbered("H", 2).unwrap();
        let a = LabelSet::numbered("A", 2).unwrap();
        let i = LabelSet::numbered("I", 2).unwrap();
        let u = [0.1, 0.2, 0.3, 0.4];
        let model = JointKernel::from_fn(h.clone(), a.clone(), i.clone(), |_, _, h2, y| u[h2 * 2 + y]).unwrap();
        let itp = Interpretation::new(Psi::sondik(), ActionFunction::Expose, model).unwrap();
        let machine = builtin("sondik", &serde_json::Value::Null).unwrap();
        for x in [0.0, 0.3, 0.9] {
            let joint = itp.predictive_joint(&machine, &MachineState::Point(x)).unwrap();
            for h2 in 0..2 {
                for y in 0..2 {
                    assert!((joint.get(h2, y) - u[h2 * 2 + y]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn sondik_interpretation_is_consistent() {
        let machine = builtin("sondik", &serde_json::Value::Null).unwrap();
        let report = check_influenced_filtering(&machine, &sondik_itp(), &StateSample::Grid(1001), 1e-9).unwrap();
        assert!(report.passed(), "max residual {}", report.max_residual);
        assert_eq!(report.checked_points.len(), 1002 * 2);
    }

    #[test]
    fn perturbed_sondik_fails() {
        let machine = builtin("sondik", &serde_json::json!({"offset": 0.05})).unwrap();
        let report = check_influenced_filtering(&machine, &sondik_itp(), &StateSample::Grid(1001), 1e-9).unwrap();
        assert!(!report.passed());
        assert!(report.max_residual > 1e-3);
    }

    #[test]
    fn mismatched_inputs_are_domain_errors() {
        let machine = builtin("sondik", &serde_json::Value::Null).unwrap();
        let h = LabelSet::numbered("H", 2).unwrap();
        let a = LabelSet::numbered("A", 2).unwrap();
        let i = LabelSet::numbered("I", 3).unwrap();
        let model = JointKernel::from_fn(h, a, i, |_, _, h2, y| if h2 == 0 && y == 0 { 1.0 } else { 0.0 }).unwrap();
        let itp = Interpretation::new(Psi::sondik(), ActionFunction::Expose, model).unwrap();
        assert!(matches!(
            check_influenced_filtering(&machine, &itp, &StateSample::Grid(11), 1e-9),
            Err(Error::Domain(_))
        ));
    }
}
