//! Stochastic Moore machines: a state that updates stochastically on each
//! input, and an output that is a deterministic function of the state.
//!
//! Three state-space representations share one interface:
//! tabular machines over a finite labeled set, closed-form machines over the
//! unit interval (the registered builtins), and machines whose states are
//! beliefs over a hidden set (produced by the solver's canonical construction).

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::prob::{FiniteDist, LabelSet, TabularKernel};
use crate::sondik;

/// A machine state in whichever representation its machine uses.
#[derive(Clone, Debug, PartialEq)]
pub enum MachineState {
    /// Index into a tabular machine's state set.
    Index(usize),
    /// A point of the unit interval.
    Point(f64),
    /// A belief vector over a hidden set, in that set's order.
    Belief(Vec<f64>),
}

impl fmt::Display for MachineState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MachineState::Index(k) => write!(f, "#{k}"),
            MachineState::Point(m) => write!(f, "{m}"),
            MachineState::Belief(b) => write!(f, "{b:?}"),
        }
    }
}

/// Closed-form deterministic dynamics on `[0, 1]`.
pub trait IntervalDynamics: Send + Sync + fmt::Debug {
    fn next(&self, input: usize, m: f64) -> f64;
    fn expose(&self, m: f64) -> usize;
    /// Points where `next` or `expose` switch branches.
    fn branch_points(&self) -> Vec<f64>;
}

/// Closed-form deterministic dynamics on the belief simplex.
pub trait BeliefDynamics: Send + Sync + fmt::Debug {
    fn hidden(&self) -> &LabelSet;
    fn next(&self, input: usize, belief: &[f64]) -> Result<Vec<f64>>;
    fn expose(&self, belief: &[f64]) -> Result<usize>;
}

#[derive(Clone, Debug)]
pub struct TabularMachine {
    states: LabelSet,
    inputs: LabelSet,
    outputs: LabelSet,
    /// `υ: I × M → PM`.
    kernel: TabularKernel,
    expose: Vec<usize>,
}

impl TabularMachine {
    pub fn new(
        states: LabelSet,
        inputs: LabelSet,
        outputs: LabelSet,
        kernel: TabularKernel,
        expose: Vec<usize>,
    ) -> Result<Self> {
        match kernel.domain() {
            [i, m] => {
                i.check_same(&inputs, "machine kernel inputs")?;
                m.check_same(&states, "machine kernel states")?;
            }
            _ => return Err(Error::Domain("machine kernel must have domain I × M".into())),
        }
        kernel.codomain().check_same(&states, "machine kernel codomain")?;
        if expose.len() != states.len() {
            return Err(Error::Domain(format!(
                "expose needs {} entries, got {}",
                states.len(),
                expose.len()
            )));
        }
        if let Some(&o) = expose.iter().find(|&&o| o >= outputs.len()) {
            return Err(Error::Label(format!("expose output index {o} out of range")));
        }
        Ok(Self {
            states,
            inputs,
            outputs,
            kernel,
            expose,
        })
    }

    pub fn states(&self) -> &LabelSet {
        &self.states
    }

    pub fn kernel(&self) -> &TabularKernel {
        &self.kernel
    }

    pub fn expose_table(&self) -> &[usize] {
        &self.expose
    }
}

#[derive(Clone, Debug)]
pub struct IntervalMachine {
    name: String,
    inputs: LabelSet,
    outputs: LabelSet,
    dynamics: Arc<dyn IntervalDynamics>,
}

impl IntervalMachine {
    pub fn new(
        name: &str,
        inputs: LabelSet,
        outputs: LabelSet,
        dynamics: Arc<dyn IntervalDynamics>,
    ) -> Self {
        Self {
            name: name.to_string(),
            inputs,
            outputs,
            dynamics,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dynamics(&self) -> &dyn IntervalDynamics {
        self.dynamics.as_ref()
    }
}

#[derive(Clone, Debug)]
pub struct BeliefMachine {
    inputs: LabelSet,
    outputs: LabelSet,
    dynamics: Arc<dyn BeliefDynamics>,
}

impl BeliefMachine {
    pub fn new(inputs: LabelSet, outputs: LabelSet, dynamics: Arc<dyn BeliefDynamics>) -> Self {
        Self {
            inputs,
            outputs,
            dynamics,
        }
    }

    pub fn hidden(&self) -> &LabelSet {
        self.dynamics.hidden()
    }
}

/// How machine states are sampled for verification.
#[derive(Clone, Debug, PartialEq)]
pub enum StateSample {
    /// Every state of a tabular machine.
    All,
    /// `n` uniform points of `[0, 1]` plus every branch point.
    Grid(usize),
    Explicit(Vec<MachineState>),
}

/// Default number of grid points for interval machines.
pub const DEFAULT_GRID_POINTS: usize = 1001;

#[derive(Clone, Debug)]
pub enum StochasticMooreMachine {
    Tabular(TabularMachine),
    Interval(IntervalMachine),
    Belief(BeliefMachine),
}

impl StochasticMooreMachine {
    pub fn inputs(&self) -> &LabelSet {
        match self {
            Self::Tabular(t) => &t.inputs,
            Self::Interval(p) => &p.inputs,
            Self::Belief(b) => &b.inputs,
        }
    }

    pub fn outputs(&self) -> &LabelSet {
        match self {
            Self::Tabular(t) => &t.outputs,
            Self::Interval(p) => &p.outputs,
            Self::Belief(b) => &b.outputs,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        match self {
            Self::Tabular(t) => t
                .kernel
                .rows()
                .iter()
                .all(|row| row.support_indices().count() == 1),
            Self::Interval(_) | Self::Belief(_) => true,
        }
    }

    pub fn check_state(&self, m: &MachineState) -> Result<()> {
        match (self, m) {
            (Self::Tabular(t), MachineState::Index(k)) if *k < t.states.len() => Ok(()),
            (Self::Interval(_), MachineState::Point(x)) if (0.0..=1.0).contains(x) => Ok(()),
            (Self::Belief(b), MachineState::Belief(v)) => {
                if v.len() == b.hidden().len() {
                    FiniteDist::new(b.hidden().clone(), v.clone()).map(|_| ())
                } else {
                    Err(Error::Label(format!("belief state has wrong length {}", v.len())))
                }
            }
            _ => Err(Error::Label(format!("invalid machine state {m}"))),
        }
    }

    /// Parses a state from its textual form: a label for tabular machines,
    /// a number for interval machines, comma-separated weights for beliefs.
    pub fn parse_state(&self, text: &str) -> Result<MachineState> {
        let state = match self {
            Self::Tabular(t) => MachineState::Index(t.states.index_of(text)?),
            Self::Interval(_) => MachineState::Point(
                text.trim()
                    .parse()
                    .map_err(|_| Error::Label(format!("`{text}` is not a point of [0, 1]")))?,
            ),
            Self::Belief(_) => MachineState::Belief(
                text.split(',')
                    .map(|w| w.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Label(format!("`{text}` is not a belief vector")))?,
            ),
        };
        self.check_state(&state)?;
        Ok(state)
    }

    /// `ω(m)` as an output index.
    pub fn expose(&self, m: &MachineState) -> Result<usize> {
        self.check_state(m)?;
        match (self, m) {
            (Self::Tabular(t), MachineState::Index(k)) => Ok(t.expose[*k]),
            (Self::Interval(p), MachineState::Point(x)) => Ok(p.dynamics.expose(*x)),
            (Self::Belief(b), MachineState::Belief(v)) => b.dynamics.expose(v),
            _ => unreachable!("checked above"),
        }
    }

    pub fn expose_label(&self, m: &MachineState) -> Result<&str> {
        Ok(self.outputs().label(self.expose(m)?))
    }

    /// Support of `υ(· | i, m)` with its weights.
    pub fn successors(&self, m: &MachineState, input: usize) -> Result<Vec<(MachineState, f64)>> {
        self.check_state(m)?;
        if input >= self.inputs().len() {
            return Err(Error::Label(format!("input index {input} out of range")));
        }
        Ok(match (self, m) {
            (Self::Tabular(t), MachineState::Index(k)) => t
                .kernel
                .row(&[input, *k])
                .support_indices()
                .map(|next| (MachineState::Index(next), t.kernel.row(&[input, *k]).weight(next)))
                .collect(),
            (Self::Interval(p), MachineState::Point(x)) => {
                vec![(MachineState::Point(p.dynamics.next(input, *x)), 1.0)]
            }
            (Self::Belief(b), MachineState::Belief(v)) => {
                vec![(MachineState::Belief(b.dynamics.next(input, v)?), 1.0)]
            }
            _ => unreachable!("checked above"),
        })
    }

    /// Samples `m' ~ υ(· | i, m)`. Deterministic machines ignore `rng`.
    pub fn step_index<R: Rng + ?Sized>(
        &self,
        m: &MachineState,
        input: usize,
        rng: &mut R,
    ) -> Result<MachineState> {
        let mut successors = self.successors(m, input)?;
        if successors.len() == 1 {
            return Ok(successors.pop().expect("one successor").0);
        }
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (next, w) in &successors {
            acc += w;
            if u < acc {
                return Ok(next.clone());
            }
        }
        Ok(successors.pop().expect("non-empty support").0)
    }

    pub fn step<R: Rng + ?Sized>(&self, m: &MachineState, input: &str, rng: &mut R) -> Result<MachineState> {
        let i = self.inputs().index_of(input)?;
        self.step_index(m, i, rng)
    }

    /// Simulates from `m0` over `inputs`. The generator is ChaCha8 seeded
    /// with `seed`, so trajectories are reproducible across platforms.
    pub fn run(&self, m0: MachineState, inputs: &[&str], seed: u64) -> Result<Trajectory> {
        let inputs = inputs
            .iter()
            .map(|i| self.inputs().index_of(i))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut steps = Vec::with_capacity(inputs.len() + 1);
        let mut m = m0;
        for &i in &inputs {
            let output = self.expose(&m)?;
            let next = self.step_index(&m, i, &mut rng)?;
            steps.push(TrajectoryStep {
                state: m,
                input: Some(i),
                output,
            });
            m = next;
        }
        let output = self.expose(&m)?;
        steps.push(TrajectoryStep {
            state: m,
            input: None,
            output,
        });
        Ok(Trajectory { steps, seed })
    }

    /// Expands a [`StateSample`] into concrete states.
    pub fn sample_states(&self, sample: &StateSample) -> Result<Vec<MachineState>> {
        match (self, sample) {
            (_, StateSample::Explicit(states)) => {
                for m in states {
                    self.check_state(m)?;
                }
                Ok(states.clone())
            }
            (Self::Tabular(t), StateSample::All) => {
                Ok((0..t.states.len()).map(MachineState::Index).collect())
            }
            (Self::Interval(p), StateSample::Grid(n)) => {
                Ok(interval_grid(*n, &p.dynamics.branch_points())
                    .into_iter()
                    .map(MachineState::Point)
                    .collect())
            }
            (Self::Interval(p), StateSample::All) => Ok(interval_grid(
                DEFAULT_GRID_POINTS,
                &p.dynamics.branch_points(),
            )
            .into_iter()
            .map(MachineState::Point)
            .collect()),
            (Self::Tabular(_), StateSample::Grid(_)) => {
                Err(Error::Domain("tabular machines are sampled exhaustively".into()))
            }
            (Self::Belief(_), _) => Err(Error::Domain(
                "belief machines need an explicit state sample".into(),
            )),
        }
    }

    /// JSON rendering of a state for reports.
    pub fn state_json(&self, m: &MachineState) -> serde_json::Value {
        match (self, m) {
            (Self::Tabular(t), MachineState::Index(k)) if *k < t.states.len() => {
                serde_json::Value::from(t.states.label(*k))
            }
            (_, MachineState::Index(k)) => serde_json::Value::from(*k),
            (_, MachineState::Point(x)) => serde_json::Value::from(*x),
            (_, MachineState::Belief(b)) => serde_json::Value::from(b.clone()),
        }
    }
}

/// `n` uniform points of `[0, 1]` merged with `extra`, sorted, deduplicated.
pub fn interval_grid(n: usize, extra: &[f64]) -> Vec<f64> {
    let mut points: Vec<f64> = match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|k| k as f64 / (n - 1) as f64).collect(),
    };
    points.extend(extra.iter().copied().filter(|x| (0.0..=1.0).contains(x)));
    points.sort_by(f64::total_cmp);
    points.dedup();
    points
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryStep {
    pub state: MachineState,
    /// `None` on the final step.
    pub input: Option<usize>,
    pub output: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub seed: u64,
}

impl Trajectory {
    pub fn states(&self) -> impl Iterator<Item = &MachineState> {
        self.steps.iter().map(|s| &s.state)
    }
}

#[derive(Debug, Serialize)]
struct TrajectoryRow {
    state: serde_json::Value,
    input: Option<String>,
    output: String,
}

impl Trajectory {
    pub fn to_json(&self, machine: &StochasticMooreMachine) -> serde_json::Value {
        let rows: Vec<TrajectoryRow> = self
            .steps
            .iter()
            .map(|s| TrajectoryRow {
                state: machine.state_json(&s.state),
                input: s.input.map(|i| machine.inputs().label(i).to_string()),
                output: machine.outputs().label(s.output).to_string(),
            })
            .collect();
        serde_json::json!({ "seed": self.seed, "steps": rows })
    }
}

/// Looks up a registered closed-form machine.
///
/// `sondik` accepts an optional `offset` parameter that shifts `g` by a
/// constant (clamped to `[0, 1]`), used to build perturbed controls.
pub fn builtin(name: &str, params: &serde_json::Value) -> Result<StochasticMooreMachine> {
    match name {
        "sondik" => {
            let offset = match params.get("offset") {
                None | Some(serde_json::Value::Null) => 0.0,
                Some(v) => v
                    .as_f64()
                    .ok_or_else(|| Error::Schema("sondik `offset` must be a number".into()))?,
            };
            Ok(sondik::machine_with_offset(offset))
        }
        other => Err(Error::Registry(other.to_string())),
    }
}
