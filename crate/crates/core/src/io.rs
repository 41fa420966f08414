//! JSON model documents, their validation, and structured reports.
//!
//! Probabilities are given as sparse triples so that row order never
//! matters. Each row must sum to 1 within [`LOAD_ROW_TOL`]; accepted rows are
//! renormalized on load unless already within [`RENORMALIZE_TOL`].

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::interpretation::{
    ActionFunction, ConsistencyReport, Interpretation, Prop1Report, Psi, SolutionReport,
};
use crate::machine::{self, StochasticMooreMachine, TabularMachine};
use crate::pomdp::{Objective, Pomdp};
use crate::prob::{FiniteDist, JointKernel, LabelSet, TabularKernel};
use crate::solver::{AlphaVectorPolicy, Mdp};

/// Row-sum tolerance accepted when loading documents.
pub const LOAD_ROW_TOL: f64 = 1e-6;

/// Rows closer than this to a unit sum are left untouched, so that emitted
/// documents read back bit for bit.
pub const RENORMALIZE_TOL: f64 = 1e-12;

fn rescale(sum: f64) -> f64 {
    if (sum - 1.0).abs() > RENORMALIZE_TOL {
        sum
    } else {
        1.0
    }
}

/// Bumped whenever the report layout changes.
pub const REPORT_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuEntry {
    pub h: String,
    pub a: String,
    pub h_next: String,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiEntry {
    pub h_next: String,
    pub a: String,
    pub s: String,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointEntry {
    pub h: String,
    pub a: String,
    pub h_next: String,
    pub s: String,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardEntry {
    pub h: String,
    pub a: String,
    pub r: f64,
}

/// A kernel `H × A → P(H × S)`, factored or joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelDoc {
    pub hidden: Vec<String>,
    pub actions: Vec<String>,
    pub observations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<Vec<NuEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<PhiEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint: Option<Vec<JointEntry>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PomdpDoc {
    #[serde(flatten)]
    pub kernel: KernelDoc,
    pub reward: Vec<RewardEntry>,
    pub discount: f64,
    #[serde(default, skip_serializing_if = "is_maximize")]
    pub objective: Objective,
}

fn is_maximize(o: &Objective) -> bool {
    *o == Objective::Maximize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineKernelEntry {
    pub i: String,
    pub m: String,
    pub m_next: String,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExposeEntry {
    pub m: String,
    pub o: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MachineDoc {
    Tabular {
        states: Vec<String>,
        inputs: Vec<String>,
        outputs: Vec<String>,
        kernel: Vec<MachineKernelEntry>,
        expose: Vec<ExposeEntry>,
    },
    Builtin {
        builtin: String,
        #[serde(default, skip_serializing_if = "Value::is_null")]
        params: Value,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsiEntry {
    pub m: String,
    pub h: String,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PsiDoc {
    Table(Vec<PsiEntry>),
    Builtin { builtin: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaEntry {
    pub m: String,
    pub a: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpretationDoc {
    pub psi: PsiDoc,
    /// Absent means the machine's expose function is the action function.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<AlphaEntry>>,
    pub model: KernelDoc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionEntry {
    pub x: String,
    pub a: String,
    pub x_next: String,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpRewardEntry {
    pub x: String,
    pub a: String,
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpDoc {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub transition: Vec<TransitionEntry>,
    pub reward: Vec<MdpRewardEntry>,
    pub discount: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DocumentKind {
    Pomdp,
    Machine,
    Interpretation,
    Mdp,
}

impl DocumentKind {
    pub fn name(self) -> &'static str {
        match self {
            DocumentKind::Pomdp => "pomdp",
            DocumentKind::Machine => "machine",
            DocumentKind::Interpretation => "interpretation",
            DocumentKind::Mdp => "mdp",
        }
    }

    fn parse(name: &str) -> Result<Self> {
        match name {
            "pomdp" => Ok(DocumentKind::Pomdp),
            "machine" => Ok(DocumentKind::Machine),
            "interpretation" => Ok(DocumentKind::Interpretation),
            "mdp" => Ok(DocumentKind::Mdp),
            other => Err(Error::Schema(format!("unknown document kind `{other}`"))),
        }
    }

    /// Guesses the kind of a document without a `kind` field.
    fn infer(body: &serde_json::Map<String, Value>) -> Result<Self> {
        let has = |k: &str| body.contains_key(k);
        if has("psi") {
            Ok(DocumentKind::Interpretation)
        } else if has("builtin") || has("expose") {
            Ok(DocumentKind::Machine)
        } else if has("transition") {
            Ok(DocumentKind::Mdp)
        } else if has("hidden") {
            Ok(DocumentKind::Pomdp)
        } else {
            Err(Error::Schema("cannot determine document kind; add a `kind` field".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelDocument {
    Pomdp(PomdpDoc),
    Machine(MachineDoc),
    Interpretation(InterpretationDoc),
    Mdp(MdpDoc),
}

fn schema_error(e: serde_json::Error) -> Error {
    Error::Schema(e.to_string())
}

fn label_set(name: &str, labels: &[String]) -> Result<LabelSet> {
    LabelSet::new(name, labels.iter().cloned())
}

/// Accumulates sparse probability entries into a dense row-stochastic table
/// and rescales the entries in place.
struct SparseTable<'s> {
    name: &'static str,
    rows: Vec<&'s LabelSet>,
    cols: Vec<&'s LabelSet>,
}

impl SparseTable<'_> {
    fn index(sets: &[&LabelSet], labels: &[&str]) -> Result<usize> {
        let mut flat = 0;
        for (set, label) in sets.iter().zip(labels) {
            flat = flat * set.len() + set.index_of(label)?;
        }
        Ok(flat)
    }

    fn size(sets: &[&LabelSet]) -> usize {
        sets.iter().map(|s| s.len()).product()
    }

    /// Returns the dense table, row-major.
    fn load(&self, entries: Vec<(Vec<&str>, Vec<&str>, &mut f64)>) -> Result<Vec<f64>> {
        let (nrows, ncols) = (Self::size(&self.rows), Self::size(&self.cols));
        let mut dense = vec![0.0; nrows * ncols];
        let mut seen = vec![false; nrows * ncols];
        let mut placed = Vec::with_capacity(entries.len());
        for (row, col, p) in entries {
            let r = Self::index(&self.rows, &row)?;
            let c = Self::index(&self.cols, &col)?;
            if !p.is_finite() || *p < 0.0 {
                return Err(Error::Probability(format!("{}: invalid probability {}", self.name, p)));
            }
            if std::mem::replace(&mut seen[r * ncols + c], true) {
                return Err(Error::Schema(format!(
                    "{}: duplicate entry for {row:?} -> {col:?}",
                    self.name
                )));
            }
            dense[r * ncols + c] = *p;
            placed.push((r, p));
        }
        let sums: Vec<f64> = dense.chunks(ncols).map(|row| row.iter().sum()).collect();
        for (r, sum) in sums.iter().enumerate() {
            if (sum - 1.0).abs() > LOAD_ROW_TOL {
                return Err(Error::Probability(format!(
                    "{}: row {r} sums to {sum}, expected 1 within {LOAD_ROW_TOL}",
                    self.name
                )));
            }
        }
        let scales: Vec<f64> = sums.into_iter().map(rescale).collect();
        for (r, p) in placed {
            *p /= scales[r];
        }
        for (r, row) in dense.chunks_mut(ncols).enumerate() {
            row.iter_mut().for_each(|w| *w /= scales[r]);
        }
        Ok(dense)
    }
}

/// Validated pieces of a kernel document.
struct KernelParts {
    hidden: LabelSet,
    actions: LabelSet,
    factored: Option<(TabularKernel, TabularKernel)>,
    joint: Option<JointKernel>,
}

const CONSISTENCY_TOL: f64 = 1e-9;

impl KernelDoc {
    fn parts(&mut self) -> Result<KernelParts> {
        let hidden = label_set("H", &self.hidden)?;
        let actions = label_set("A", &self.actions)?;
        let sensors = label_set("S", &self.observations)?;
        let factored = match (&mut self.nu, &mut self.phi) {
            (Some(nu), Some(phi)) => {
                let nu_dense = SparseTable {
                    name: "nu",
                    rows: vec![&hidden, &actions],
                    cols: vec![&hidden],
                }
                .load(
                    nu.iter_mut()
                        .map(|NuEntry { h, a, h_next, p }| (vec![h.as_str(), a.as_str()], vec![h_next.as_str()], p))
                        .collect(),
                )?;
                let phi_dense = SparseTable {
                    name: "phi",
                    rows: vec![&hidden, &actions],
                    cols: vec![&sensors],
                }
                .load(
                    phi.iter_mut()
                        .map(|PhiEntry { h_next, a, s, p }| {
                            (vec![h_next.as_str(), a.as_str()], vec![s.as_str()], p)
                        })
                        .collect(),
                )?;
                let na = actions.len();
                let nu_k = TabularKernel::from_fn(vec![hidden.clone(), actions.clone()], hidden.clone(), |t| {
                    let start = (t[0] * na + t[1]) * hidden.len();
                    FiniteDist::new(hidden.clone(), nu_dense[start..start + hidden.len()].to_vec())
                })?;
                let phi_k = TabularKernel::from_fn(vec![hidden.clone(), actions.clone()], sensors.clone(), |t| {
                    let start = (t[0] * na + t[1]) * sensors.len();
                    FiniteDist::new(sensors.clone(), phi_dense[start..start + sensors.len()].to_vec())
                })?;
                Some((nu_k, phi_k))
            }
            (None, None) => None,
            _ => return Err(Error::Schema("`nu` and `phi` must be given together".into())),
        };
        let joint = match &mut self.joint {
            Some(entries) => {
                let dense = SparseTable {
                    name: "joint",
                    rows: vec![&hidden, &actions],
                    cols: vec![&hidden, &sensors],
                }
                .load(
                    entries
                        .iter_mut()
                        .map(|JointEntry { h, a, h_next, s, p }| {
                            (vec![h.as_str(), a.as_str()], vec![h_next.as_str(), s.as_str()], p)
                        })
                        .collect(),
                )?;
                let (na, nh, ns) = (actions.len(), hidden.len(), sensors.len());
                Some(JointKernel::from_fn(
                    hidden.clone(),
                    actions.clone(),
                    sensors.clone(),
                    |h, a, h2, s| dense[((h * na + a) * nh + h2) * ns + s],
                )?)
            }
            None => None,
        };
        if factored.is_none() && joint.is_none() {
            return Err(Error::Schema("kernel needs `nu` and `phi`, or `joint`".into()));
        }
        if let (Some((nu, phi)), Some(joint)) = (&factored, &joint) {
            let product = JointKernel::from_factored(nu, phi)?;
            for h in 0..hidden.len() {
                for a in 0..actions.len() {
                    for h2 in 0..hidden.len() {
                        for s in 0..sensors.len() {
                            let d = (product.get(h, a, h2, s) - joint.get(h, a, h2, s)).abs();
                            if d > CONSISTENCY_TOL {
                                return Err(Error::Probability(format!(
                                    "`joint` differs from ν·φ by {d} at ({}, {}, {}, {})",
                                    hidden.label(h),
                                    actions.label(a),
                                    hidden.label(h2),
                                    sensors.label(s)
                                )));
                            }
                        }
                    }
                }
            }
        }
        Ok(KernelParts {
            hidden,
            actions,
            factored,
            joint,
        })
    }

    /// The joint kernel; prefers the `joint` table when both are given.
    pub fn to_kernel(&self) -> Result<JointKernel> {
        let parts = self.clone().parts()?;
        match (parts.joint, parts.factored) {
            (Some(joint), _) => Ok(joint),
            (None, Some((nu, phi))) => JointKernel::from_factored(&nu, &phi),
            (None, None) => unreachable!("checked in parts"),
        }
    }
}

impl PomdpDoc {
    fn validate(&mut self) -> Result<()> {
        self.build_from_parts().map(|_| ())
    }

    fn build_from_parts(&mut self) -> Result<Pomdp> {
        let parts = self.kernel.parts()?;
        let (nh, na) = (parts.hidden.len(), parts.actions.len());
        let mut reward = vec![None; nh * na];
        for RewardEntry { h, a, r } in &self.reward {
            let k = parts.hidden.index_of(h)? * na + parts.actions.index_of(a)?;
            if reward[k].replace(*r).is_some() {
                return Err(Error::Schema(format!("duplicate reward for ({h}, {a})")));
            }
        }
        let reward = reward
            .into_iter()
            .enumerate()
            .map(|(k, r)| {
                r.ok_or_else(|| {
                    Error::Schema(format!(
                        "missing reward for ({}, {})",
                        parts.hidden.label(k / na),
                        parts.actions.label(k % na)
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let pomdp = match (parts.joint, parts.factored) {
            (_, Some((nu, phi))) => Pomdp::from_factored(nu, phi, reward, self.discount)?,
            (Some(joint), None) => Pomdp::from_joint(joint, reward, self.discount)?,
            (None, None) => unreachable!("checked in parts"),
        };
        Ok(pomdp.with_objective(self.objective))
    }

    pub fn to_pomdp(&self) -> Result<Pomdp> {
        self.clone().build_from_parts()
    }

    /// The document form of a model, with factored kernels when available.
    pub fn from_pomdp(p: &Pomdp) -> Self {
        let (h, a, s) = (p.hidden(), p.actions(), p.sensors());
        let mut kernel = KernelDoc {
            hidden: h.labels(),
            actions: a.labels(),
            observations: s.labels(),
            nu: None,
            phi: None,
            joint: None,
        };
        match p.factors() {
            Some(f) => {
                let mut nu = Vec::new();
                let mut phi = Vec::new();
                for x in 0..h.len() {
                    for u in 0..a.len() {
                        for (y, w) in f.nu.row(&[x, u]).weights().iter().enumerate() {
                            nu.push(NuEntry {
                                h: h.label(x).into(),
                                a: a.label(u).into(),
                                h_next: h.label(y).into(),
                                p: *w,
                            });
                        }
                        for (y, w) in f.phi.row(&[x, u]).weights().iter().enumerate() {
                            phi.push(PhiEntry {
                                h_next: h.label(x).into(),
                                a: a.label(u).into(),
                                s: s.label(y).into(),
                                p: *w,
                            });
                        }
                    }
                }
                kernel.nu = Some(nu);
                kernel.phi = Some(phi);
            }
            None => {
                let mut joint = Vec::new();
                for x in 0..h.len() {
                    for u in 0..a.len() {
                        for y in 0..h.len() {
                            for o in 0..s.len() {
                                joint.push(JointEntry {
                                    h: h.label(x).into(),
                                    a: a.label(u).into(),
                                    h_next: h.label(y).into(),
                                    s: s.label(o).into(),
                                    p: p.kappa().get(x, u, y, o),
                                });
                            }
                        }
                    }
                }
                kernel.joint = Some(joint);
            }
        }
        let mut reward = Vec::new();
        for x in 0..h.len() {
            for u in 0..a.len() {
                reward.push(RewardEntry {
                    h: h.label(x).into(),
                    a: a.label(u).into(),
                    r: p.reward(x, u),
                });
            }
        }
        Self {
            kernel,
            reward,
            discount: p.discount(),
            objective: p.objective(),
        }
    }
}

impl MachineDoc {
    fn validate(&mut self) -> Result<()> {
        self.build().map(|_| ())
    }

    fn build(&mut self) -> Result<StochasticMooreMachine> {
        match self {
            MachineDoc::Builtin { builtin, params } => machine::builtin(builtin, params),
            MachineDoc::Tabular {
                states,
                inputs,
                outputs,
                kernel,
                expose,
            } => {
                let m_set = label_set("M", states)?;
                let i_set = label_set("I", inputs)?;
                let o_set = label_set("O", outputs)?;
                let dense = SparseTable {
                    name: "kernel",
                    rows: vec![&i_set, &m_set],
                    cols: vec![&m_set],
                }
                .load(
                    kernel
                        .iter_mut()
                        .map(|MachineKernelEntry { i, m, m_next, p }| {
                            (vec![i.as_str(), m.as_str()], vec![m_next.as_str()], p)
                        })
                        .collect(),
                )?;
                let nm = m_set.len();
                let kernel = TabularKernel::from_fn(vec![i_set.clone(), m_set.clone()], m_set.clone(), |t| {
                    let start = (t[0] * nm + t[1]) * nm;
                    FiniteDist::new(m_set.clone(), dense[start..start + nm].to_vec())
                })?;
                let mut table = vec![None; nm];
                for ExposeEntry { m, o } in expose.iter() {
                    let k = m_set.index_of(m)?;
                    if table[k].replace(o_set.index_of(o)?).is_some() {
                        return Err(Error::Schema(format!("duplicate expose entry for `{m}`")));
                    }
                }
                let table = table
                    .into_iter()
                    .enumerate()
                    .map(|(k, o)| o.ok_or_else(|| Error::Schema(format!("missing expose for `{}`", m_set.label(k)))))
                    .collect::<Result<Vec<_>>>()?;
                Ok(StochasticMooreMachine::Tabular(TabularMachine::new(
                    m_set, i_set, o_set, kernel, table,
                )?))
            }
        }
    }

    pub fn to_machine(&self) -> Result<StochasticMooreMachine> {
        self.clone().build()
    }
}

impl PsiDoc {
    /// Binds the map to a machine's state space.
    pub fn to_psi(&self, hidden: &LabelSet, machine: &StochasticMooreMachine) -> Result<Psi> {
        match (self, machine) {
            (PsiDoc::Builtin { builtin }, _) => {
                let psi = Psi::builtin(builtin)?;
                psi.hidden().check_same(hidden, "builtin ψ hidden states")?;
                Ok(psi)
            }
            (PsiDoc::Table(entries), StochasticMooreMachine::Tabular(t)) => {
                let mut entries = entries.clone();
                let dense = SparseTable {
                    name: "psi",
                    rows: vec![t.states()],
                    cols: vec![hidden],
                }
                .load(
                    entries
                        .iter_mut()
                        .map(|PsiEntry { m, h, p }| (vec![m.as_str()], vec![h.as_str()], p))
                        .collect(),
                )?;
                let nh = hidden.len();
                Ok(Psi::Tabular(TabularKernel::from_fn(
                    vec![t.states().clone()],
                    hidden.clone(),
                    |r| FiniteDist::new(hidden.clone(), dense[r[0] * nh..(r[0] + 1) * nh].to_vec()),
                )?))
            }
            (PsiDoc::Table(_), _) => Err(Error::Domain(
                "tabular ψ needs a tabular machine".into(),
            )),
        }
    }
}

impl InterpretationDoc {
    fn validate(&mut self) -> Result<()> {
        let parts = self.model.parts()?;
        if let PsiDoc::Table(entries) = &mut self.psi {
            // Row sums are checked per machine state label present in the table.
            let mut sums: HashMap<String, f64> = HashMap::new();
            for PsiEntry { m, h, p } in entries.iter() {
                parts.hidden.index_of(h)?;
                if !p.is_finite() || *p < 0.0 {
                    return Err(Error::Probability(format!("psi: invalid probability {p}")));
                }
                *sums.entry(m.clone()).or_default() += p;
            }
            for (m, sum) in &sums {
                if (sum - 1.0).abs() > LOAD_ROW_TOL {
                    return Err(Error::Probability(format!("psi row `{m}` sums to {sum}")));
                }
            }
            for e in entries.iter_mut() {
                e.p /= rescale(sums[&e.m]);
            }
        }
        if let Some(alpha) = &self.alpha {
            for e in alpha {
                parts.actions.index_of(&e.a)?;
            }
        }
        if let PsiDoc::Builtin { builtin } = &self.psi {
            Psi::builtin(builtin)?
                .hidden()
                .check_same(&parts.hidden, "builtin ψ hidden states")?;
        }
        Ok(())
    }

    /// Binds the document to a machine.
    pub fn to_interpretation(&self, machine: &StochasticMooreMachine) -> Result<Interpretation> {
        let model = self.model.to_kernel()?;
        let psi = self.psi.to_psi(model.states(), machine)?;
        let alpha = match (&self.alpha, machine) {
            (None, _) => ActionFunction::Expose,
            (Some(entries), StochasticMooreMachine::Tabular(t)) => {
                let mut table = vec![None; t.states().len()];
                for AlphaEntry { m, a } in entries {
                    let k = t.states().index_of(m)?;
                    if table[k].replace(model.actions().index_of(a)?).is_some() {
                        return Err(Error::Schema(format!("duplicate alpha entry for `{m}`")));
                    }
                }
                ActionFunction::Table(
                    table
                        .into_iter()
                        .enumerate()
                        .map(|(k, a)| {
                            a.ok_or_else(|| Error::Schema(format!("missing alpha for `{}`", t.states().label(k))))
                        })
                        .collect::<Result<_>>()?,
                )
            }
            (Some(_), _) => return Err(Error::Domain("alpha tables need a tabular machine".into())),
        };
        Interpretation::new(psi, alpha, model)
    }
}

impl MdpDoc {
    fn validate(&mut self) -> Result<()> {
        self.build().map(|_| ())
    }

    fn build(&mut self) -> Result<Mdp> {
        let x_set = label_set("X", &self.states)?;
        let a_set = label_set("A", &self.actions)?;
        let dense = SparseTable {
            name: "transition",
            rows: vec![&x_set, &a_set],
            cols: vec![&x_set],
        }
        .load(
            self.transition
                .iter_mut()
                .map(|TransitionEntry { x, a, x_next, p }| (vec![x.as_str(), a.as_str()], vec![x_next.as_str()], p))
                .collect(),
        )?;
        let (nx, na) = (x_set.len(), a_set.len());
        let transition = TabularKernel::from_fn(vec![x_set.clone(), a_set.clone()], x_set.clone(), |t| {
            let start = (t[0] * na + t[1]) * nx;
            FiniteDist::new(x_set.clone(), dense[start..start + nx].to_vec())
        })?;
        let mut reward = vec![None; nx * na];
        for MdpRewardEntry { x, a, r } in &self.reward {
            let k = x_set.index_of(x)? * na + a_set.index_of(a)?;
            if reward[k].replace(*r).is_some() {
                return Err(Error::Schema(format!("duplicate reward for ({x}, {a})")));
            }
        }
        let reward = reward
            .into_iter()
            .map(|r| r.ok_or_else(|| Error::Schema("missing MDP reward entry".into())))
            .collect::<Result<Vec<_>>>()?;
        Mdp::new(transition, reward, self.discount)
    }

    pub fn to_mdp(&self) -> Result<Mdp> {
        self.clone().build()
    }
}

impl ModelDocument {
    pub fn kind(&self) -> DocumentKind {
        match self {
            ModelDocument::Pomdp(_) => DocumentKind::Pomdp,
            ModelDocument::Machine(_) => DocumentKind::Machine,
            ModelDocument::Interpretation(_) => DocumentKind::Interpretation,
            ModelDocument::Mdp(_) => DocumentKind::Mdp,
        }
    }

    /// Parses, validates and renormalizes a document.
    pub fn parse(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(schema_error)?;
        let Value::Object(mut body) = value else {
            return Err(Error::Schema("document must be a JSON object".into()));
        };
        let kind = match body.remove("kind") {
            Some(Value::String(k)) => DocumentKind::parse(&k)?,
            Some(_) => return Err(Error::Schema("`kind` must be a string".into())),
            None => DocumentKind::infer(&body)?,
        };
        let body = Value::Object(body);
        let mut doc = match kind {
            DocumentKind::Pomdp => ModelDocument::Pomdp(serde_json::from_value(body).map_err(schema_error)?),
            DocumentKind::Machine => ModelDocument::Machine(serde_json::from_value(body).map_err(schema_error)?),
            DocumentKind::Interpretation => {
                ModelDocument::Interpretation(serde_json::from_value(body).map_err(schema_error)?)
            }
            DocumentKind::Mdp => ModelDocument::Mdp(serde_json::from_value(body).map_err(schema_error)?),
        };
        match &mut doc {
            ModelDocument::Pomdp(d) => d.validate()?,
            ModelDocument::Machine(d) => d.validate()?,
            ModelDocument::Interpretation(d) => d.validate()?,
            ModelDocument::Mdp(d) => d.validate()?,
        }
        Ok(doc)
    }

    pub fn to_value(&self) -> Value {
        let mut body = match self {
            ModelDocument::Pomdp(d) => serde_json::to_value(d),
            ModelDocument::Machine(d) => serde_json::to_value(d),
            ModelDocument::Interpretation(d) => serde_json::to_value(d),
            ModelDocument::Mdp(d) => serde_json::to_value(d),
        }
        .expect("documents serialize");
        if let Value::Object(map) = &mut body {
            map.insert("kind".into(), Value::from(self.kind().name()));
        }
        body
    }

    pub fn into_pomdp(self) -> Result<PomdpDoc> {
        match self {
            ModelDocument::Pomdp(d) => Ok(d),
            other => Err(Error::Schema(format!("expected a pomdp document, got {}", other.kind().name()))),
        }
    }

    pub fn into_machine(self) -> Result<MachineDoc> {
        match self {
            ModelDocument::Machine(d) => Ok(d),
            other => Err(Error::Schema(format!("expected a machine document, got {}", other.kind().name()))),
        }
    }

    pub fn into_interpretation(self) -> Result<InterpretationDoc> {
        match self {
            ModelDocument::Interpretation(d) => Ok(d),
            other => Err(Error::Schema(format!(
                "expected an interpretation document, got {}",
                other.kind().name()
            ))),
        }
    }

    pub fn into_mdp(self) -> Result<MdpDoc> {
        match self {
            ModelDocument::Mdp(d) => Ok(d),
            other => Err(Error::Schema(format!("expected an mdp document, got {}", other.kind().name()))),
        }
    }
}

/// Reads and validates a document from disk.
pub fn load(path: impl AsRef<Path>) -> Result<ModelDocument> {
    ModelDocument::parse(&fs::read_to_string(path)?)
}

/// Serializes a document. Floats use the shortest representation that reads
/// back to the same `f64`.
pub fn emit(doc: &ModelDocument) -> String {
    serde_json::to_string_pretty(&doc.to_value()).expect("values serialize")
}

pub const SONDIK_POMDP_JSON: &str = include_str!("../data/sondik_pomdp.json");
pub const SONDIK_MACHINE_JSON: &str = include_str!("../data/sondik_machine.json");
pub const SONDIK_INTERPRETATION_JSON: &str = include_str!("../data/sondik_interpretation.json");

pub fn bundled_sondik_pomdp() -> Result<Pomdp> {
    ModelDocument::parse(SONDIK_POMDP_JSON)?.into_pomdp()?.to_pomdp()
}

pub fn versions() -> Value {
    json!({ "moorebelief": env!("CARGO_PKG_VERSION"), "report_format": REPORT_FORMAT })
}

fn point_json(machine: &StochasticMooreMachine, m: &crate::machine::MachineState, i: usize) -> (Value, Value) {
    (machine.state_json(m), Value::from(machine.inputs().label(i)))
}

pub fn consistency_report_json(report: &ConsistencyReport, machine: &StochasticMooreMachine, config: Value) -> Value {
    let violations: Vec<Value> = report
        .violations
        .iter()
        .map(|v| {
            let (m, i) = point_json(machine, &v.state, v.input);
            json!({ "m": m, "i": i, "m_next": machine.state_json(&v.next), "residual": v.residual })
        })
        .collect();
    let skipped: Vec<Value> = report
        .skipped_subjectively_impossible
        .iter()
        .map(|(m, i)| {
            let (m, i) = point_json(machine, m, *i);
            json!({ "m": m, "i": i })
        })
        .collect();
    json!({
        "verdict": report.verdict,
        "max_residual": report.max_residual,
        "checked": report.checked_points.len(),
        "tol": report.tol,
        "violations": violations,
        "skipped": skipped,
        "config": config,
        "versions": versions(),
    })
}

pub fn solution_report_json(report: &SolutionReport, machine: &StochasticMooreMachine, config: Value) -> Value {
    let mut value = consistency_report_json(&report.filtering, machine, config);
    let mismatches: Vec<Value> = report
        .policy_mismatches
        .iter()
        .map(|mm| {
            json!({
                "m": machine.state_json(&mm.state),
                "exposed": machine.outputs().label(mm.exposed),
                "optimal": machine.outputs().label(mm.optimal),
            })
        })
        .collect();
    let map = value.as_object_mut().expect("object");
    map.insert("filtering_verdict".into(), json!(report.filtering.verdict));
    map.insert("verdict".into(), json!(report.verdict));
    map.insert("policy_checked".into(), json!(report.policy_checked));
    map.insert("policy_mismatches".into(), Value::from(mismatches));
    value
}

pub fn prop1_report_json(report: &Prop1Report, machine: &StochasticMooreMachine, config: Value) -> Value {
    let violations: Vec<Value> = report
        .checked
        .iter()
        .filter(|(_, _, r)| r.is_nan() || *r > report.tol)
        .map(|(m, i, r)| {
            let (m, i) = point_json(machine, m, *i);
            json!({ "m": m, "i": i, "residual": r })
        })
        .collect();
    let skipped: Vec<Value> = report
        .skipped
        .iter()
        .map(|(m, i)| {
            let (m, i) = point_json(machine, m, *i);
            json!({ "m": m, "i": i })
        })
        .collect();
    json!({
        "verdict": report.verdict,
        "max_residual": report.max_residual,
        "checked": report.checked.len(),
        "tol": report.tol,
        "violations": violations,
        "skipped": skipped,
        "config": config,
        "versions": versions(),
    })
}

pub fn policy_json(pol: &AlphaVectorPolicy) -> Value {
    let p = pol.model();
    let vectors: Vec<Value> = pol
        .vectors()
        .iter()
        .map(|v| {
            let sign = p.objective().sign();
            let values: Vec<f64> = v.values.iter().map(|x| sign * x).collect();
            json!({ "action": p.actions().label(v.action), "alpha": values })
        })
        .collect();
    json!({
        "hidden": p.hidden().labels(),
        "objective": p.objective(),
        "discount": p.discount(),
        "stages": pol.stages(),
        "last_change": pol.last_change(),
        "vectors": vectors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_pomdp() -> Value {
        json!({
            "kind": "pomdp",
            "hidden": ["1", "2"],
            "actions": ["1", "2"],
            "observations": ["1", "2"],
            "nu": [
                {"h": "1", "a": "1", "h_next": "1", "p": 1.0},
                {"h": "2", "a": "1", "h_next": "2", "p": 1.0},
                {"h": "1", "a": "2", "h_next": "2", "p": 1.0},
                {"h": "2", "a": "2", "h_next": "1", "p": 1.0}
            ],
            "phi": [
                {"h_next": "1", "a": "1", "s": "1", "p": 0.5},
                {"h_next": "1", "a": "1", "s": "2", "p": 0.5},
                {"h_next": "2", "a": "1", "s": "1", "p": 0.5},
                {"h_next": "2", "a": "1", "s": "2", "p": 0.5},
                {"h_next": "1", "a": "2", "s": "1", "p": 1.0},
                {"h_next": "2", "a": "2", "s": "2", "p": 1.0}
            ],
            "reward": [
                {"h": "1", "a": "1", "r": 1.0}, {"h": "1", "a": "2", "r": 0.0},
                {"h": "2", "a": "1", "r": 0.0}, {"h": "2", "a": "2", "r": 0.5}
            ],
            "discount": 0.9
        })
    }

    #[test]
    fn bundled_sondik_rewards() {
        let p = bundled_sondik_pomdp().unwrap();
        assert_eq!(p.reward(0, 0), 4.0);
        assert_eq!(p.reward(1, 1), -3.0);
        assert_eq!(p.objective(), Objective::Minimize);
    }

    #[test]
    fn bundled_sondik_matches_constructed_model() {
        let loaded = bundled_sondik_pomdp().unwrap();
        let built = crate::sondik::pomdp(loaded.discount()).unwrap();
        assert_eq!(loaded.kappa(), built.kappa());
        assert_eq!(loaded.reward_table(), built.reward_table());
    }

    #[test]
    fn row_sum_gate() {
        let mut doc = tiny_pomdp();
        doc["nu"][0]["p"] = json!(1.1);
        assert!(matches!(ModelDocument::parse(&doc.to_string()), Err(Error::Probability(_))));

        let mut doc = tiny_pomdp();
        doc["nu"][0]["p"] = json!(1.0 + 5e-7);
        let parsed = ModelDocument::parse(&doc.to_string()).unwrap().into_pomdp().unwrap();
        assert_eq!(parsed.kernel.nu.unwrap()[0].p, 1.0);
    }

    #[test]
    fn undeclared_labels() {
        let mut doc = tiny_pomdp();
        doc["reward"][0]["a"] = json!("3");
        assert!(matches!(ModelDocument::parse(&doc.to_string()), Err(Error::Label(_))));
    }

    #[test]
    fn schema_errors() {
        let mut doc = tiny_pomdp();
        doc.as_object_mut().unwrap().remove("discount");
        assert!(matches!(ModelDocument::parse(&doc.to_string()), Err(Error::Schema(_))));
        let mut doc = tiny_pomdp();
        doc["discount"] = json!("high");
        assert!(matches!(ModelDocument::parse(&doc.to_string()), Err(Error::Schema(_))));
        let mut doc = tiny_pomdp();
        doc["reward"].as_array_mut().unwrap().pop();
        assert!(matches!(ModelDocument::parse(&doc.to_string()), Err(Error::Schema(_))));
        assert!(matches!(ModelDocument::parse("[1, 2]"), Err(Error::Schema(_))));
    }

    #[test]
    fn joint_and_factored_must_agree() {
        let p = ModelDocument::parse(&tiny_pomdp().to_string())
            .unwrap()
            .into_pomdp()
            .unwrap()
            .to_pomdp()
            .unwrap();
        let mut as_joint = PomdpDoc::from_pomdp(&p);
        let mut joint_only = p.clone();
        joint_only = Pomdp::from_joint(joint_only.kappa().clone(), joint_only.reward_table().to_vec(), 0.9).unwrap();
        as_joint.kernel.joint = PomdpDoc::from_pomdp(&joint_only).kernel.joint;
        let ok = ModelDocument::parse(&emit(&ModelDocument::Pomdp(as_joint.clone())));
        assert!(ok.is_ok());

        let joint = as_joint.kernel.joint.as_mut().unwrap();
        joint[0].p = 0.25;
        joint[1].p = 0.75;
        assert!(matches!(
            ModelDocument::parse(&emit(&ModelDocument::Pomdp(as_joint))),
            Err(Error::Probability(_))
        ));
    }

    #[test]
    fn kind_is_inferred_when_missing() {
        let mut doc = tiny_pomdp();
        doc.as_object_mut().unwrap().remove("kind");
        assert_eq!(ModelDocument::parse(&doc.to_string()).unwrap().kind(), DocumentKind::Pomdp);
        let m = ModelDocument::parse(SONDIK_MACHINE_JSON).unwrap();
        assert_eq!(m.kind(), DocumentKind::Machine);
    }

    #[test]
    fn tabular_machine_documents() {
        let doc = json!({
            "kind": "machine",
            "states": ["a", "b"],
            "inputs": ["x"],
            "outputs": ["o"],
            "kernel": [
                {"i": "x", "m": "a", "m_next": "b", "p": 1.0},
                {"i": "x", "m": "b", "m_next": "a", "p": 0.5},
                {"i": "x", "m": "b", "m_next": "b", "p": 0.5}
            ],
            "expose": [{"m": "a", "o": "o"}, {"m": "b", "o": "o"}]
        });
        let m = ModelDocument::parse(&doc.to_string()).unwrap().into_machine().unwrap().to_machine().unwrap();
        assert!(!m.is_deterministic());
        let mut bad = doc.clone();
        bad["expose"].as_array_mut().unwrap().pop();
        assert!(matches!(ModelDocument::parse(&bad.to_string()), Err(Error::Schema(_))));
    }
}
