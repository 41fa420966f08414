//! Exact finite probability over labeled sets.
//!
//! Everything here is dense: a [`FiniteDist`] stores one weight per label of
//! its set, including zeros, and support queries filter at read time. Kernels
//! are tables of rows indexed by the mixed-radix position of the domain tuple.

use std::fmt;
use std::sync::Arc;

use indexmap::IndexSet;

use crate::error::{Error, Result};

/// Maximum deviation of a weight sum from 1 accepted at construction.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Total-variation distance under which two distributions compare equal.
pub const DIST_EQ_TOL: f64 = 1e-7;

/// An ordered finite set of unique, non-empty labels.
///
/// Cloning is cheap; the labels live behind an `Arc`.
#[derive(Clone)]
pub struct LabelSet {
    name: Arc<str>,
    labels: Arc<IndexSet<String>>,
}

impl LabelSet {
    /// Builds a set named `name` (used only in error messages).
    pub fn new<S: Into<String>>(name: &str, labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut set = IndexSet::new();
        for label in labels {
            let label = label.into();
            if label.is_empty() {
                return Err(Error::Label(format!("empty label in set {name}")));
            }
            if !set.insert(label.clone()) {
                return Err(Error::Label(format!("duplicate label `{label}` in set {name}")));
            }
        }
        if set.is_empty() {
            return Err(Error::Label(format!("set {name} has no labels")));
        }
        Ok(Self {
            name: name.into(),
            labels: Arc::new(set),
        })
    }

    /// Labels "1".."n", the convention used by the bundled examples.
    pub fn numbered(name: &str, n: usize) -> Result<Self> {
        Self::new(name, (1..=n).map(|k| k.to_string()))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels
            .get_index_of(label)
            .ok_or_else(|| Error::unknown_label(label, &self.name))
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(String::as_str)
    }

    pub fn labels(&self) -> Vec<String> {
        self.labels.iter().cloned().collect()
    }

    pub(crate) fn check_same(&self, other: &LabelSet, context: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "{context}: set {} {:?} does not match set {} {:?}",
                self.name,
                self.labels(),
                other.name,
                other.labels()
            )))
        }
    }
}

impl PartialEq for LabelSet {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.labels, &other.labels)
            || self.labels.iter().eq(other.labels.iter())
    }
}

impl fmt::Debug for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:?}", self.name, self.labels())
    }
}

/// A finitely supported probability distribution over a [`LabelSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteDist {
    set: LabelSet,
    weights: Vec<f64>,
}

fn check_weights(context: &str, weights: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for &w in weights {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::Probability(format!("{context}: invalid weight {w}")));
        }
        sum += w;
    }
    Ok(sum)
}

impl FiniteDist {
    /// Dense constructor: one weight per label, in set order.
    pub fn new(set: LabelSet, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != set.len() {
            return Err(Error::Domain(format!(
                "distribution over {} needs {} weights, got {}",
                set.name(),
                set.len(),
                weights.len()
            )));
        }
        let sum = check_weights(set.name(), &weights)?;
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Probability(format!(
                "distribution over {} sums to {sum}",
                set.name()
            )));
        }
        Ok(Self { set, weights })
    }

    /// Divides non-negative weights by their sum. Fails on a zero sum.
    pub fn normalized(set: LabelSet, mut weights: Vec<f64>) -> Result<Self> {
        let sum = check_weights(set.name(), &weights)?;
        if sum <= 0.0 {
            return Err(Error::Probability(format!(
                "cannot normalize zero mass over {}",
                set.name()
            )));
        }
        weights.iter_mut().for_each(|w| *w /= sum);
        Self::new(set, weights)
    }

    /// Point mass on `label`.
    pub fn dirac(label: &str, set: &LabelSet) -> Result<Self> {
        let index = set.index_of(label)?;
        Ok(Self::dirac_index(index, set))
    }

    pub(crate) fn dirac_index(index: usize, set: &LabelSet) -> Self {
        let mut weights = vec![0.0; set.len()];
        weights[index] = 1.0;
        Self {
            set: set.clone(),
            weights,
        }
    }

    pub fn uniform(set: &LabelSet) -> Self {
        let n = set.len();
        Self {
            set: set.clone(),
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn set(&self) -> &LabelSet {
        &self.set
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, index: usize) -> f64 {
        self.weights[index]
    }

    pub fn prob(&self, label: &str) -> Result<f64> {
        Ok(self.weights[self.set.index_of(label)?])
    }

    pub fn outcomes(&self) -> impl Iterator<Item = (&str, f64)> {
        self.set.iter().zip(self.weights.iter().copied())
    }

    /// Labels carrying positive weight.
    pub fn support(&self) -> impl Iterator<Item = &str> {
        self.outcomes().filter(|(_, w)| *w > 0.0).map(|(l, _)| l)
    }

    pub fn support_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(k, _)| k)
    }

    pub fn total_variation(&self, other: &FiniteDist) -> Result<f64> {
        self.set.check_same(&other.set, "total variation")?;
        Ok(0.5
            * self
                .weights
                .iter()
                .zip(&other.weights)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>())
    }

    /// Equality up to [`DIST_EQ_TOL`] in total variation.
    pub fn approx_eq(&self, other: &FiniteDist) -> bool {
        self.total_variation(other)
            .map(|tv| tv <= DIST_EQ_TOL)
            .unwrap_or(false)
    }

    /// Expectation of `f` indexed by outcome position.
    pub fn expect(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// Result of conditioning a joint distribution on an observed value.
#[derive(Clone, Debug, PartialEq)]
pub enum Conditioned {
    Posterior { posterior: FiniteDist, marginal: f64 },
    /// The observed value has probability zero; nothing can be inferred.
    ZeroMarginal,
}

impl Conditioned {
    pub fn posterior(&self) -> Option<&FiniteDist> {
        match self {
            Conditioned::Posterior { posterior, .. } => Some(posterior),
            Conditioned::ZeroMarginal => None,
        }
    }

    pub fn marginal(&self) -> f64 {
        match self {
            Conditioned::Posterior { marginal, .. } => *marginal,
            Conditioned::ZeroMarginal => 0.0,
        }
    }

    pub fn is_zero_marginal(&self) -> bool {
        matches!(self, Conditioned::ZeroMarginal)
    }
}

/// A distribution over the product `first × second`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct JointDist {
    first: LabelSet,
    second: LabelSet,
    weights: Vec<f64>,
}

impl JointDist {
    pub fn new(first: LabelSet, second: LabelSet, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != first.len() * second.len() {
            return Err(Error::Domain(format!(
                "joint over {}×{} needs {} weights, got {}",
                first.name(),
                second.name(),
                first.len() * second.len(),
                weights.len()
            )));
        }
        let sum = check_weights("joint", &weights)?;
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Probability(format!("joint distribution sums to {sum}")));
        }
        Ok(Self {
            first,
            second,
            weights,
        })
    }

    pub fn first(&self) -> &LabelSet {
        &self.first
    }

    pub fn second(&self) -> &LabelSet {
        &self.second
    }

    pub fn get(&self, y: usize, z: usize) -> f64 {
        self.weights[y * self.second.len() + z]
    }

    pub fn prob(&self, y: &str, z: &str) -> Result<f64> {
        Ok(self.get(self.first.index_of(y)?, self.second.index_of(z)?))
    }

    /// The column `j(·, z)` (unnormalized).
    pub fn column(&self, z: usize) -> Vec<f64> {
        (0..self.first.len()).map(|y| self.get(y, z)).collect()
    }

    pub fn marginal_first(&self) -> FiniteDist {
        let weights = (0..self.first.len())
            .map(|y| (0..self.second.len()).map(|z| self.get(y, z)).sum())
            .collect();
        FiniteDist {
            set: self.first.clone(),
            weights,
        }
    }

    pub fn marginal_second(&self) -> FiniteDist {
        let weights = (0..self.second.len())
            .map(|z| self.column(z).iter().sum())
            .collect();
        FiniteDist {
            set: self.second.clone(),
            weights,
        }
    }

    pub fn condition_on_second_index(&self, z: usize) -> Conditioned {
        let column = self.column(z);
        let marginal: f64 = column.iter().sum();
        if marginal <= 0.0 {
            return Conditioned::ZeroMarginal;
        }
        let weights = column.into_iter().map(|w| w / marginal).collect();
        Conditioned::Posterior {
            posterior: FiniteDist {
                set: self.first.clone(),
                weights,
            },
            marginal,
        }
    }
}

/// Conditions a joint over `(y, z)` on `z = z_obs`.
pub fn joint_then_condition(joint: &JointDist, z_obs: &str) -> Result<Conditioned> {
    let z = joint.second.index_of(z_obs)?;
    Ok(joint.condition_on_second_index(z))
}

/// A Markov kernel from a product of labeled sets to a labeled set.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularKernel {
    domain: Vec<LabelSet>,
    codomain: LabelSet,
    rows: Vec<FiniteDist>,
}

impl TabularKernel {
    /// `rows` are ordered by the mixed-radix index of the domain tuple,
    /// first factor most significant.
    pub fn new(domain: Vec<LabelSet>, codomain: LabelSet, rows: Vec<FiniteDist>) -> Result<Self> {
        if domain.is_empty() {
            return Err(Error::Domain("kernel domain has no factors".into()));
        }
        let expected: usize = domain.iter().map(LabelSet::len).product();
        if rows.len() != expected {
            return Err(Error::Domain(format!(
                "kernel into {} needs {expected} rows, got {}",
                codomain.name(),
                rows.len()
            )));
        }
        for row in &rows {
            row.set.check_same(&codomain, "kernel row")?;
        }
        Ok(Self {
            domain,
            codomain,
            rows,
        })
    }

    pub fn from_fn(
        domain: Vec<LabelSet>,
        codomain: LabelSet,
        mut row: impl FnMut(&[usize]) -> Result<FiniteDist>,
    ) -> Result<Self> {
        let sizes: Vec<usize> = domain.iter().map(LabelSet::len).collect();
        let total: usize = sizes.iter().product();
        let mut rows = Vec::with_capacity(total);
        let mut tuple = vec![0; sizes.len()];
        for flat in 0..total {
            let mut rest = flat;
            for (slot, size) in tuple.iter_mut().zip(&sizes).rev() {
                *slot = rest % size;
                rest /= size;
            }
            rows.push(row(&tuple)?);
        }
        Self::new(domain, codomain, rows)
    }

    /// The identity kernel on `set`.
    pub fn identity(set: &LabelSet) -> Self {
        let rows = (0..set.len()).map(|k| FiniteDist::dirac_index(k, set)).collect();
        Self {
            domain: vec![set.clone()],
            codomain: set.clone(),
            rows,
        }
    }

    pub fn domain(&self) -> &[LabelSet] {
        &self.domain
    }

    pub fn codomain(&self) -> &LabelSet {
        &self.codomain
    }

    fn flat_index(&self, tuple: &[usize]) -> usize {
        debug_assert_eq!(tuple.len(), self.domain.len());
        tuple
            .iter()
            .zip(&self.domain)
            .fold(0, |acc, (&k, set)| acc * set.len() + k)
    }

    pub fn row(&self, tuple: &[usize]) -> &FiniteDist {
        &self.rows[self.flat_index(tuple)]
    }

    pub fn row_by_labels(&self, tuple: &[&str]) -> Result<&FiniteDist> {
        if tuple.len() != self.domain.len() {
            return Err(Error::Domain(format!(
                "kernel takes {} arguments, got {}",
                self.domain.len(),
                tuple.len()
            )));
        }
        let indices = tuple
            .iter()
            .zip(&self.domain)
            .map(|(label, set)| set.index_of(label))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.row(&indices))
    }

    pub fn rows(&self) -> &[FiniteDist] {
        &self.rows
    }

    /// Marginalizes `d` through a single-factor kernel.
    pub fn pushforward(&self, d: &FiniteDist) -> Result<FiniteDist> {
        if self.domain.len() != 1 {
            return Err(Error::Domain(format!(
                "pushforward needs a single-factor domain, kernel has {}",
                self.domain.len()
            )));
        }
        d.set.check_same(&self.domain[0], "pushforward")?;
        let mut weights = vec![0.0; self.codomain.len()];
        for (x, &px) in d.weights.iter().enumerate() {
            if px == 0.0 {
                continue;
            }
            for (w, &k) in weights.iter_mut().zip(&self.rows[x].weights) {
                *w += px * k;
            }
        }
        FiniteDist::new(self.codomain.clone(), weights)
    }
}

/// A kernel `X × A → P(X × Y)`; the shape of both the POMDP joint kernel
/// and the model kernel of an interpretation.
#[derive(Clone, Debug, PartialEq)]
pub struct JointKernel {
    states: LabelSet,
    actions: LabelSet,
    outputs: LabelSet,
    data: Vec<f64>,
}

impl JointKernel {
    /// `value(x, a, x_next, y)` must give normalized rows over `(x_next, y)`.
    pub fn from_fn(
        states: LabelSet,
        actions: LabelSet,
        outputs: LabelSet,
        mut value: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let (nx, na, ny) = (states.len(), actions.len(), outputs.len());
        let mut data = Vec::with_capacity(nx * na * nx * ny);
        for x in 0..nx {
            for a in 0..na {
                let start = data.len();
                for x_next in 0..nx {
                    for y in 0..ny {
                        data.push(value(x, a, x_next, y));
                    }
                }
                let row = &data[start..];
                let sum = check_weights("joint kernel", row)?;
                if (sum - 1.0).abs() > NORMALIZATION_TOL {
                    return Err(Error::Probability(format!(
                        "joint kernel row ({}, {}) sums to {sum}",
                        states.label(x),
                        actions.label(a)
                    )));
                }
            }
        }
        Ok(Self {
            states,
            actions,
            outputs,
            data,
        })
    }

    /// `κ(x', y | x, a) = ν(x' | x, a) · φ(y | x', a)`.
    pub fn from_factored(nu: &TabularKernel, phi: &TabularKernel) -> Result<Self> {
        let [states, actions] = nu.domain() else {
            return Err(Error::Domain("ν must have domain X × A".into()));
        };
        let [phi_states, phi_actions] = phi.domain() else {
            return Err(Error::Domain("φ must have domain X × A".into()));
        };
        nu.codomain().check_same(states, "ν codomain")?;
        phi_states.check_same(states, "φ domain")?;
        phi_actions.check_same(actions, "φ actions")?;
        Self::from_fn(
            states.clone(),
            actions.clone(),
            phi.codomain().clone(),
            |x, a, x_next, y| nu.row(&[x, a]).weight(x_next) * phi.row(&[x_next, a]).weight(y),
        )
    }

    pub fn states(&self) -> &LabelSet {
        &self.states
    }

    pub fn actions(&self) -> &LabelSet {
        &self.actions
    }

    pub fn outputs(&self) -> &LabelSet {
        &self.outputs
    }

    #[inline]
    pub fn get(&self, x: usize, a: usize, x_next: usize, y: usize) -> f64 {
        let (nx, na, ny) = (self.states.len(), self.actions.len(), self.outputs.len());
        self.data[((x * na + a) * nx + x_next) * ny + y]
    }

    pub fn row(&self, x: usize, a: usize) -> JointDist {
        let (nx, na, ny) = (self.states.len(), self.actions.len(), self.outputs.len());
        let start = (x * na + a) * nx * ny;
        JointDist {
            first: self.states.clone(),
            second: self.outputs.clone(),
            weights: self.data[start..start + nx * ny].to_vec(),
        }
    }

    /// `Σ_x κ(·, · | x, a) d(x)`.
    pub fn predictive(&self, d: &FiniteDist, a: usize) -> Result<JointDist> {
        d.set.check_same(&self.states, "predictive")?;
        let (nx, ny) = (self.states.len(), self.outputs.len());
        let mut weights = vec![0.0; nx * ny];
        for (x, &px) in d.weights.iter().enumerate() {
            if px == 0.0 {
                continue;
            }
            for x_next in 0..nx {
                for y in 0..ny {
                    weights[x_next * ny + y] += px * self.get(x, a, x_next, y);
                }
            }
        }
        Ok(JointDist {
            first: self.states.clone(),
            second: self.outputs.clone(),
            weights,
        })
    }

    /// Marginal `Σ_y κ(x', y | x, a)` as a kernel `X × A → PX`.
    pub fn state_marginal(&self) -> Result<TabularKernel> {
        TabularKernel::from_fn(
            vec![self.states.clone(), self.actions.clone()],
            self.states.clone(),
            |t| {
                let weights = (0..self.states.len())
                    .map(|x_next| (0..self.outputs.len()).map(|y| self.get(t[0], t[1], x_next, y)).sum())
                    .collect();
                FiniteDist::new(self.states.clone(), weights)
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two() -> LabelSet {
        LabelSet::numbered("X", 2).unwrap()
    }

    #[test]
    fn dirac_examples() {
        let set = two();
        assert_eq!(FiniteDist::dirac("1", &set).unwrap().weights(), &[1.0, 0.0]);
        assert_eq!(FiniteDist::dirac("2", &set).unwrap().weights(), &[0.0, 1.0]);
        assert!(matches!(FiniteDist::dirac("3", &set), Err(Error::Label(_))));
    }

    #[test]
    fn label_sets_reject_bad_labels() {
        assert!(LabelSet::new("X", ["a", "a"]).is_err());
        assert!(LabelSet::new("X", ["a", ""]).is_err());
        assert!(LabelSet::new::<&str>("X", []).is_err());
    }

    #[test]
    fn construction_checks_normalization() {
        assert!(FiniteDist::new(two(), vec![0.5, 0.5 + 1e-10]).is_ok());
        assert!(matches!(
            FiniteDist::new(two(), vec![0.5, 0.6]),
            Err(Error::Probability(_))
        ));
        assert!(FiniteDist::new(two(), vec![-0.1, 1.1]).is_err());
        assert!(FiniteDist::new(two(), vec![1.0]).is_err());
    }

    #[test]
    fn support_filters_zero_weights() {
        let d = FiniteDist::new(LabelSet::numbered("X", 3).unwrap(), vec![0.5, 0.0, 0.5]).unwrap();
        assert_eq!(d.support().collect::<Vec<_>>(), vec!["1", "3"]);
    }

    #[test]
    fn pushforward_examples() {
        let set = two();
        let d = FiniteDist::new(set.clone(), vec![0.3, 0.7]).unwrap();
        assert_eq!(TabularKernel::identity(&set).pushforward(&d).unwrap(), d);

        let u = FiniteDist::new(set.clone(), vec![0.9, 0.1]).unwrap();
        let constant = TabularKernel::from_fn(vec![set.clone()], set.clone(), |_| Ok(u.clone())).unwrap();
        let pushed = constant.pushforward(&d).unwrap();
        assert!(pushed.total_variation(&u).unwrap() < 1e-15);

        // Sondik ν(·|·, a=1): ν(1|1)=1/5, ν(1|2)=1/2.
        let nu1 = TabularKernel::new(
            vec![set.clone()],
            set.clone(),
            vec![
                FiniteDist::new(set.clone(), vec![0.2, 0.8]).unwrap(),
                FiniteDist::new(set.clone(), vec![0.5, 0.5]).unwrap(),
            ],
        )
        .unwrap();
        let half = FiniteDist::uniform(&set);
        let out = nu1.pushforward(&half).unwrap();
        assert!((out.weight(0) - 0.35).abs() < 1e-15);
        assert!((out.weight(1) - 0.65).abs() < 1e-15);
    }

    #[test]
    fn pushforward_rejects_domain_mismatch() {
        let k = TabularKernel::identity(&two());
        let other = FiniteDist::uniform(&LabelSet::numbered("Y", 3).unwrap());
        assert!(matches!(k.pushforward(&other), Err(Error::Domain(_))));
    }

    #[test]
    fn conditioning_examples() {
        let y = LabelSet::new("Y", ["y1", "y2"]).unwrap();
        let z = LabelSet::new("Z", ["z1", "z2"]).unwrap();
        let uniform = JointDist::new(y.clone(), z.clone(), vec![0.25; 4]).unwrap();
        let post = joint_then_condition(&uniform, "z1").unwrap();
        assert_eq!(post.posterior().unwrap().weights(), &[0.5, 0.5]);

        let point = JointDist::new(y.clone(), z.clone(), vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let post = joint_then_condition(&point, "z1").unwrap();
        assert_eq!(post.posterior().unwrap().weights(), &[1.0, 0.0]);
        assert_eq!(joint_then_condition(&point, "z2").unwrap(), Conditioned::ZeroMarginal);
        assert!(matches!(joint_then_condition(&point, "z3"), Err(Error::Label(_))));
    }

    #[test]
    fn factored_joint_kernel_matches_products() {
        let x = two();
        let a = LabelSet::numbered("A", 1).unwrap();
        let nu = TabularKernel::from_fn(vec![x.clone(), a.clone()], x.clone(), |t| {
            FiniteDist::new(x.clone(), if t[0] == 0 { vec![0.2, 0.8] } else { vec![0.5, 0.5] })
        })
        .unwrap();
        let phi = TabularKernel::from_fn(vec![x.clone(), a.clone()], x.clone(), |t| {
            FiniteDist::new(x.clone(), if t[0] == 0 { vec![0.2, 0.8] } else { vec![0.6, 0.4] })
        })
        .unwrap();
        let kappa = JointKernel::from_factored(&nu, &phi).unwrap();
        assert!((kappa.get(0, 0, 0, 0) - 0.04).abs() < 1e-15);
        assert!((kappa.get(1, 0, 0, 1) - 0.4).abs() < 1e-15);
        let marginal = kappa.state_marginal().unwrap();
        assert!(marginal.row(&[0, 0]).approx_eq(nu.row(&[0, 0])));
    }
}
