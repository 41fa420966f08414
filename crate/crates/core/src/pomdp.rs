//! Finite POMDPs, exact Bayesian belief update, and the quantities of the
//! associated belief-state MDP.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{Conditioned, FiniteDist, JointDist, JointKernel, LabelSet, TabularKernel};

/// A belief state: a distribution over the hidden states.
pub type Belief = FiniteDist;

/// Total-variation distance under which successor beliefs are merged.
pub const BELIEF_MERGE_TOL: f64 = 1e-12;

/// Whether the reward table is maximized (rewards) or minimized (costs).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Maximize,
    Minimize,
}

impl Objective {
    /// Factor turning a table entry into a quantity to maximize.
    pub fn sign(self) -> f64 {
        match self {
            Objective::Maximize => 1.0,
            Objective::Minimize => -1.0,
        }
    }
}

/// The `ν`/`φ` factorization of the joint kernel, when known.
#[derive(Clone, Debug, PartialEq)]
pub struct Factors {
    /// `ν: H × A → PH`.
    pub nu: TabularKernel,
    /// `φ: H' × A → PS`, indexed by the successor state.
    pub phi: TabularKernel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pomdp {
    hidden: LabelSet,
    actions: LabelSet,
    sensors: LabelSet,
    kappa: JointKernel,
    factors: Option<Factors>,
    /// Row-major `r[h][a]`.
    reward: Vec<f64>,
    discount: f64,
    objective: Objective,
}

fn check_discount(discount: f64) -> Result<()> {
    if discount > 0.0 && discount < 1.0 {
        Ok(())
    } else {
        Err(Error::Model(format!("discount {discount} outside (0, 1)")))
    }
}

impl Pomdp {
    pub fn from_joint(kappa: JointKernel, reward: Vec<f64>, discount: f64) -> Result<Self> {
        let (nh, na) = (kappa.states().len(), kappa.actions().len());
        if reward.len() != nh * na {
            return Err(Error::Domain(format!(
                "reward table needs {} entries, got {}",
                nh * na,
                reward.len()
            )));
        }
        if let Some(r) = reward.iter().find(|r| !r.is_finite()) {
            return Err(Error::Model(format!("non-finite reward {r}")));
        }
        check_discount(discount)?;
        Ok(Self {
            hidden: kappa.states().clone(),
            actions: kappa.actions().clone(),
            sensors: kappa.outputs().clone(),
            kappa,
            factors: None,
            reward,
            discount,
            objective: Objective::Maximize,
        })
    }

    pub fn from_factored(nu: TabularKernel, phi: TabularKernel, reward: Vec<f64>, discount: f64) -> Result<Self> {
        let kappa = JointKernel::from_factored(&nu, &phi)?;
        let mut pomdp = Self::from_joint(kappa, reward, discount)?;
        pomdp.factors = Some(Factors { nu, phi });
        Ok(pomdp)
    }

    pub fn with_objective(mut self, objective: Objective) -> Self {
        self.objective = objective;
        self
    }

    pub fn with_discount(mut self, discount: f64) -> Result<Self> {
        check_discount(discount)?;
        self.discount = discount;
        Ok(self)
    }

    pub fn hidden(&self) -> &LabelSet {
        &self.hidden
    }

    pub fn actions(&self) -> &LabelSet {
        &self.actions
    }

    pub fn sensors(&self) -> &LabelSet {
        &self.sensors
    }

    pub fn kappa(&self) -> &JointKernel {
        &self.kappa
    }

    pub fn factors(&self) -> Option<&Factors> {
        self.factors.as_ref()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn reward(&self, h: usize, a: usize) -> f64 {
        self.reward[h * self.actions.len() + a]
    }

    pub fn reward_table(&self) -> &[f64] {
        &self.reward
    }

    /// Reward in the maximization sense (negated for cost models).
    pub fn utility(&self, h: usize, a: usize) -> f64 {
        self.objective.sign() * self.reward(h, a)
    }

    pub fn belief(&self, weights: Vec<f64>) -> Result<Belief> {
        FiniteDist::new(self.hidden.clone(), weights)
    }

    fn check_belief(&self, b: &Belief) -> Result<()> {
        b.set().check_same(&self.hidden, "belief")
    }

    /// The row `κ(·, · | h, a)` over `H × S`.
    pub fn joint_kernel(&self, h: &str, a: &str) -> Result<JointDist> {
        Ok(self.kappa.row(self.hidden.index_of(h)?, self.actions.index_of(a)?))
    }

    /// Joint over `(h', s)` given belief `b` and action index `a`.
    pub fn predictive(&self, b: &Belief, a: usize) -> Result<JointDist> {
        self.kappa.predictive(b, a)
    }

    pub fn belief_update_index(&self, b: &Belief, a: usize, s: usize) -> Result<Conditioned> {
        Ok(self.predictive(b, a)?.condition_on_second_index(s))
    }

    /// Bayes posterior `f(b, a, s)`, or `ZeroMarginal` when `P(s | b, a) = 0`.
    pub fn belief_update(&self, b: &Belief, a: &str, s: &str) -> Result<Conditioned> {
        self.check_belief(b)?;
        let a = self.actions.index_of(a)?;
        let s = self.sensors.index_of(s)?;
        self.belief_update_index(b, a, s)
    }

    pub fn belief_reward_index(&self, b: &Belief, a: usize) -> f64 {
        b.weights()
            .iter()
            .enumerate()
            .map(|(h, w)| w * self.reward(h, a))
            .sum()
    }

    /// Expected reward `Σ_h b(h) r(h, a)`.
    pub fn belief_reward(&self, b: &Belief, a: &str) -> Result<f64> {
        self.check_belief(b)?;
        Ok(self.belief_reward_index(b, self.actions.index_of(a)?))
    }

    pub fn belief_transition_index(&self, b: &Belief, a: usize) -> Result<Vec<(Belief, f64)>> {
        let joint = self.predictive(b, a)?;
        let mut out: Vec<(Belief, f64)> = Vec::new();
        for s in 0..self.sensors.len() {
            let Conditioned::Posterior { posterior, marginal } = joint.condition_on_second_index(s) else {
                continue;
            };
            match out
                .iter_mut()
                .find(|(b, _)| b.total_variation(&posterior).is_ok_and(|tv| tv <= BELIEF_MERGE_TOL))
            {
                Some((_, p)) => *p += marginal,
                None => out.push((posterior, marginal)),
            }
        }
        Ok(out)
    }

    /// Successor beliefs under action `a`, one per distinct posterior, with
    /// their probabilities.
    pub fn belief_transition(&self, b: &Belief, a: &str) -> Result<Vec<(Belief, f64)>> {
        self.check_belief(b)?;
        self.belief_transition_index(b, self.actions.index_of(a)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sondik;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn sondik_joint_kernel_entries() {
        let p = sondik::pomdp(0.95).unwrap();
        close(p.joint_kernel("1", "1").unwrap().prob("1", "1").unwrap(), 0.04, 1e-15);
        close(p.joint_kernel("2", "1").unwrap().prob("1", "2").unwrap(), 0.4, 1e-15);
        for h in 0..2 {
            for a in 0..2 {
                let row = p.kappa().row(h, a);
                let total: f64 = row.marginal_first().weights().iter().sum();
                close(total, 1.0, 1e-12);
            }
        }
    }

    #[test]
    fn sondik_belief_updates() {
        let p = sondik::pomdp(0.95).unwrap();
        let b = p.belief(vec![0.0, 1.0]).unwrap();
        let post = p.belief_update(&b, "1", "1").unwrap();
        let post = post.posterior().unwrap();
        close(post.weight(0), 0.25, 1e-12);
        close(post.weight(1), 0.75, 1e-12);
        let post = p.belief_update(&b, "1", "2").unwrap();
        let post = post.posterior().unwrap();
        close(post.weight(0), 2.0 / 3.0, 1e-12);
        close(post.weight(1), 1.0 / 3.0, 1e-12);
    }

    #[test]
    fn belief_update_label_errors() {
        let p = sondik::pomdp(0.95).unwrap();
        let b = p.belief(vec![0.5, 0.5]).unwrap();
        assert!(matches!(p.belief_update(&b, "3", "1"), Err(Error::Label(_))));
        assert!(matches!(p.belief_update(&b, "1", "x"), Err(Error::Label(_))));
        assert!(matches!(p.belief_reward(&b, "0"), Err(Error::Label(_))));
    }

    #[test]
    fn sondik_belief_rewards() {
        let p = sondik::pomdp(0.95).unwrap();
        close(p.belief_reward(&p.belief(vec![1.0, 0.0]).unwrap(), "1").unwrap(), 4.0, 0.0);
        close(p.belief_reward(&p.belief(vec![0.5, 0.5]).unwrap(), "2").unwrap(), -1.5, 1e-15);
    }

    #[test]
    fn sondik_belief_transition() {
        let p = sondik::pomdp(0.95).unwrap();
        let t = p.belief_transition(&p.belief(vec![0.0, 1.0]).unwrap(), "1").unwrap();
        assert_eq!(t.len(), 2);
        close(t[0].0.weight(0), 0.25, 1e-12);
        close(t[0].1, 0.4, 1e-12);
        close(t[1].0.weight(0), 2.0 / 3.0, 1e-12);
        close(t[1].1, 0.6, 1e-12);
    }

    fn two_state_model(phi_rows: [[f64; 2]; 2], nu_rows: [[f64; 2]; 2]) -> Pomdp {
        let h = LabelSet::numbered("H", 2).unwrap();
        let a = LabelSet::numbered("A", 1).unwrap();
        let s = LabelSet::numbered("S", 2).unwrap();
        let nu = TabularKernel::from_fn(vec![h.clone(), a.clone()], h.clone(), |t| {
            FiniteDist::new(h.clone(), nu_rows[t[0]].to_vec())
        })
        .unwrap();
        let phi = TabularKernel::from_fn(vec![h.clone(), a.clone()], s.clone(), |t| {
            FiniteDist::new(s.clone(), phi_rows[t[0]].to_vec())
        })
        .unwrap();
        Pomdp::from_factored(nu, phi, vec![0.0, 0.0], 0.9).unwrap()
    }

    #[test]
    fn deterministic_informative_update_is_forced_successor() {
        // ν swaps the states, φ reveals the successor.
        let p = two_state_model([[1.0, 0.0], [0.0, 1.0]], [[0.0, 1.0], [1.0, 0.0]]);
        let b = p.belief(vec![1.0, 0.0]).unwrap();
        let post = p.belief_update(&b, "1", "2").unwrap();
        assert_eq!(post.posterior().unwrap().weights(), &[0.0, 1.0]);
        assert!(p.belief_update(&b, "1", "1").unwrap().is_zero_marginal());
        let row = p.joint_kernel("1", "1").unwrap();
        assert_eq!(row.prob("2", "2").unwrap(), 1.0);
    }

    #[test]
    fn uninformative_observations_merge() {
        let p = two_state_model([[0.5, 0.5], [0.5, 0.5]], [[0.3, 0.7], [0.6, 0.4]]);
        let b = p.belief(vec![0.2, 0.8]).unwrap();
        let t = p.belief_transition(&b, "1").unwrap();
        assert_eq!(t.len(), 1);
        close(t[0].1, 1.0, 1e-12);
        let prior = p.factors().unwrap().nu.clone();
        let pushed = TabularKernel::from_fn(vec![p.hidden().clone()], p.hidden().clone(), |x| {
            Ok(prior.row(&[x[0], 0]).clone())
        })
        .unwrap()
        .pushforward(&b)
        .unwrap();
        assert!(t[0].0.total_variation(&pushed).unwrap() < 1e-12);
    }

    #[test]
    fn zero_rewards_give_zero_expectation() {
        let p = two_state_model([[0.5, 0.5], [0.5, 0.5]], [[0.3, 0.7], [0.6, 0.4]]);
        assert_eq!(p.belief_reward(&p.belief(vec![0.1, 0.9]).unwrap(), "1").unwrap(), 0.0);
    }

    #[test]
    fn discount_must_lie_in_open_unit_interval() {
        let p = sondik::pomdp(0.95).unwrap();
        assert!(p.clone().with_discount(1.0).is_err());
        assert!(p.clone().with_discount(0.0).is_err());
        assert!(p.with_discount(0.5).is_ok());
    }
}
