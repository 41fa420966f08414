//! Random model generators shared by the integration tests.
#![allow(dead_code)]

use moorebelief::pomdp::{Belief, Pomdp};
use moorebelief::prob::{FiniteDist, LabelSet, TabularKernel};
use rand::Rng;

/// Random weights on `n` outcomes with some exact zeros, normalized.
pub fn random_weights<R: Rng>(rng: &mut R, n: usize, zero_prob: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|_| if rng.gen_bool(zero_prob) { 0.0 } else { rng.gen_range(0.05..1.0) })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[rng.gen_range(0..n)] = 1.0;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

pub fn random_kernel<R: Rng>(rng: &mut R, domain: Vec<LabelSet>, codomain: &LabelSet, zero_prob: f64) -> TabularKernel {
    TabularKernel::from_fn(domain, codomain.clone(), |_| {
        FiniteDist::new(codomain.clone(), random_weights(rng, codomain.len(), zero_prob))
    })
    .expect("random rows are normalized")
}

pub fn random_pomdp<R: Rng>(rng: &mut R, nh: usize, na: usize, ns: usize, discount: f64) -> Pomdp {
    let h = LabelSet::numbered("H", nh).unwrap();
    let a = LabelSet::numbered("A", na).unwrap();
    let s = LabelSet::numbered("S", ns).unwrap();
    let nu = random_kernel(rng, vec![h.clone(), a.clone()], &h, 0.2);
    let phi = random_kernel(rng, vec![h.clone(), a.clone()], &s, 0.2);
    let reward = (0..nh * na).map(|_| rng.gen_range(-5.0..5.0)).collect();
    Pomdp::from_factored(nu, phi, reward, discount).unwrap()
}

/// A POMDP whose observation reveals the next hidden state.
pub fn fully_observed_pomdp<R: Rng>(rng: &mut R, nh: usize, na: usize, discount: f64) -> Pomdp {
    let h = LabelSet::numbered("H", nh).unwrap();
    let a = LabelSet::numbered("A", na).unwrap();
    let nu = random_kernel(rng, vec![h.clone(), a.clone()], &h, 0.2);
    let phi = TabularKernel::from_fn(vec![h.clone(), a.clone()], h.clone(), |t| {
        let mut w = vec![0.0; nh];
        w[t[0]] = 1.0;
        FiniteDist::new(h.clone(), w)
    })
    .unwrap();
    let reward = (0..nh * na).map(|_| rng.gen_range(-5.0..5.0)).collect();
    Pomdp::from_factored(nu, phi, reward, discount).unwrap()
}

pub fn random_belief<R: Rng>(rng: &mut R, p: &Pomdp) -> Belief {
    let n = p.hidden().len();
    let zero = if rng.gen_bool(0.2) { 0.3 } else { 0.0 };
    p.belief(random_weights(rng, n, zero)).unwrap()
}

pub fn vertex(p: &Pomdp, h: usize) -> Belief {
    let mut w = vec![0.0; p.hidden().len()];
    w[h] = 1.0;
    p.belief(w).unwrap()
}
