//! Synthetic n-gram recommender-style MDP.
//!
//! The state is the feature vectors of the last `n` consumed items. Acting
//! means recommending an item, whose feature vector is the hidden latent.
//! The next consumed item is drawn from a softmax whose logits are bilinear
//! in the item features:
//!
//! `logit_j = state^T A f_j + e^T B f_j`
//!
//! Both terms are smooth in the recommended latent `e`, so items with similar
//! features induce similar user responses.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::tabular::sample_categorical;
use crate::error::{LabError, Result};
use crate::lmdp::{
    BaseMdpSpec, Environment, InitialDistribution, LatentActionSpace, StateDescriptor,
};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NgramMdpSpec {
    pub n_items: usize,
    pub n_value: usize,
    pub feature_dim: usize,
    /// Per-item features in `[0,1]^feature_dim`; these are the action latents.
    pub item_features: Vec<Vec<f64>>,
    /// `(n_value * feature_dim) x feature_dim`.
    pub state_weights: Vec<Vec<f64>>,
    /// `feature_dim x feature_dim`.
    pub action_weights: Vec<Vec<f64>>,
    pub reward_per_item: Vec<f64>,
    pub horizon: usize,
    base: BaseMdpSpec,
}

pub fn generate_ngram(seed: u64, n_items: usize, n_value: usize, feature_dim: usize) -> Result<NgramMdpSpec> {
    if n_items < 10 {
        return Err(LabError::Config(format!("n-gram catalogue needs >= 10 items, got {n_items}")));
    }
    if n_value == 0 || feature_dim == 0 {
        return Err(LabError::Config("n_value and feature_dim must be positive".into()));
    }
    let mut r = rng::stream(seed, 0);
    let item_features: Vec<Vec<f64>> = (0..n_items)
        .map(|_| (0..feature_dim).map(|_| r.random::<f64>()).collect())
        .collect();
    let state_dim = n_value * feature_dim;
    let scale = 2.0 / (state_dim as f64).sqrt();
    let normal = |r: &mut rng::LabRng| -> f64 { StandardNormal.sample(r) };
    let state_weights = (0..state_dim)
        .map(|_| (0..feature_dim).map(|_| scale * normal(&mut r)).collect())
        .collect();
    let action_weights = (0..feature_dim)
        .map(|i| {
            (0..feature_dim)
                .map(|j| if i == j { 3.0 } else { 0.0 } + 0.5 * normal(&mut r))
                .collect()
        })
        .collect();
    let reward_per_item = (0..n_items).map(|_| r.random::<f64>()).collect();
    Ok(NgramMdpSpec {
        n_items,
        n_value,
        feature_dim,
        item_features,
        state_weights,
        action_weights,
        reward_per_item,
        horizon: 20,
        base: BaseMdpSpec {
            state: StateDescriptor::Continuous { dim: state_dim },
            gamma: 0.9,
            r_max: 1.0,
            initial: InitialDistribution::Uniform,
        },
    })
}

impl NgramMdpSpec {
    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon.max(1);
        self
    }

    pub fn action_latents(&self) -> Vec<Vec<f64>> {
        self.item_features.clone()
    }

    /// Unit cube with a Lipschitz bound for the softmax kernel: the logits
    /// move by at most `max_{i,j} |(B f_j)_i|` per unit of latent L1, and the
    /// softmax is 2-Lipschitz from logit sup-norm to probability L1.
    pub fn latent_space(&self) -> LatentActionSpace {
        let mut worst: f64 = 0.0;
        for f in &self.item_features {
            for row in &self.action_weights {
                let v: f64 = row.iter().zip(f).map(|(b, x)| b * x).sum();
                worst = worst.max(v.abs());
            }
        }
        LatentActionSpace::unit_cube(self.feature_dim, 2.0 * worst).expect("positive dimension")
    }

    pub fn state_features(&self, history: &[usize]) -> Vec<f64> {
        history
            .iter()
            .flat_map(|&i| self.item_features[i].iter().copied())
            .collect()
    }

    pub fn next_item_logits(&self, history: &[usize], latent: &[f64]) -> Vec<f64> {
        let s = self.state_features(history);
        // project state and latent into item-feature space once
        let mut query = vec![0.0; self.feature_dim];
        for (x, row) in s.iter().zip(&self.state_weights) {
            for (q, a) in query.iter_mut().zip(row) {
                *q += x * a;
            }
        }
        for (e, row) in latent.iter().zip(&self.action_weights) {
            for (q, b) in query.iter_mut().zip(row) {
                *q += e * b;
            }
        }
        self.item_features
            .iter()
            .map(|f| query.iter().zip(f).map(|(q, x)| q * x).sum())
            .collect()
    }

    pub fn next_item_distribution(&self, history: &[usize], latent: &[f64]) -> Vec<f64> {
        let logits = self.next_item_logits(history, latent);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|x| x / total).collect()
    }
}

impl Environment for NgramMdpSpec {
    /// Last `n_value` item indices, oldest first.
    type State = Vec<usize>;

    fn spec(&self) -> &BaseMdpSpec {
        &self.base
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        (0..self.n_value).map(|_| rng.random_range(0..self.n_items)).collect()
    }

    fn transition<R: Rng + ?Sized>(&self, state: &Vec<usize>, latent: &[f64], rng: &mut R) -> (Vec<usize>, f64, bool) {
        let probs = self.next_item_distribution(state, latent);
        let item = sample_categorical(&probs, rng);
        let mut next = state[1..].to_vec();
        next.push(item);
        (next, self.reward_per_item[item], false)
    }

    fn observe(&self, state: &Vec<usize>) -> Vec<f64> {
        self.state_features(state)
    }

    fn observation_dim(&self) -> usize {
        self.n_value * self.feature_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmdp::l1_distance;

    #[test]
    fn identical_features_give_identical_logits() {
        let mut spec = generate_ngram(3, 12, 2, 4).unwrap();
        spec.item_features[5] = spec.item_features[2].clone();
        let mut r = rng::stream(3, 1);
        for _ in 0..20 {
            let history = spec.initial_state(&mut r);
            let e = spec.item_features[7].clone();
            let logits = spec.next_item_logits(&history, &e);
            assert_eq!(logits[5], logits[2]);
            let a = spec.next_item_distribution(&history, &spec.item_features[5]);
            let b = spec.next_item_distribution(&history, &spec.item_features[2]);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn unigram_state_is_last_item_features() {
        let spec = generate_ngram(1, 10, 1, 3).unwrap();
        let mut r = rng::stream(1, 1);
        let s = spec.initial_state(&mut r);
        let (next, _, _) = spec.transition(&s, &spec.item_features[0], &mut r);
        assert_eq!(next.len(), 1);
        assert_eq!(spec.observe(&next), spec.item_features[next[0]]);
    }

    #[test]
    fn rows_are_distributions_and_generation_is_deterministic() {
        let a = generate_ngram(8, 15, 2, 3).unwrap();
        let b = generate_ngram(8, 15, 2, 3).unwrap();
        assert_eq!(a, b);
        let p = a.next_item_distribution(&[0, 1], &a.item_features[4]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(generate_ngram(8, 9, 2, 3).is_err());
    }

    #[test]
    fn monte_carlo_matches_distribution() {
        let spec = generate_ngram(20, 20, 1, 4).unwrap();
        let mut r = rng::stream(20, 2);
        for (state_item, action) in [(0usize, 3usize), (5, 5), (11, 19), (17, 0), (19, 8)] {
            let history = vec![state_item];
            let e = &spec.item_features[action];
            let mut counts = vec![0usize; 20];
            for _ in 0..100_000 {
                counts[spec.transition(&history, e, &mut r).0[0]] += 1;
            }
            let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / 1e5).collect();
            let l1 = l1_distance(&freq, &spec.next_item_distribution(&history, e));
            assert!(l1 < 0.02, "L1 {l1}");
        }
    }

    #[test]
    fn kernel_respects_lipschitz_bound() {
        let spec = generate_ngram(4, 12, 2, 3).unwrap();
        let space = spec.latent_space();
        let mut r = rng::stream(4, 4);
        for _ in 0..2000 {
            let h = spec.initial_state(&mut r);
            let (a, b) = (space.sample_uniform(&mut r), space.sample_uniform(&mut r));
            let lhs = l1_distance(&spec.next_item_distribution(&h, &a), &spec.next_item_distribution(&h, &b));
            assert!(lhs <= space.rho() * l1_distance(&a, &b) + 1e-12);
        }
    }
}
