//! Adaptation of the action selector and inverse-dynamics encoder after a
//! change to the action set.
//!
//! The objective per transition `(s, a, s')` is
//!
//! `log phi_hat(a | e) - lambda * KL(phi(. | s, s') || N(0, I))`,
//! `e = mean(s, s') + std(s, s') * z`, `z ~ N(0, I)`,
//!
//! averaged over a minibatch and maximised with Adam. Gradients are exact
//! and flow through the reparameterised sample into the encoder.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::approx::Optimizer;
use crate::env::tabular::sample_categorical;
use crate::env::TabularLatentMdp;
use crate::error::{LabError, Result};
use crate::lmdp::{ActionRegistry, Environment, Episode, LatentKernel};
use crate::policy::{argmax, ActionSelector, InverseDynamics, PolicyBundle, SelectMode};

pub const KL_SMOOTHING: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub action: usize,
    pub s_prime: Vec<f64>,
}

/// FIFO store of observed transitions.
#[derive(Clone, Debug, Default)]
pub struct TransitionBuffer {
    records: VecDeque<Transition>,
    capacity: Option<usize>,
}

impl TransitionBuffer {
    pub fn unbounded() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Self {
        TransitionBuffer {
            records: VecDeque::new(),
            capacity: Some(capacity.max(1)),
        }
    }

    pub fn push(&mut self, t: Transition) {
        if let Some(cap) = self.capacity {
            if self.records.len() == cap {
                self.records.pop_front();
            }
        }
        self.records.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.records.iter()
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.records.get(i)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationConfig {
    pub lambda: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Random-policy trajectories collected for training after each change.
    pub trajectories: usize,
    /// Extra trajectories collected only to measure held-out accuracy.
    pub held_out_trajectories: usize,
    /// Upper bound on transitions used for the before/after objective.
    pub evaluation_cap: usize,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        AdaptationConfig {
            lambda: 1.0,
            iterations: 2000,
            batch_size: 64,
            lr: 1e-3,
            trajectories: 500,
            held_out_trajectories: 50,
            evaluation_cap: 4096,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(LabError::Config(format!("adaptation lambda must be >= 0, got {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(LabError::Config("adaptation batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(LabError::Config(format!("adaptation lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// `0.5 * sum(std^2 + mean^2 - 1 - 2 ln std)`.
pub fn gaussian_kl_to_standard(mean: &[f64], std: &[f64]) -> Result<f64> {
    if std.iter().any(|&s| !(s > 0.0)) {
        return Err(LabError::NonPositiveStd);
    }
    Ok(0.5
        * mean
            .iter()
            .zip(std)
            .map(|(m, s)| s * s + m * m - 1.0 - 2.0 * s.ln())
            .sum::<f64>())
}

/// One featurised training example: concatenated `(s, s')` features and the
/// action taken.
#[derive(Clone, Debug)]
pub struct PairExample {
    pub pair_features: Vec<f64>,
    pub action: usize,
}

#[derive(Clone, Debug)]
pub struct LowerBound {
    pub objective: f64,
    pub mean_kl: f64,
    pub selector_grad: Vec<f64>,
    pub encoder_grad: Vec<f64>,
}

/// Batch objective and its exact gradients for given reparameterisation noise
/// (one noise vector per example).
pub fn lower_bound_with_noise(
    selector: &ActionSelector,
    inverse: &InverseDynamics,
    batch: &[&PairExample],
    available: &[usize],
    lambda: f64,
    noise: &[Vec<f64>],
) -> Result<LowerBound> {
    if batch.is_empty() {
        return Err(LabError::Precondition("lower bound needs a non-empty batch".into()));
    }
    let n = batch.len() as f64;
    let d = inverse.latent_dim();
    let mut selector_grad = vec![0.0; selector.params().len()];
    let mut encoder_grad = vec![0.0; inverse.encoder().param_count()];
    let mut objective = 0.0;
    let mut kl_total = 0.0;
    for (ex, z) in batch.iter().zip(noise) {
        if ex.action >= selector.n_rows() {
            return Err(LabError::UnknownAction(ex.action));
        }
        let pass = inverse.forward_pair(&ex.pair_features)?;
        let std: Vec<f64> = pass.log_std.iter().map(|l| l.exp()).collect();
        let e: Vec<f64> = pass.mean.iter().zip(&std).zip(z).map(|((m, s), z)| m + s * z).collect();
        let (log_p, de) = selector.log_prob_and_grad(&e, ex.action, available, 1.0 / n, &mut selector_grad)?;
        let kl = gaussian_kl_to_standard(&pass.mean, &std)?;
        if kl < -1e-12 {
            return Err(LabError::Precondition(format!("negative KL {kl}")));
        }
        objective += log_p - lambda * kl;
        kl_total += kl;
        let mut upstream = vec![0.0; 2 * d];
        for i in 0..d {
            upstream[i] = (de[i] - lambda * pass.mean[i]) / n;
            upstream[d + i] = if pass.clamped[i] {
                0.0
            } else {
                (de[i] * z[i] * std[i] - lambda * (std[i] * std[i] - 1.0)) / n
            };
        }
        inverse.encoder().backward(&pass.tape, &upstream, &mut encoder_grad)?;
    }
    Ok(LowerBound {
        objective: objective / n,
        mean_kl: kl_total / n,
        selector_grad,
        encoder_grad,
    })
}

/// As [`lower_bound_with_noise`], drawing fresh noise from `rng`.
pub fn lower_bound_batch<R: Rng + ?Sized>(
    selector: &ActionSelector,
    inverse: &InverseDynamics,
    batch: &[&PairExample],
    available: &[usize],
    lambda: f64,
    rng: &mut R,
) -> Result<LowerBound> {
    let d = inverse.latent_dim();
    let noise: Vec<Vec<f64>> = batch
        .iter()
        .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    lower_bound_with_noise(selector, inverse, batch, available, lambda, &noise)
}

/// Fraction of examples whose action is the argmax of the selector at the
/// encoder mean.
pub fn prediction_accuracy(
    selector: &ActionSelector,
    inverse: &InverseDynamics,
    examples: &[PairExample],
    available: &[usize],
) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for ex in examples {
        let pass = inverse.forward_pair(&ex.pair_features)?;
        let p = selector.probabilities(&pass.mean, available)?;
        if available[argmax(&p)] == ex.action {
            hits += 1;
        }
    }
    Ok(hits as f64 / examples.len() as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptationReport {
    pub change_k: usize,
    pub buffer_size: usize,
    pub held_out_size: usize,
    pub iterations: usize,
    pub objective_pre: f64,
    pub objective_post: f64,
    pub accuracy_pre: f64,
    pub accuracy_post: f64,
    pub held_out_accuracy_pre: f64,
    pub held_out_accuracy_post: f64,
    /// Undiscounted returns of the random-policy trajectories, in order.
    #[serde(skip)]
    pub trajectory_returns: Vec<f64>,
}

/// Runs uniformly random available actions for `n` trajectories.
pub fn collect_random_transitions<E: Environment, R: Rng + ?Sized>(
    env: &E,
    registry: &ActionRegistry,
    n: usize,
    buffer: &mut TransitionBuffer,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let available = registry.available_ids();
    if available.is_empty() {
        return Err(LabError::NoAvailableActions);
    }
    let mut returns = Vec::with_capacity(n);
    for _ in 0..n {
        let mut ep = Episode::start(env, rng);
        while !ep.is_done() {
            let s = env.observe(ep.state());
            let a = available[rng.random_range(0..available.len())];
            ep.step(env, registry, a, rng)?;
            buffer.push(Transition {
                s,
                action: a,
                s_prime: env.observe(ep.state()),
            });
        }
        returns.push(ep.total_reward());
    }
    Ok(returns)
}

fn featurise(inverse: &InverseDynamics, buffer: &TransitionBuffer) -> Result<Vec<PairExample>> {
    buffer
        .iter()
        .map(|t| {
            Ok(PairExample {
                pair_features: inverse.pair_features(&t.s, &t.s_prime)?,
                action: t.action,
            })
        })
        .collect()
}

/// Collects random transitions for the current action set and trains the
/// selector and encoder on them. The decision policy and critic are not
/// touched.
pub fn run_adaptation<E: Environment, R: Rng + ?Sized>(
    bundle: &mut PolicyBundle,
    env: &E,
    registry: &ActionRegistry,
    config: &AdaptationConfig,
    rng: &mut R,
) -> Result<AdaptationReport> {
    config.validate()?;
    let available = registry.available_ids();
    let mut buffer = TransitionBuffer::unbounded();
    let trajectory_returns = collect_random_transitions(env, registry, config.trajectories, &mut buffer, rng)?;
    let mut held_buffer = TransitionBuffer::unbounded();
    collect_random_transitions(env, registry, config.held_out_trajectories, &mut held_buffer, rng)?;

    let train = featurise(&bundle.inverse, &buffer)?;
    let held = featurise(&bundle.inverse, &held_buffer)?;
    let eval: Vec<&PairExample> = train.iter().take(config.evaluation_cap).collect();
    let d = bundle.inverse.latent_dim();
    let eval_noise: Vec<Vec<f64>> = eval
        .iter()
        .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
        .collect();

    let evaluate = |b: &PolicyBundle| -> Result<(f64, f64, f64)> {
        if eval.is_empty() {
            return Ok((0.0, 0.0, 0.0));
        }
        let lb = lower_bound_with_noise(&b.selector, &b.inverse, &eval, &available, config.lambda, &eval_noise)?;
        let eval_owned: Vec<PairExample> = eval.iter().map(|e| (*e).clone()).collect();
        Ok((
            lb.objective,
            prediction_accuracy(&b.selector, &b.inverse, &eval_owned, &available)?,
            prediction_accuracy(&b.selector, &b.inverse, &held, &available)?,
        ))
    };

    let (objective_pre, accuracy_pre, held_out_accuracy_pre) = evaluate(bundle)?;
    let mut sel_opt = Optimizer::adam(config.lr);
    let mut enc_opt = Optimizer::adam(config.lr);
    if !train.is_empty() {
        for _ in 0..config.iterations {
            let batch: Vec<&PairExample> = (0..config.batch_size)
                .map(|_| &train[rng.random_range(0..train.len())])
                .collect();
            let lb = lower_bound_batch(&bundle.selector, &bundle.inverse, &batch, &available, config.lambda, rng)?;
            sel_opt.ascend(bundle.selector.params_mut(), &lb.selector_grad);
            enc_opt.ascend(bundle.inverse.encoder_mut().params_mut(), &lb.encoder_grad);
        }
    }
    if !bundle.inverse.encoder().all_finite() || bundle.selector.params().iter().any(|p| !p.is_finite()) {
        return Err(LabError::NonFinite("adaptation parameters"));
    }
    let (objective_post, accuracy_post, held_out_accuracy_post) = evaluate(bundle)?;

    Ok(AdaptationReport {
        change_k: registry.current_k(),
        buffer_size: buffer.len(),
        held_out_size: held_buffer.len(),
        iterations: config.iterations,
        objective_pre,
        objective_post,
        accuracy_pre,
        accuracy_post,
        held_out_accuracy_pre,
        held_out_accuracy_post,
        trajectory_returns,
    })
}

/// `KL(p || q)` with `q` smoothed by `KL_SMOOTHING` wherever it is zero and
/// `p` is not. Returns the divergence and whether smoothing was needed.
pub fn smoothed_kl(p: &[f64], q: &[f64]) -> (f64, bool) {
    let mut smoothed = false;
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi <= 0.0 {
            continue;
        }
        let q_eff = if qi <= 0.0 {
            smoothed = true;
            KL_SMOOTHING
        } else {
            qi
        };
        kl += pi * (pi / q_eff).ln();
    }
    (kl.max(0.0), smoothed)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KlSamples {
    pub kls: Vec<f64>,
    /// Samples in which zero-probability mismatches were smoothed.
    pub smoothed: usize,
}

impl KlSamples {
    pub fn mean(&self) -> f64 {
        if self.kls.is_empty() {
            0.0
        } else {
            self.kls.iter().sum::<f64>() / self.kls.len() as f64
        }
    }
}

/// Draws `n` state/action pairs (states uniform, actions uniform over the
/// available set), simulates `s'`, reconstructs an action through the
/// encoder and selector, and records the exact kernel divergence
/// `KL(P(.|s,a) || P(.|s,a_hat))` for each.
pub fn reconstruction_kls<R: Rng + ?Sized>(
    selector: &ActionSelector,
    inverse: &InverseDynamics,
    env: &TabularLatentMdp,
    registry: &ActionRegistry,
    n: usize,
    rng: &mut R,
) -> Result<KlSamples> {
    let available = registry.available_ids();
    if available.is_empty() {
        return Err(LabError::NoAvailableActions);
    }
    let mut out = KlSamples::default();
    for _ in 0..n {
        let s = rng.random_range(0..env.n_states());
        let a = available[rng.random_range(0..available.len())];
        let p = env.kernel_row(s, registry.latent(a)?);
        let s_prime = sample_categorical(&p, rng);
        let enc = inverse.encode_transition(&env.observe(&s), &env.observe(&s_prime), rng)?;
        let (a_hat, _) = selector.select(&enc.sample, &available, SelectMode::Sample, rng)?;
        let q = env.kernel_row(s, registry.latent(a_hat)?);
        let (kl, smoothed) = smoothed_kl(&p, &q);
        out.kls.push(kl);
        if smoothed {
            out.smoothed += 1;
        }
    }
    Ok(out)
}

/// Monte Carlo estimate of the average kernel divergence between taken and
/// reconstructed actions.
pub fn estimate_kl_objective<R: Rng + ?Sized>(
    selector: &ActionSelector,
    inverse: &InverseDynamics,
    env: &TabularLatentMdp,
    registry: &ActionRegistry,
    n: usize,
    rng: &mut R,
) -> Result<KlSamples> {
    reconstruction_kls(selector, inverse, env, registry, n, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::gradcheck::{finite_difference, max_relative_error};
    use crate::approx::Featurizer;
    use crate::policy::{Critic, DecisionPolicy, LogStd};
    use crate::rng;

    #[test]
    fn kl_closed_form_examples() {
        assert_eq!(gaussian_kl_to_standard(&[0.0; 3], &[1.0; 3]).unwrap(), 0.0);
        assert!((gaussian_kl_to_standard(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            gaussian_kl_to_standard(&[0.0], &[0.0]),
            Err(LabError::NonPositiveStd)
        ));
    }

    #[test]
    fn fifo_eviction() {
        let mut b = TransitionBuffer::with_capacity(2);
        for a in 0..3 {
            b.push(Transition {
                s: vec![],
                action: a,
                s_prime: vec![],
            });
        }
        assert_eq!(b.len(), 2);
        assert_eq!(b.get(0).unwrap().action, 1);
    }

    fn toy(r: &mut rng::LabRng, hidden: &[usize]) -> (ActionSelector, InverseDynamics, Vec<PairExample>) {
        let sel = ActionSelector::new(2, 4, 1.0, r);
        let inv = InverseDynamics::new(Featurizer::Identity { dim: 3 }, 2, hidden, r);
        let batch = (0..6)
            .map(|i| PairExample {
                pair_features: (0..6).map(|_| r.random_range(-1.0..1.0)).collect(),
                action: i % 4,
            })
            .collect();
        (sel, inv, batch)
    }

    #[test]
    fn uniform_selector_without_kl_gives_log_n() {
        let mut r = rng::stream(1, 0);
        let (_, inv, batch) = toy(&mut r, &[]);
        let sel = ActionSelector::from_parts(2, [0.3, -0.2].repeat(4), 1.0).unwrap();
        let refs: Vec<&PairExample> = batch.iter().collect();
        let lb = lower_bound_batch(&sel, &inv, &refs, &[0, 1, 2, 3], 0.0, &mut r).unwrap();
        assert!((lb.objective + 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn lower_bound_gradients_match_finite_differences() {
        let mut r = rng::stream(2, 0);
        for hidden in [vec![], vec![8]] {
            let (sel, inv, batch) = toy(&mut r, &hidden);
            let refs: Vec<&PairExample> = batch.iter().collect();
            let avail = [0, 1, 2, 3];
            let noise: Vec<Vec<f64>> = refs
                .iter()
                .map(|_| (0..2).map(|_| StandardNormal.sample(&mut r)).collect())
                .collect();
            for lambda in [0.0, 1.0, 0.3] {
                let lb = lower_bound_with_noise(&sel, &inv, &refs, &avail, lambda, &noise).unwrap();
                let mut s2 = sel.clone();
                let num_sel = finite_difference(
                    |w| {
                        s2.params_mut().copy_from_slice(w);
                        lower_bound_with_noise(&s2, &inv, &refs, &avail, lambda, &noise).unwrap().objective
                    },
                    sel.params(),
                    1e-5,
                );
                assert!(max_relative_error(&lb.selector_grad, &num_sel) <= 1e-4);
                let mut i2 = inv.clone();
                let num_enc = finite_difference(
                    |p| {
                        i2.encoder_mut().params_mut().copy_from_slice(p);
                        lower_bound_with_noise(&sel, &i2, &refs, &avail, lambda, &noise).unwrap().objective
                    },
                    inv.encoder().params(),
                    1e-5,
                );
                assert!(max_relative_error(&lb.encoder_grad, &num_enc) <= 1e-4);
            }
        }
    }

    #[test]
    fn unregistered_action_faults() {
        let mut r = rng::stream(3, 0);
        let (sel, inv, mut batch) = toy(&mut r, &[]);
        batch[0].action = 9;
        let refs: Vec<&PairExample> = batch.iter().collect();
        assert!(lower_bound_batch(&sel, &inv, &refs, &[0, 1, 2, 3], 1.0, &mut r).is_err());
    }

    #[test]
    fn heavy_kl_weight_pulls_encoder_to_prior() {
        let mut r = rng::stream(4, 0);
        let (mut sel, mut inv, batch) = toy(&mut r, &[]);
        let refs: Vec<&PairExample> = batch.iter().collect();
        let avail = [0, 1, 2, 3];
        let lambda = 1e6;
        let mut enc_opt = Optimizer::adam(1e-2);
        let mut sel_opt = Optimizer::adam(1e-2);
        for _ in 0..500 {
            let lb = lower_bound_batch(&sel, &inv, &refs, &avail, lambda, &mut r).unwrap();
            enc_opt.ascend(inv.encoder_mut().params_mut(), &lb.encoder_grad);
            sel_opt.ascend(sel.params_mut(), &lb.selector_grad);
        }
        let lb = lower_bound_batch(&sel, &inv, &refs, &avail, lambda, &mut r).unwrap();
        assert!(lb.mean_kl < 1e-2, "KL {}", lb.mean_kl);
    }

    #[test]
    fn smoothed_kl_cases() {
        assert_eq!(smoothed_kl(&[0.5, 0.5], &[0.5, 0.5]), (0.0, false));
        let (kl, s) = smoothed_kl(&[1.0, 0.0], &[0.0, 1.0]);
        assert!(s);
        assert!((kl - (1.0 / KL_SMOOTHING).ln()).abs() < 1e-9);
    }

    fn bundle_for(env: &TabularLatentMdp, n_actions: usize, r: &mut rng::LabRng) -> PolicyBundle {
        let feat = Featurizer::Identity { dim: env.n_states() };
        PolicyBundle {
            beta: DecisionPolicy::new(feat.clone(), 2, &[], LogStd::Fixed(0.0), r).unwrap(),
            selector: ActionSelector::new(2, n_actions, 1.0, r),
            inverse: InverseDynamics::new(feat.clone(), 2, &[64], r),
            critic: Critic::new(feat.dim(), &[], r),
        }
    }

    #[test]
    fn zero_iterations_leave_everything_unchanged() {
        let env = crate::env::generate_injective(1, 5).unwrap();
        let mut reg = ActionRegistry::new();
        reg.add_change(&env.extreme_latents(), env.space()).unwrap();
        let mut r = rng::stream(5, 0);
        let mut bundle = bundle_for(&env, reg.len(), &mut r);
        let before = bundle.clone();
        let cfg = AdaptationConfig {
            iterations: 0,
            trajectories: 5,
            held_out_trajectories: 1,
            ..AdaptationConfig::default()
        };
        let rep = run_adaptation(&mut bundle, &env, &reg, &cfg, &mut r).unwrap();
        assert_eq!(bundle, before);
        assert_eq!(rep.objective_pre, rep.objective_post);
        assert_eq!(rep.accuracy_pre, rep.accuracy_post);
    }

    #[test]
    fn adaptation_leaves_beta_and_critic_untouched() {
        let env = crate::env::generate_injective(2, 5).unwrap();
        let mut reg = ActionRegistry::new();
        reg.add_change(&env.extreme_latents(), env.space()).unwrap();
        let mut r = rng::stream(6, 0);
        let mut bundle = bundle_for(&env, reg.len(), &mut r);
        let beta = bundle.beta.clone();
        let critic = bundle.critic.clone();
        let cfg = AdaptationConfig {
            iterations: 50,
            trajectories: 10,
            held_out_trajectories: 2,
            ..AdaptationConfig::default()
        };
        run_adaptation(&mut bundle, &env, &reg, &cfg, &mut r).unwrap();
        assert_eq!(bundle.beta, beta);
        assert_eq!(bundle.critic, critic);
    }

    #[test]
    fn oracle_reconstruction_has_zero_divergence() {
        // two actions sharing one kernel: any confusion costs nothing
        let env = crate::env::generate_tabular(7, 4, 2, 1).unwrap();
        let mut reg = ActionRegistry::new();
        reg.add_change(&[vec![0.3], vec![0.3]], env.space()).unwrap();
        let mut r = rng::stream(7, 0);
        let bundle = bundle_for(&env, 2, &mut r);
        let est = estimate_kl_objective(&bundle.selector, &bundle.inverse, &env, &reg, 200, &mut r).unwrap();
        assert_eq!(est.mean(), 0.0);
        assert_eq!(est.smoothed, 0);
    }
}
