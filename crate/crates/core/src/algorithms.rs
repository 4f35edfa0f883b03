//! Full lifelong runs: the structured learner (adapt the selector and
//! encoder after each change, then improve the latent decision policy with
//! actor-critic) and two comparison baselines over the raw discrete action
//! set, one that restarts from scratch at every change and one that stacks
//! new output rows onto its existing policy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adapt::{run_adaptation, AdaptationConfig, AdaptationReport};
use crate::approx::{Featurizer, ParamMap};
use crate::env::tabular::sample_categorical;
use crate::error::{LabError, Result};
use crate::lmdp::{ActionRegistry, ChangeSchedule, Environment, Episode, LatentActionSpace};
use crate::policy::{
    argmax, softmax, ActionSelector, Critic, DecisionPolicy, InverseDynamics, LogStd, PolicyBundle, SelectMode,
};
use crate::rng::{self, streams, LabRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    LaicaAc,
    Baseline1,
    Baseline2,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::LaicaAc, Algorithm::Baseline1, Algorithm::Baseline2];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::LaicaAc => "laica_ac",
            Algorithm::Baseline1 => "baseline1",
            Algorithm::Baseline2 => "baseline2",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Step sizes and discounting for one improvement episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Learning {
    pub gamma: f64,
    pub trace_decay: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub trace_decay: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Dimension of the inferred latent space.
    pub latent_dim: usize,
    pub beta_hidden: Vec<usize>,
    pub beta_log_std: LogStd,
    pub critic_hidden: Vec<usize>,
    pub encoder_hidden: Vec<usize>,
    pub selector_temperature: f64,
    /// Hidden widths of the baseline policies before the growing logit layer.
    pub baseline_hidden: Vec<usize>,
    pub adaptation: AdaptationConfig,
    /// Prepend the random adaptation trajectories to the learning curve.
    pub include_adaptation_in_curves: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            trace_decay: 0.9,
            actor_lr: 1e-3,
            critic_lr: 5e-3,
            latent_dim: 2,
            beta_hidden: vec![],
            beta_log_std: LogStd::Fixed(0.0),
            critic_hidden: vec![],
            encoder_hidden: vec![64],
            selector_temperature: 1.0,
            baseline_hidden: vec![64],
            adaptation: AdaptationConfig::default(),
            include_adaptation_in_curves: false,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(LabError::Config(format!("{name} must be positive, got {v}")))
            }
        };
        if !(0.0..=1.0).contains(&self.trace_decay) {
            return Err(LabError::Config(format!("trace_decay must be in [0,1], got {}", self.trace_decay)));
        }
        if self.actor_lr < 0.0 || self.critic_lr < 0.0 {
            return Err(LabError::Config("learning rates must be non-negative".into()));
        }
        positive("selector_temperature", self.selector_temperature)?;
        if self.latent_dim == 0 {
            return Err(LabError::Config("latent_dim must be positive".into()));
        }
        if let LogStd::Learned(v) = &self.beta_log_std {
            if v.len() != self.latent_dim {
                return Err(LabError::Config(format!(
                    "beta_log_std has {} entries, latent_dim is {}",
                    v.len(),
                    self.latent_dim
                )));
            }
        }
        self.adaptation.validate()
    }

    pub fn learning(&self, gamma: f64) -> Learning {
        Learning {
            gamma,
            trace_decay: self.trace_decay,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub episodes_per_segment: usize,
    pub schedule: ChangeSchedule,
    /// Latent space the scheduled latents live in.
    pub space: LatentActionSpace,
    pub featurizer: Featurizer,
    pub learner: LearnerConfig,
}

impl RunConfig {
    /// Changes must sit at `0, E, 2E, ...` for `E = episodes_per_segment`.
    pub fn validate(&self) -> Result<()> {
        if self.episodes_per_segment == 0 {
            return Err(LabError::Config("episodes_per_segment must be positive".into()));
        }
        for (i, &ep) in self.schedule.change_episodes().iter().enumerate() {
            if ep != i * self.episodes_per_segment {
                return Err(LabError::InvalidSchedule(format!(
                    "change {i} at episode {ep}, expected {}",
                    i * self.episodes_per_segment
                )));
            }
        }
        self.learner.validate()
    }

    pub fn total_episodes(&self) -> usize {
        self.schedule.n_changes() * self.episodes_per_segment
    }
}

/// Softmax policy over the registered actions with a growing final layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectPolicy {
    featurizer: Featurizer,
    logit_map: ParamMap,
}

impl DirectPolicy {
    pub fn new<R: Rng + ?Sized>(featurizer: Featurizer, hidden: &[usize], n_actions: usize, rng: &mut R) -> Self {
        let logit_map = ParamMap::new(featurizer.dim(), hidden, n_actions, rng);
        DirectPolicy { featurizer, logit_map }
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    pub fn logit_map(&self) -> &ParamMap {
        &self.logit_map
    }

    pub fn logit_rows(&self) -> usize {
        self.logit_map.output_dim()
    }

    /// Weights and bias of the final-layer row for `action`.
    pub fn logit_row(&self, action: usize) -> &[f64] {
        let last = self.logit_map.layers().last().expect("non-empty");
        let stride = last.input + 1;
        let start = self.logit_map.param_count() - last.output * stride + action * stride;
        &self.logit_map.params()[start..start + stride]
    }

    pub fn stack_rows<R: Rng + ?Sized>(&mut self, n_new: usize, rng: &mut R) -> Result<()> {
        if n_new == 0 {
            return Err(LabError::Precondition("stack_rows needs at least one new row".into()));
        }
        self.logit_map.stack_output_rows(n_new, rng);
        Ok(())
    }

    /// Probabilities over `available`, aligned with it.
    pub fn probabilities(&self, features: &[f64], available: &[usize]) -> Result<Vec<f64>> {
        if available.is_empty() {
            return Err(LabError::NoAvailableActions);
        }
        let logits = self.logit_map.forward(features)?;
        masked_softmax(&logits, available)
    }
}

fn masked_softmax(logits: &[f64], available: &[usize]) -> Result<Vec<f64>> {
    let scores = available
        .iter()
        .map(|&a| logits.get(a).copied().ok_or(LabError::UnknownAction(a)))
        .collect::<Result<Vec<f64>>>()?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(LabError::NonFinite("policy logits"));
    }
    Ok(softmax(&scores))
}

fn decay_and_add(trace: &mut [f64], decay: f64, grad: &[f64]) {
    for (t, g) in trace.iter_mut().zip(grad) {
        *t = decay * *t + g;
    }
}

fn bootstrap_terminal(terminal: bool, truncated: bool) -> bool {
    terminal && !truncated
}

/// One improvement episode of the structured learner: sample a latent from
/// the decision policy, map it to an action through the frozen selector,
/// and update critic and decision policy with eligibility traces. Returns
/// the undiscounted return.
pub fn improve_episode_laica<E: Environment, R: Rng + ?Sized>(
    bundle: &mut PolicyBundle,
    env: &E,
    registry: &ActionRegistry,
    learning: &Learning,
    env_rng: &mut R,
    act_rng: &mut R,
) -> Result<f64> {
    let available = registry.available_ids();
    let mut ep = Episode::start(env, env_rng);
    let mut features = bundle.beta.features(&env.observe(ep.state()))?;
    let mut trace = vec![0.0; bundle.beta.param_count()];
    bundle.critic.reset_trace();
    let decay = learning.gamma * learning.trace_decay;
    while !ep.is_done() {
        let sample = bundle.beta.sample_from_features(&features, act_rng)?;
        let (action, _) = bundle.selector.select(&sample.e_hat, &available, SelectMode::Sample, act_rng)?;
        let out = ep.step(env, registry, action, env_rng)?;
        let next_features = bundle.beta.features(&env.observe(&out.next_state))?;
        let delta = bundle.critic.update(
            &features,
            out.reward,
            &next_features,
            bootstrap_terminal(out.terminal, out.truncated),
            learning.gamma,
            learning.trace_decay,
            learning.critic_lr,
        )?;
        let score = bundle.beta.score(&features, &sample.e_hat)?;
        decay_and_add(&mut trace, decay, &score);
        let step = learning.actor_lr * delta;
        if step != 0.0 {
            bundle.beta.add_scaled(&trace, step);
        }
        if !bundle.beta.all_finite() {
            return Err(LabError::NonFinite("decision policy parameters"));
        }
        features = next_features;
    }
    Ok(ep.total_reward())
}

/// One actor-critic episode over the discrete available-action softmax.
pub fn improve_episode_direct<E: Environment, R: Rng + ?Sized>(
    policy: &mut DirectPolicy,
    critic: &mut Critic,
    env: &E,
    registry: &ActionRegistry,
    learning: &Learning,
    env_rng: &mut R,
    act_rng: &mut R,
) -> Result<f64> {
    let available = registry.available_ids();
    let mut ep = Episode::start(env, env_rng);
    let mut features = policy.featurizer.features(&env.observe(ep.state()))?;
    let mut trace = vec![0.0; policy.logit_map.param_count()];
    let mut grad = vec![0.0; trace.len()];
    critic.reset_trace();
    let decay = learning.gamma * learning.trace_decay;
    while !ep.is_done() {
        let tape = policy.logit_map.forward_tape(&features)?;
        let probs = masked_softmax(tape.output(), &available)?;
        let idx = sample_categorical(&probs, act_rng);
        let action = available[idx];
        let out = ep.step(env, registry, action, env_rng)?;
        let next_features = policy.featurizer.features(&env.observe(&out.next_state))?;
        let delta = critic.update(
            &features,
            out.reward,
            &next_features,
            bootstrap_terminal(out.terminal, out.truncated),
            learning.gamma,
            learning.trace_decay,
            learning.critic_lr,
        )?;
        // d log pi(a) / d logits: one-hot minus probabilities on the
        // available set, zero elsewhere
        let mut upstream = vec![0.0; policy.logit_rows()];
        for (&b, &p) in available.iter().zip(&probs) {
            upstream[b] = -p;
        }
        upstream[action] += 1.0;
        grad.iter_mut().for_each(|g| *g = 0.0);
        policy.logit_map.backward(&tape, &upstream, &mut grad)?;
        decay_and_add(&mut trace, decay, &grad);
        let step = learning.actor_lr * delta;
        if step != 0.0 {
            policy.logit_map.add_scaled(&trace, step);
        }
        if !policy.logit_map.all_finite() {
            return Err(LabError::NonFinite("direct policy parameters"));
        }
        features = next_features;
    }
    Ok(ep.total_reward())
}

/// Per-change structural snapshot recorded in a trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    Change {
        k: usize,
        episode: usize,
        n_actions: usize,
        added: usize,
        /// Decision-policy parameters (structured learner only).
        beta_param_count: Option<usize>,
        /// Action-selector rows (structured learner only).
        selector_rows: Option<usize>,
        /// Final-layer rows of the baseline policy.
        logit_rows: Option<usize>,
    },
    Adaptation(AdaptationReport),
    Final {
        beta_param_count: Option<usize>,
        selector_rows: Option<usize>,
        logit_rows: Option<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub returns: Vec<f64>,
    pub change_episodes: Vec<usize>,
    pub diagnostics: Vec<Diagnostic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<String>,
}

impl TrialRecord {
    pub fn is_faulted(&self) -> bool {
        self.fault.is_some()
    }
}

struct Streams {
    env: LabRng,
    act: LabRng,
    init: LabRng,
    stack: LabRng,
    adapt: LabRng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Streams {
            env: rng::stream(seed, streams::ENV),
            act: rng::stream(seed, streams::ACTING),
            init: rng::stream(seed, streams::INIT),
            stack: rng::stream(seed, streams::STACK),
            adapt: rng::stream(seed, streams::ADAPT),
        }
    }
}

enum Learner {
    Laica(Box<PolicyBundle>),
    Direct(DirectPolicy, Critic),
}

/// Runs one lifelong trial. Faults stop the trial and are recorded in the
/// returned record together with everything produced before them.
pub fn run_lifelong<E: Environment>(env: &E, config: &RunConfig, seed: u64) -> TrialRecord {
    let mut record = TrialRecord {
        algorithm: config.algorithm,
        seed,
        returns: Vec::with_capacity(config.total_episodes()),
        change_episodes: Vec::new(),
        diagnostics: Vec::new(),
        fault: None,
    };
    if let Err(e) = run_inner(env, config, seed, &mut record) {
        record.fault = Some(e.to_string());
    }
    record
}

fn run_inner<E: Environment>(env: &E, config: &RunConfig, seed: u64, record: &mut TrialRecord) -> Result<()> {
    config.validate()?;
    let lc = &config.learner;
    let learning = lc.learning(env.spec().gamma);
    let mut s = Streams::new(seed);
    let mut registry = ActionRegistry::new();
    let mut learner: Option<Learner> = None;
    let mut beta_count: Option<usize> = None;

    for (k0, additions) in config.schedule.additions().iter().enumerate() {
        let k = k0 + 1;
        let range = registry.add_change(additions, &config.space)?;
        let added = range.len();
        let n_actions = registry.len();

        learner = Some(match (config.algorithm, learner.take()) {
            (Algorithm::LaicaAc, None) => Learner::Laica(Box::new(PolicyBundle {
                beta: DecisionPolicy::new(
                    config.featurizer.clone(),
                    lc.latent_dim,
                    &lc.beta_hidden,
                    lc.beta_log_std.clone(),
                    &mut s.init,
                )?,
                selector: ActionSelector::new(lc.latent_dim, n_actions, lc.selector_temperature, &mut s.init),
                inverse: InverseDynamics::new(config.featurizer.clone(), lc.latent_dim, &lc.encoder_hidden, &mut s.init),
                critic: Critic::new(config.featurizer.dim(), &lc.critic_hidden, &mut s.init),
            })),
            (Algorithm::LaicaAc, Some(Learner::Laica(mut b))) => {
                b.selector.stack_rows(added, &mut s.stack)?;
                Learner::Laica(b)
            }
            (Algorithm::Baseline1, _) => {
                // fresh parameters from a change-local stream
                let mut r = rng::stream(seed, streams::REINIT_BASE + k as u64);
                Learner::Direct(
                    DirectPolicy::new(config.featurizer.clone(), &lc.baseline_hidden, n_actions, &mut r),
                    Critic::new(config.featurizer.dim(), &lc.critic_hidden, &mut r),
                )
            }
            (Algorithm::Baseline2, None) => Learner::Direct(
                DirectPolicy::new(config.featurizer.clone(), &lc.baseline_hidden, n_actions, &mut s.init),
                Critic::new(config.featurizer.dim(), &lc.critic_hidden, &mut s.init),
            ),
            (Algorithm::Baseline2, Some(Learner::Direct(mut p, c))) => {
                p.stack_rows(added, &mut s.stack)?;
                Learner::Direct(p, c)
            }
            _ => unreachable!("learner kind is fixed by the algorithm"),
        });

        record.change_episodes.push(record.returns.len());
        let change = match learner.as_ref().expect("set above") {
            Learner::Laica(b) => Diagnostic::Change {
                k,
                episode: k0 * config.episodes_per_segment,
                n_actions,
                added,
                beta_param_count: Some(b.beta.param_count()),
                selector_rows: Some(b.selector.n_rows()),
                logit_rows: None,
            },
            Learner::Direct(p, _) => Diagnostic::Change {
                k,
                episode: k0 * config.episodes_per_segment,
                n_actions,
                added,
                beta_param_count: None,
                selector_rows: None,
                logit_rows: Some(p.logit_rows()),
            },
        };
        record.diagnostics.push(change);

        match learner.as_mut().expect("set above") {
            Learner::Laica(bundle) => {
                let report = run_adaptation(bundle, env, &registry, &lc.adaptation, &mut s.adapt)?;
                if lc.include_adaptation_in_curves {
                    record.returns.extend_from_slice(&report.trajectory_returns);
                }
                record.diagnostics.push(Diagnostic::Adaptation(report));
                let count = bundle.beta.param_count();
                if *beta_count.get_or_insert(count) != count {
                    return Err(LabError::Precondition("decision policy size changed".into()));
                }
                for _ in 0..config.episodes_per_segment {
                    let ret = improve_episode_laica(bundle, env, &registry, &learning, &mut s.env, &mut s.act)?;
                    record.returns.push(ret);
                }
            }
            Learner::Direct(policy, critic) => {
                for _ in 0..config.episodes_per_segment {
                    let ret = improve_episode_direct(policy, critic, env, &registry, &learning, &mut s.env, &mut s.act)?;
                    record.returns.push(ret);
                }
            }
        }
    }

    if let Some(l) = &learner {
        record.diagnostics.push(match l {
            Learner::Laica(b) => Diagnostic::Final {
                beta_param_count: Some(b.beta.param_count()),
                selector_rows: Some(b.selector.n_rows()),
                logit_rows: None,
            },
            Learner::Direct(p, _) => Diagnostic::Final {
                beta_param_count: None,
                selector_rows: None,
                logit_rows: Some(p.logit_rows()),
            },
        });
    }
    Ok(())
}

/// Greedy action of the structured learner at an observation: selector
/// argmax at the decision-policy mean.
pub fn greedy_laica_action(bundle: &PolicyBundle, obs: &[f64], available: &[usize]) -> Result<usize> {
    let f = bundle.beta.features(obs)?;
    let mean = bundle.beta.mean(&f)?;
    let p = bundle.selector.probabilities(&mean, available)?;
    Ok(available[argmax(&p)])
}

/// Greedy action of a direct policy at an observation.
pub fn greedy_direct_action(policy: &DirectPolicy, obs: &[f64], available: &[usize]) -> Result<usize> {
    let f = policy.featurizer.features(obs)?;
    let p = policy.probabilities(&f, available)?;
    Ok(available[argmax(&p)])
}
