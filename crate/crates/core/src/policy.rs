//! The factored policy: a Gaussian decision policy over an inferred latent
//! action space, a linear Boltzmann action selector that grows one row per
//! new action, an inverse-dynamics encoder, and a state-value critic.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::approx::map::{read_params, write_params};
use crate::approx::{Featurizer, ParamMap};
use crate::error::{LabError, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Log-density of a diagonal Gaussian.
pub fn gaussian_log_density(x: &[f64], mean: &[f64], std: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(std)
        .map(|((x, m), s)| {
            let z = (x - m) / s;
            -0.5 * z * z - s.ln() - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

fn standard_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum LogStd {
    /// Shared constant log standard deviation, not trained.
    Fixed(f64),
    /// One trainable log standard deviation per latent dimension.
    Learned(Vec<f64>),
}

#[derive(Clone, Debug)]
pub struct LatentSample {
    pub e_hat: Vec<f64>,
    pub log_prob: f64,
    pub mean: Vec<f64>,
}

/// Gaussian decision policy over the inferred latent space. Its size does
/// not depend on how many discrete actions exist.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionPolicy {
    featurizer: Featurizer,
    mean_map: ParamMap,
    log_std: LogStd,
}

impl DecisionPolicy {
    pub fn new<R: Rng + ?Sized>(
        featurizer: Featurizer,
        latent_dim: usize,
        hidden: &[usize],
        log_std: LogStd,
        rng: &mut R,
    ) -> Result<Self> {
        if let LogStd::Learned(v) = &log_std {
            if v.len() != latent_dim {
                return Err(LabError::ShapeMismatch {
                    context: "learned log std",
                    expected: latent_dim,
                    got: v.len(),
                });
            }
        }
        let mean_map = ParamMap::new(featurizer.dim(), hidden, latent_dim, rng);
        Ok(DecisionPolicy {
            featurizer,
            mean_map,
            log_std,
        })
    }

    pub fn from_parts(featurizer: Featurizer, mean_map: ParamMap, log_std: LogStd) -> Self {
        DecisionPolicy {
            featurizer,
            mean_map,
            log_std,
        }
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    pub fn latent_dim(&self) -> usize {
        self.mean_map.output_dim()
    }

    pub fn mean_map(&self) -> &ParamMap {
        &self.mean_map
    }

    pub fn log_std(&self) -> &LogStd {
        &self.log_std
    }

    /// Mean-map parameters followed by any learned log standard deviations.
    pub fn param_count(&self) -> usize {
        self.mean_map.param_count() + self.learned_len()
    }

    fn learned_len(&self) -> usize {
        match &self.log_std {
            LogStd::Fixed(_) => 0,
            LogStd::Learned(v) => v.len(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.mean_map.params().to_vec();
        if let LogStd::Learned(v) = &self.log_std {
            p.extend_from_slice(v);
        }
        p
    }

    /// `params += scale * direction`, keeping learned log std in the clamp range.
    pub fn add_scaled(&mut self, direction: &[f64], scale: f64) {
        let n = self.mean_map.param_count();
        self.mean_map.add_scaled(&direction[..n], scale);
        if let LogStd::Learned(v) = &mut self.log_std {
            for (l, d) in v.iter_mut().zip(&direction[n..]) {
                *l = (*l + scale * d).clamp(LOG_STD_MIN, LOG_STD_MAX);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }

    pub fn std(&self) -> Vec<f64> {
        match &self.log_std {
            LogStd::Fixed(l) => vec![l.exp(); self.latent_dim()],
            LogStd::Learned(v) => v.iter().map(|l| l.exp()).collect(),
        }
    }

    pub fn features(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.featurizer.features(obs)
    }

    pub fn mean(&self, features: &[f64]) -> Result<Vec<f64>> {
        let m = self.mean_map.forward(features)?;
        if m.iter().any(|x| !x.is_finite()) {
            return Err(LabError::NonFinite("decision policy mean"));
        }
        Ok(m)
    }

    pub fn sample_from_features<R: Rng + ?Sized>(&self, features: &[f64], rng: &mut R) -> Result<LatentSample> {
        let mean = self.mean(features)?;
        let std = self.std();
        let z = standard_normal_vec(mean.len(), rng);
        let e_hat: Vec<f64> = mean.iter().zip(&std).zip(&z).map(|((m, s), z)| m + s * z).collect();
        let log_prob = gaussian_log_density(&e_hat, &mean, &std);
        Ok(LatentSample { e_hat, log_prob, mean })
    }

    pub fn sample_latent<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<LatentSample> {
        let f = self.features(obs)?;
        self.sample_from_features(&f, rng)
    }

    pub fn log_prob(&self, features: &[f64], e_hat: &[f64]) -> Result<f64> {
        Ok(gaussian_log_density(e_hat, &self.mean(features)?, &self.std()))
    }

    /// Gradient of `log N(e_hat; mean(features), std^2)` with respect to
    /// [`DecisionPolicy::params`].
    pub fn score(&self, features: &[f64], e_hat: &[f64]) -> Result<Vec<f64>> {
        let tape = self.mean_map.forward_tape(features)?;
        let mean = tape.output();
        let std = self.std();
        let dmean: Vec<f64> = e_hat
            .iter()
            .zip(mean)
            .zip(&std)
            .map(|((e, m), s)| (e - m) / (s * s))
            .collect();
        let mut grad = vec![0.0; self.param_count()];
        let n = self.mean_map.param_count();
        self.mean_map.backward(&tape, &dmean, &mut grad[..n])?;
        if let LogStd::Learned(_) = &self.log_std {
            for (i, ((e, m), s)) in e_hat.iter().zip(mean).zip(&std).enumerate() {
                let z = (e - m) / s;
                grad[n + i] = z * z - 1.0;
            }
        }
        Ok(grad)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMode {
    Sample,
    Greedy,
}

/// Linear Boltzmann selector: one weight row per registered action, scores
/// `row . e_hat / temperature` restricted to the available actions.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSelector {
    latent_dim: usize,
    weights: Vec<f64>,
    temperature: f64,
}

impl ActionSelector {
    pub fn new<R: Rng + ?Sized>(latent_dim: usize, n_rows: usize, temperature: f64, rng: &mut R) -> Self {
        let mut s = ActionSelector {
            latent_dim,
            weights: Vec::new(),
            temperature,
        };
        s.push_rows(n_rows, rng);
        s
    }

    pub fn from_parts(latent_dim: usize, weights: Vec<f64>, temperature: f64) -> Result<Self> {
        if latent_dim == 0 || weights.len() % latent_dim != 0 {
            return Err(LabError::ShapeMismatch {
                context: "selector weights",
                expected: latent_dim,
                got: weights.len(),
            });
        }
        Ok(ActionSelector {
            latent_dim,
            weights,
            temperature,
        })
    }

    fn push_rows<R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) {
        let bound = 1.0 / (self.latent_dim as f64).sqrt();
        self.weights
            .extend((0..n * self.latent_dim).map(|_| rng.random_range(-bound..=bound)));
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn n_rows(&self) -> usize {
        self.weights.len() / self.latent_dim
    }

    pub fn row(&self, action: usize) -> &[f64] {
        &self.weights[action * self.latent_dim..(action + 1) * self.latent_dim]
    }

    pub fn params(&self) -> &[f64] {
        &self.weights
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Appends `n_new` freshly initialised rows; existing rows are untouched.
    pub fn stack_rows<R: Rng + ?Sized>(&mut self, n_new: usize, rng: &mut R) -> Result<()> {
        if n_new == 0 {
            return Err(LabError::Precondition("stack_rows needs at least one new row".into()));
        }
        self.push_rows(n_new, rng);
        Ok(())
    }

    fn check_ids(&self, available: &[usize]) -> Result<()> {
        if available.is_empty() {
            return Err(LabError::NoAvailableActions);
        }
        if let Some(&bad) = available.iter().find(|&&a| a >= self.n_rows()) {
            return Err(LabError::UnknownAction(bad));
        }
        Ok(())
    }

    /// Pre-softmax scores for the given actions, in the given order.
    pub fn scores(&self, e_hat: &[f64], ids: &[usize]) -> Vec<f64> {
        ids.iter()
            .map(|&a| {
                self.row(a).iter().zip(e_hat).map(|(w, e)| w * e).sum::<f64>() / self.temperature
            })
            .collect()
    }

    /// Boltzmann probabilities over `available`, aligned with it.
    pub fn probabilities(&self, e_hat: &[f64], available: &[usize]) -> Result<Vec<f64>> {
        self.check_ids(available)?;
        if e_hat.len() != self.latent_dim {
            return Err(LabError::ShapeMismatch {
                context: "selector latent",
                expected: self.latent_dim,
                got: e_hat.len(),
            });
        }
        Ok(softmax(&self.scores(e_hat, available)))
    }

    /// Picks an action id and returns it with the probabilities over `available`.
    pub fn select<R: Rng + ?Sized>(
        &self,
        e_hat: &[f64],
        available: &[usize],
        mode: SelectMode,
        rng: &mut R,
    ) -> Result<(usize, Vec<f64>)> {
        let probs = self.probabilities(e_hat, available)?;
        let idx = match mode {
            SelectMode::Sample => crate::env::tabular::sample_categorical(&probs, rng),
            SelectMode::Greedy => argmax(&probs),
        };
        Ok((available[idx], probs))
    }

    /// `log p(action | e_hat)` with its gradients with respect to `e_hat` and
    /// to the flat weights (added into `weight_grad` after scaling by `scale`).
    pub fn log_prob_and_grad(
        &self,
        e_hat: &[f64],
        action: usize,
        available: &[usize],
        scale: f64,
        weight_grad: &mut [f64],
    ) -> Result<(f64, Vec<f64>)> {
        let probs = self.probabilities(e_hat, available)?;
        let pos = available
            .iter()
            .position(|&a| a == action)
            .ok_or(LabError::ActionUnavailable(action))?;
        let log_p = probs[pos].max(f64::MIN_POSITIVE).ln();
        let d = self.latent_dim;
        let mut de = self.row(action).to_vec();
        for (&b, &p) in available.iter().zip(&probs) {
            let row = self.row(b);
            for i in 0..d {
                de[i] -= p * row[i];
            }
            let coef = (if b == action { 1.0 } else { 0.0 } - p) / self.temperature * scale;
            if coef != 0.0 {
                for i in 0..d {
                    weight_grad[b * d + i] += coef * e_hat[i];
                }
            }
        }
        for v in de.iter_mut() {
            *v /= self.temperature;
        }
        Ok((log_p, de))
    }
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|x| x / total).collect()
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct Encoding {
    pub sample: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub z: Vec<f64>,
}

/// Inverse-dynamics encoder: Gaussian over the latent space given the
/// features of a state and its successor.
#[derive(Clone, Debug, PartialEq)]
pub struct InverseDynamics {
    featurizer: Featurizer,
    encoder: ParamMap,
    latent_dim: usize,
}

/// Forward pass of the encoder kept for back-propagation.
pub struct EncoderPass {
    pub tape: crate::approx::Tape,
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    /// True where the raw log std was clamped (zero gradient there).
    pub clamped: Vec<bool>,
}

impl InverseDynamics {
    pub fn new<R: Rng + ?Sized>(featurizer: Featurizer, latent_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let encoder = ParamMap::new(2 * featurizer.dim(), hidden, 2 * latent_dim, rng);
        InverseDynamics {
            featurizer,
            encoder,
            latent_dim,
        }
    }

    pub fn from_parts(featurizer: Featurizer, encoder: ParamMap) -> Result<Self> {
        if encoder.input_dim() != 2 * featurizer.dim() || encoder.output_dim() % 2 != 0 {
            return Err(LabError::ShapeMismatch {
                context: "encoder topology",
                expected: 2 * featurizer.dim(),
                got: encoder.input_dim(),
            });
        }
        let latent_dim = encoder.output_dim() / 2;
        Ok(InverseDynamics {
            featurizer,
            encoder,
            latent_dim,
        })
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    pub fn encoder(&self) -> &ParamMap {
        &self.encoder
    }

    pub fn encoder_mut(&mut self) -> &mut ParamMap {
        &mut self.encoder
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// Concatenated features of `(s, s')`.
    pub fn pair_features(&self, s: &[f64], s_prime: &[f64]) -> Result<Vec<f64>> {
        let mut f = self.featurizer.features(s)?;
        f.extend(self.featurizer.features(s_prime)?);
        Ok(f)
    }

    pub fn forward_pair(&self, pair_features: &[f64]) -> Result<EncoderPass> {
        let tape = self.encoder.forward_tape(pair_features)?;
        let out = tape.output();
        if out.iter().any(|x| !x.is_finite()) {
            return Err(LabError::NonFinite("inverse dynamics output"));
        }
        let d = self.latent_dim;
        let mean = out[..d].to_vec();
        let raw = &out[d..];
        let log_std = raw.iter().map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
        let clamped = raw.iter().map(|&l| !(LOG_STD_MIN..=LOG_STD_MAX).contains(&l)).collect();
        Ok(EncoderPass {
            tape,
            mean,
            log_std,
            clamped,
        })
    }

    /// Mean, std and one reparameterised sample `mean + std * z`.
    pub fn encode_transition<R: Rng + ?Sized>(&self, s: &[f64], s_prime: &[f64], rng: &mut R) -> Result<Encoding> {
        let z = standard_normal_vec(self.latent_dim, rng);
        self.encode_with_noise(&self.pair_features(s, s_prime)?, &z)
    }

    pub fn encode_with_noise(&self, pair_features: &[f64], z: &[f64]) -> Result<Encoding> {
        let pass = self.forward_pair(pair_features)?;
        let std: Vec<f64> = pass.log_std.iter().map(|l| l.exp()).collect();
        let sample = pass.mean.iter().zip(&std).zip(z).map(|((m, s), z)| m + s * z).collect();
        Ok(Encoding {
            sample,
            mean: pass.mean,
            std,
            z: z.to_vec(),
        })
    }
}

/// State-value critic trained by TD(lambda) with an accumulating trace.
#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    value_map: ParamMap,
    trace: Vec<f64>,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(feature_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        Self::from_map(ParamMap::new(feature_dim, hidden, 1, rng))
    }

    pub fn from_map(value_map: ParamMap) -> Self {
        let trace = vec![0.0; value_map.param_count()];
        Critic { value_map, trace }
    }

    pub fn value_map(&self) -> &ParamMap {
        &self.value_map
    }

    pub fn trace(&self) -> &[f64] {
        &self.trace
    }

    pub fn reset_trace(&mut self) {
        self.trace.iter_mut().for_each(|t| *t = 0.0);
    }

    pub fn value(&self, features: &[f64]) -> Result<f64> {
        Ok(self.value_map.forward(features)?[0])
    }

    /// One TD step: `delta = r + gamma v(s') (1 - terminal) - v(s)`,
    /// `trace = gamma lambda trace + grad v(s)`, `params += lr delta trace`.
    #[allow(clippy::too_many_arguments)]
    pub fn update(
        &mut self,
        features: &[f64],
        reward: f64,
        next_features: &[f64],
        terminal: bool,
        gamma: f64,
        trace_decay: f64,
        lr: f64,
    ) -> Result<f64> {
        let next_v = if terminal { 0.0 } else { self.value(next_features)? };
        let tape = self.value_map.forward_tape(features)?;
        let v = tape.output()[0];
        let delta = reward + gamma * next_v - v;
        if !delta.is_finite() {
            return Err(LabError::NonFinite("critic TD error"));
        }
        let decay = gamma * trace_decay;
        self.trace.iter_mut().for_each(|t| *t *= decay);
        self.value_map.backward(&tape, &[1.0], &mut self.trace)?;
        let step = lr * delta;
        if step != 0.0 {
            let trace = std::mem::take(&mut self.trace);
            self.value_map.add_scaled(&trace, step);
            self.trace = trace;
        }
        Ok(delta)
    }
}

/// The four learned components of the structured learner.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyBundle {
    pub beta: DecisionPolicy,
    pub selector: ActionSelector,
    pub inverse: InverseDynamics,
    pub critic: Critic,
}

#[derive(Serialize, Deserialize)]
struct BundleManifest {
    latent_dim: usize,
    selector_rows: usize,
    current_k: usize,
    temperature: f64,
    log_std: LogStd,
    featurizer: Featurizer,
}

impl PolicyBundle {
    /// Writes one checkpoint per component plus `bundle.json`.
    pub fn write_checkpoint(&self, dir: &Path, current_k: usize) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
        self.beta.mean_map.write_checkpoint(dir, "beta")?;
        self.inverse.encoder.write_checkpoint(dir, "inverse_dynamics")?;
        self.critic.value_map.write_checkpoint(dir, "critic")?;
        write_params(&dir.join("selector.bin"), self.selector.params())?;
        let manifest = BundleManifest {
            latent_dim: self.beta.latent_dim(),
            selector_rows: self.selector.n_rows(),
            current_k,
            temperature: self.selector.temperature,
            log_std: self.beta.log_std.clone(),
            featurizer: self.beta.featurizer.clone(),
        };
        let path = dir.join("bundle.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| LabError::io(&path, e))
    }

    /// Reads a bundle back, returning it with the recorded change index.
    pub fn read_checkpoint(dir: &Path) -> Result<(Self, usize)> {
        let path = dir.join("bundle.json");
        let text = std::fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
        let m: BundleManifest = serde_json::from_str(&text)?;
        let beta = DecisionPolicy::from_parts(m.featurizer.clone(), ParamMap::read_checkpoint(dir, "beta")?, m.log_std);
        let inverse = InverseDynamics::from_parts(m.featurizer, ParamMap::read_checkpoint(dir, "inverse_dynamics")?)?;
        let critic = Critic::from_map(ParamMap::read_checkpoint(dir, "critic")?);
        let weights = read_params(&dir.join("selector.bin"))?;
        if weights.len() != m.selector_rows * m.latent_dim {
            return Err(LabError::ShapeMismatch {
                context: "selector checkpoint",
                expected: m.selector_rows * m.latent_dim,
                got: weights.len(),
            });
        }
        let selector = ActionSelector::from_parts(m.latent_dim, weights, m.temperature)?;
        Ok((
            PolicyBundle {
                beta,
                selector,
                inverse,
                critic,
            },
            m.current_k,
        ))
    }
}
