//! Experiment configuration, seeded multi-trial execution and curve
//! aggregation.
//!
//! An experiment is one environment, one schedule recipe and a list of
//! algorithms, each run for `n_seeds` trials. Trial `i` of every algorithm
//! shares the seed `trial_seed(master_seed, i)`, so all algorithms see the
//! same schedule realisation and environment streams. Outputs are written in
//! a fixed order with no timestamps, so the same configuration reproduces
//! every file byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::adapt::{run_adaptation, AdaptationReport};
use crate::algorithms::{run_lifelong, Algorithm, LearnerConfig, RunConfig, TrialRecord};
use crate::approx::Featurizer;
use crate::env::{generate_ngram, generate_tabular, MazeConfig, MazeEnv, NgramMdpSpec, TabularLatentMdp};
use crate::error::{LabError, Result};
use crate::lmdp::{ActionRegistry, ChangeSchedule, Environment, LatentActionSpace};
use crate::policy::{ActionSelector, Critic, DecisionPolicy, InverseDynamics, LogStd, PolicyBundle};
use crate::rng::{self, streams};

/// Fraction of faulted trials above which an experiment fails.
pub const MAX_FAULT_FRACTION: f64 = 0.2;

/// Environment override for the worker pool size.
pub const THREADS_ENV: &str = "LAICA_LAB_THREADS";

pub const FIXED_SETTING_NOTE: &str = "curves use one fixed default hyper-parameter setting per algorithm, \
not the best setting of a search";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    Maze(MazeConfig),
    Tabular {
        seed: u64,
        n_states: usize,
        n_anchors: usize,
        latent_dim: usize,
        #[serde(default = "default_tabular_horizon")]
        horizon: usize,
    },
    Ngram {
        seed: u64,
        n_items: usize,
        n_value: usize,
        feature_dim: usize,
        #[serde(default = "default_ngram_horizon")]
        horizon: usize,
    },
}

fn default_tabular_horizon() -> usize {
    100
}

fn default_ngram_horizon() -> usize {
    20
}

/// How the action set grows. Changes happen at `0, E, 2E, ...`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    /// Shuffle the environment's full action catalogue into equal sets.
    EqualSplit {
        n_segments: usize,
        episodes_per_segment: usize,
    },
    /// Latents drawn uniformly from the latent box.
    Uniform {
        n_changes: usize,
        per_change: usize,
        episodes_per_segment: usize,
    },
}

impl ScheduleConfig {
    pub fn episodes_per_segment(&self) -> usize {
        match self {
            ScheduleConfig::EqualSplit { episodes_per_segment, .. }
            | ScheduleConfig::Uniform { episodes_per_segment, .. } => *episodes_per_segment,
        }
    }

    pub fn n_changes(&self) -> usize {
        match self {
            ScheduleConfig::EqualSplit { n_segments, .. } => *n_segments,
            ScheduleConfig::Uniform { n_changes, .. } => *n_changes,
        }
    }
}

fn default_algorithms() -> Vec<Algorithm> {
    Algorithm::ALL.to_vec()
}

fn default_n_seeds() -> usize {
    10
}

fn default_window() -> usize {
    100
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

/// Experiment file as written by the user. `learner` holds overrides that
/// are merged onto the environment's default learner settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub schedule: ScheduleConfig,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_n_seeds")]
    pub n_seeds: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_window")]
    pub running_mean_window: usize,
    #[serde(default)]
    pub learner: Value,
}

/// Configuration after defaults and overrides have been applied.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolvedConfig {
    pub env: EnvConfig,
    pub schedule: ScheduleConfig,
    pub algorithms: Vec<Algorithm>,
    pub n_seeds: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub running_mean_window: usize,
    pub featurizer: Featurizer,
    pub learner: LearnerConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            LabError::Config(format!("line {} column {}: {e}", e.line(), e.column()))
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::from_json(&text).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies environment defaults and learner overrides, then validates.
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        if self.algorithms.is_empty() {
            return Err(LabError::Config("algorithms must not be empty".into()));
        }
        if self.n_seeds == 0 {
            return Err(LabError::Config("n_seeds must be positive".into()));
        }
        if self.running_mean_window == 0 {
            return Err(LabError::Config("running_mean_window must be positive".into()));
        }
        if self.schedule.episodes_per_segment() == 0 || self.schedule.n_changes() == 0 {
            return Err(LabError::Config("schedule needs at least one change and one episode per segment".into()));
        }
        if let (EnvConfig::Tabular { .. }, ScheduleConfig::EqualSplit { .. }) = (&self.env, &self.schedule) {
            return Err(LabError::Config(
                "tabular environments have no finite action catalogue; use a uniform schedule".into(),
            ));
        }
        if let EnvConfig::Maze(m) = &self.env {
            m.validate()?;
        }
        let built = BuiltEnv::build(&self.env)?;
        let (featurizer, defaults) = built.defaults();
        let learner = merge_learner(&defaults, &self.learner)?;
        learner.validate()?;
        Ok(ResolvedConfig {
            env: self.env.clone(),
            schedule: self.schedule.clone(),
            algorithms: self.algorithms.clone(),
            n_seeds: self.n_seeds,
            master_seed: self.master_seed,
            output_dir: self.output_dir.clone(),
            running_mean_window: self.running_mean_window,
            featurizer,
            learner,
        })
    }
}

fn merge_json(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge_json(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

fn merge_learner(defaults: &LearnerConfig, overrides: &Value) -> Result<LearnerConfig> {
    let mut base = serde_json::to_value(defaults)?;
    if !overrides.is_null() {
        if !overrides.is_object() {
            return Err(LabError::Config("learner must be an object".into()));
        }
        merge_json(&mut base, overrides);
    }
    serde_json::from_value(base).map_err(|e| LabError::Config(format!("learner: {e}")))
}

/// Default learner for the maze: fixed decision-policy spread 1.5 and
/// Lagrangian 1e-2 for the adaptation objective.
pub fn maze_learner_defaults() -> LearnerConfig {
    let mut l = LearnerConfig {
        beta_log_std: LogStd::Fixed(1.5f64.ln()),
        ..LearnerConfig::default()
    };
    l.adaptation.lambda = 1e-2;
    l.adaptation.lr = 1e-2;
    l
}

/// Recommender-style defaults: one hidden layer for actor and critic, a
/// 16-dimensional inferred space with learned spread, 2000 random
/// trajectories per adaptation and Lagrangian 1e-2.
pub fn ngram_learner_defaults() -> LearnerConfig {
    let mut l = LearnerConfig {
        latent_dim: 16,
        beta_hidden: vec![64],
        beta_log_std: LogStd::Learned(vec![0.0; 16]),
        critic_hidden: vec![64],
        ..LearnerConfig::default()
    };
    l.adaptation.trajectories = 2000;
    l.adaptation.lambda = 1e-2;
    l
}

/// Tabular defaults: inferred space as wide as the true latent space,
/// Lagrangian 1e-2.
pub fn tabular_learner_defaults(latent_dim: usize) -> LearnerConfig {
    let mut l = LearnerConfig {
        latent_dim,
        ..LearnerConfig::default()
    };
    l.adaptation.lambda = 1e-2;
    l
}

enum BuiltEnv {
    Maze(MazeEnv),
    Tabular(TabularLatentMdp),
    Ngram(NgramMdpSpec),
}

impl BuiltEnv {
    fn build(config: &EnvConfig) -> Result<Self> {
        Ok(match config {
            EnvConfig::Maze(m) => BuiltEnv::Maze(MazeEnv::new(m.clone())?),
            EnvConfig::Tabular {
                seed,
                n_states,
                n_anchors,
                latent_dim,
                horizon,
            } => BuiltEnv::Tabular(generate_tabular(*seed, *n_states, *n_anchors, *latent_dim)?.with_horizon(*horizon)),
            EnvConfig::Ngram {
                seed,
                n_items,
                n_value,
                feature_dim,
                horizon,
            } => BuiltEnv::Ngram(generate_ngram(*seed, *n_items, *n_value, *feature_dim)?.with_horizon(*horizon)),
        })
    }

    fn defaults(&self) -> (Featurizer, LearnerConfig) {
        match self {
            BuiltEnv::Maze(_) => (Featurizer::fourier(3, 2), maze_learner_defaults()),
            BuiltEnv::Tabular(t) => (
                Featurizer::Identity { dim: t.n_states() },
                tabular_learner_defaults(t.space().dim()),
            ),
            BuiltEnv::Ngram(n) => (
                Featurizer::Identity {
                    dim: n.observation_dim(),
                },
                ngram_learner_defaults(),
            ),
        }
    }

    fn space(&self) -> LatentActionSpace {
        match self {
            BuiltEnv::Maze(m) => m.latent_space(),
            BuiltEnv::Tabular(t) => t.space().clone(),
            BuiltEnv::Ngram(n) => n.latent_space(),
        }
    }

    fn catalogue(&self) -> Option<Vec<Vec<f64>>> {
        match self {
            BuiltEnv::Maze(m) => Some(m.action_latents()),
            BuiltEnv::Tabular(_) => None,
            BuiltEnv::Ngram(n) => Some(n.action_latents()),
        }
    }
}

impl ResolvedConfig {
    /// Schedule realisation shared by every algorithm for trial seed `seed`.
    pub fn schedule_for(&self, seed: u64) -> Result<ChangeSchedule> {
        let built = BuiltEnv::build(&self.env)?;
        schedule_for(&built, &self.schedule, seed)
    }

    pub fn trial_seeds(&self) -> Vec<u64> {
        (0..self.n_seeds as u64).map(|i| rng::trial_seed(self.master_seed, i)).collect()
    }

    pub fn run_config(&self, algorithm: Algorithm, schedule: ChangeSchedule) -> Result<RunConfig> {
        let built = BuiltEnv::build(&self.env)?;
        Ok(RunConfig {
            algorithm,
            episodes_per_segment: self.schedule.episodes_per_segment(),
            schedule,
            space: built.space(),
            featurizer: self.featurizer.clone(),
            learner: self.learner.clone(),
        })
    }

    /// SHA-256 over the canonical JSON of the resolved configuration,
    /// excluding the output directory.
    pub fn content_hash(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Value::Object(m) = &mut v {
            m.remove("output_dir");
        }
        let bytes = serde_json::to_vec(&v)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }
}

fn schedule_for(env: &BuiltEnv, config: &ScheduleConfig, seed: u64) -> Result<ChangeSchedule> {
    let mut r = rng::stream(seed, streams::SCHEDULE);
    match config {
        ScheduleConfig::EqualSplit {
            n_segments,
            episodes_per_segment,
        } => {
            let catalogue = env
                .catalogue()
                .ok_or_else(|| LabError::Config("environment has no action catalogue".into()))?;
            ChangeSchedule::equal_split(catalogue, *n_segments, *episodes_per_segment, &mut r)
        }
        ScheduleConfig::Uniform {
            n_changes,
            per_change,
            episodes_per_segment,
        } => ChangeSchedule::uniform(&env.space(), *n_changes, *per_change, *episodes_per_segment, &mut r),
    }
}

/// Prefix-windowed running mean: entry `i` averages the last
/// `min(window, i + 1)` values.
pub fn running_mean(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub algorithm: Algorithm,
    pub n_trials: usize,
    pub episodes: Vec<usize>,
    pub mean_return: Vec<f64>,
    pub std_error: Vec<f64>,
    /// Episodes at which the action set grew, excluding the first release.
    pub change_markers: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CurveBundle {
    pub curves: Vec<Curve>,
    pub warnings: Vec<String>,
}

/// Smooths each trial, then takes the across-trial mean and standard error
/// (sample std over `sqrt(n)`; zero for a single trial).
pub fn aggregate(algorithm: Algorithm, trials: &[&TrialRecord], window: usize) -> Result<Curve> {
    let n = trials.len();
    if n == 0 {
        return Err(LabError::Precondition(format!("no completed trials for {algorithm}")));
    }
    let len = trials[0].returns.len();
    if trials.iter().any(|t| t.returns.len() != len) {
        return Err(LabError::Precondition(format!("{algorithm} trials have unequal lengths")));
    }
    let smoothed: Vec<Vec<f64>> = trials.iter().map(|t| running_mean(&t.returns, window)).collect();
    let mut mean_return = Vec::with_capacity(len);
    let mut std_error = Vec::with_capacity(len);
    for i in 0..len {
        let mean = smoothed.iter().map(|s| s[i]).sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = smoothed.iter().map(|s| (s[i] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            var.sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        mean_return.push(mean);
        std_error.push(se);
    }
    Ok(Curve {
        algorithm,
        n_trials: n,
        episodes: (0..len).collect(),
        mean_return,
        std_error,
        change_markers: trials[0].change_episodes.iter().copied().filter(|&e| e > 0).collect(),
    })
}

/// Groups completed trials by algorithm in `order` and aggregates them.
pub fn aggregate_trials(order: &[Algorithm], trials: &[TrialRecord], window: usize) -> Result<CurveBundle> {
    let mut bundle = CurveBundle::default();
    for &alg in order {
        let done: Vec<&TrialRecord> = trials.iter().filter(|t| t.algorithm == alg && !t.is_faulted()).collect();
        let faulted = trials.iter().filter(|t| t.algorithm == alg && t.is_faulted()).count();
        if faulted > 0 {
            bundle
                .warnings
                .push(format!("{alg}: {faulted} faulted trial(s) excluded from aggregation"));
        }
        if done.len() == 1 {
            bundle
                .warnings
                .push(format!("{alg}: single trial, standard error reported as 0"));
        }
        bundle.curves.push(aggregate(alg, &done, window)?);
    }
    Ok(bundle)
}

pub fn curves_csv(bundle: &CurveBundle) -> String {
    let mut out = String::from("algorithm,episode,mean_return,std_error,is_change_marker\n");
    for c in &bundle.curves {
        for i in 0..c.episodes.len() {
            let marker = u8::from(c.change_markers.binary_search(&c.episodes[i]).is_ok());
            let _ = writeln!(
                out,
                "{},{},{:?},{:?},{}",
                c.algorithm, c.episodes[i], c.mean_return[i], c.std_error[i], marker
            );
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Manifest {
    pub crate_version: &'static str,
    pub config: ResolvedConfig,
    pub config_sha256: String,
    pub trial_seeds: Vec<u64>,
    pub trial_files: Vec<String>,
    pub faulted_trials: Vec<String>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub curves: CurveBundle,
    pub trials: Vec<TrialRecord>,
    pub manifest: Manifest,
}

pub fn trial_file_name(algorithm: Algorithm, index: usize) -> String {
    format!("{algorithm}_seed{index:03}.json")
}

/// Worker count: explicit request, then the environment override, then the
/// available parallelism.
pub fn pool_size(requested: Option<usize>) -> usize {
    requested
        .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()))
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every (algorithm, seed) trial, aggregates and writes the outputs
/// into `config.output_dir`.
pub fn run_experiment(config: &ResolvedConfig, threads: Option<usize>) -> Result<ExperimentOutput> {
    let built = BuiltEnv::build(&config.env)?;
    let seeds = config.trial_seeds();
    let schedules = seeds
        .iter()
        .map(|&s| schedule_for(&built, &config.schedule, s))
        .collect::<Result<Vec<_>>>()?;
    let mut jobs = Vec::new();
    for &alg in &config.algorithms {
        for (i, &seed) in seeds.iter().enumerate() {
            jobs.push((alg, i, seed));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(pool_size(threads))
        .build()
        .map_err(|e| LabError::Precondition(format!("thread pool: {e}")))?;
    log::info!("running {} trials on {} workers", jobs.len(), pool.current_num_threads());
    let trials: Vec<TrialRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(alg, i, seed)| {
                let rc = config.run_config(alg, schedules[i].clone())?;
                let rec = match &built {
                    BuiltEnv::Maze(e) => run_lifelong(e, &rc, seed),
                    BuiltEnv::Tabular(e) => run_lifelong(e, &rc, seed),
                    BuiltEnv::Ngram(e) => run_lifelong(e, &rc, seed),
                };
                log::debug!("{alg} seed {i} done");
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let faulted: Vec<String> = jobs
        .iter()
        .zip(&trials)
        .filter(|(_, t)| t.is_faulted())
        .map(|(&(alg, i, _), t)| format!("{}: {}", trial_file_name(alg, i), t.fault.as_deref().unwrap_or("")))
        .collect();
    if faulted.len() as f64 > MAX_FAULT_FRACTION * trials.len() as f64 {
        return Err(LabError::TooManyFaults {
            faulted: faulted.len(),
            total: trials.len(),
        });
    }
    let curves = aggregate_trials(&config.algorithms, &trials, config.running_mean_window)?;
    let manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION"),
        config: config.clone(),
        config_sha256: config.content_hash()?,
        trial_seeds: seeds,
        trial_files: jobs.iter().map(|&(alg, i, _)| trial_file_name(alg, i)).collect(),
        faulted_trials: faulted,
        warnings: curves.warnings.clone(),
        notes: vec![FIXED_SETTING_NOTE.to_string()],
    };
    let output = ExperimentOutput {
        curves,
        trials,
        manifest,
    };
    write_outputs(&config.output_dir, &output)?;
    Ok(output)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| LabError::io(path, e))
}

pub fn write_outputs(dir: &Path, output: &ExperimentOutput) -> Result<()> {
    let trial_dir = dir.join("trials");
    fs::create_dir_all(&trial_dir).map_err(|e| LabError::io(&trial_dir, e))?;
    write_file(&dir.join("curves.csv"), curves_csv(&output.curves))?;
    for (name, t) in output.manifest.trial_files.iter().zip(&output.trials) {
        write_file(&trial_dir.join(name), serde_json::to_string_pretty(t)?)?;
    }
    write_file(&dir.join("manifest.json"), serde_json::to_string_pretty(&output.manifest)?)
}

/// Reads `trials/*.json` and the window from `manifest.json` in `dir`
/// and recomputes the curves.
pub fn curves_from_dir(dir: &Path) -> Result<CurveBundle> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| LabError::io(&manifest_path, e))?;
    let manifest: Value = serde_json::from_str(&text)?;
    let window = manifest["config"]["running_mean_window"]
        .as_u64()
        .ok_or_else(|| LabError::Config(format!("{}: missing running_mean_window", manifest_path.display())))?
        as usize;
    let order: Vec<Algorithm> = serde_json::from_value(manifest["config"]["algorithms"].clone())?;
    let files: Vec<String> = serde_json::from_value(manifest["trial_files"].clone())?;
    let mut trials = Vec::with_capacity(files.len());
    for name in files {
        let p = dir.join("trials").join(name);
        let t = fs::read_to_string(&p).map_err(|e| LabError::io(&p, e))?;
        trials.push(serde_json::from_str::<TrialRecord>(&t)?);
    }
    aggregate_trials(&order, &trials, window)
}

/// Adaptation-only diagnostics: replays the first trial's schedule and runs
/// the adaptation phase at every change without any policy improvement.
pub fn adaptation_report(config: &ResolvedConfig) -> Result<Vec<AdaptationReport>> {
    let built = BuiltEnv::build(&config.env)?;
    let seed = config.trial_seeds()[0];
    let schedule = schedule_for(&built, &config.schedule, seed)?;
    match &built {
        BuiltEnv::Maze(e) => adaptation_only(e, config, &schedule, &built.space(), seed),
        BuiltEnv::Tabular(e) => adaptation_only(e, config, &schedule, &built.space(), seed),
        BuiltEnv::Ngram(e) => adaptation_only(e, config, &schedule, &built.space(), seed),
    }
}

fn adaptation_only<E: Environment>(
    env: &E,
    config: &ResolvedConfig,
    schedule: &ChangeSchedule,
    space: &LatentActionSpace,
    seed: u64,
) -> Result<Vec<AdaptationReport>> {
    let lc = &config.learner;
    let mut init = rng::stream(seed, streams::INIT);
    let mut stack = rng::stream(seed, streams::STACK);
    let mut adapt = rng::stream(seed, streams::ADAPT);
    let mut registry = ActionRegistry::new();
    let mut bundle: Option<PolicyBundle> = None;
    let mut reports = Vec::new();
    for additions in schedule.additions() {
        let added = registry.add_change(additions, space)?.len();
        let b = match bundle.as_mut() {
            Some(b) => {
                b.selector.stack_rows(added, &mut stack)?;
                b
            }
            None => bundle.insert(PolicyBundle {
                beta: DecisionPolicy::new(
                    config.featurizer.clone(),
                    lc.latent_dim,
                    &lc.beta_hidden,
                    lc.beta_log_std.clone(),
                    &mut init,
                )?,
                selector: ActionSelector::new(lc.latent_dim, registry.len(), lc.selector_temperature, &mut init),
                inverse: InverseDynamics::new(config.featurizer.clone(), lc.latent_dim, &lc.encoder_hidden, &mut init),
                critic: Critic::new(config.featurizer.dim(), &lc.critic_hidden, &mut init),
            }),
        };
        reports.push(run_adaptation(b, env, &registry, &lc.adaptation, &mut adapt)?);
    }
    Ok(reports)
}
