//! The lifelong MDP contract.
//!
//! A lifelong MDP is a base MDP whose discrete action set only ever grows.
//! Each observed action is backed by a hidden latent vector in a bounded
//! space, and transition kernels are Lipschitz in that latent. The agent only
//! sees action ids; the latents live in the [`ActionRegistry`] and are
//! consulted by environments when an action is executed.

use std::io::Write;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

const BOUNDS_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Self {
        Interval { lower, upper }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// The hidden structure behind the observed actions: a box in `R^d` together
/// with the Lipschitz constant of the transition kernel in that box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentActionSpace {
    bounds: Vec<Interval>,
    rho: f64,
}

impl LatentActionSpace {
    pub fn new(bounds: Vec<Interval>, rho: f64) -> Result<Self> {
        if bounds.is_empty() {
            return Err(LabError::InvalidSpace("dimension must be at least 1".into()));
        }
        for (i, b) in bounds.iter().enumerate() {
            if !(b.lower.is_finite() && b.upper.is_finite()) || b.lower >= b.upper {
                return Err(LabError::InvalidSpace(format!(
                    "interval {i} = [{}, {}] is degenerate",
                    b.lower, b.upper
                )));
            }
        }
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(LabError::InvalidSpace(format!("rho = {rho} must be finite and >= 0")));
        }
        Ok(LatentActionSpace { bounds, rho })
    }

    pub fn unit_cube(dim: usize, rho: f64) -> Result<Self> {
        Self::new(vec![Interval::new(0.0, 1.0); dim], rho)
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[Interval] {
        &self.bounds
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn contains(&self, latent: &[f64]) -> bool {
        latent.len() == self.dim()
            && latent.iter().zip(&self.bounds).all(|(&x, b)| {
                x >= b.lower - BOUNDS_TOLERANCE && x <= b.upper + BOUNDS_TOLERANCE
            })
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.bounds
            .iter()
            .map(|b| b.lower + rng.random::<f64>() * b.width())
            .collect()
    }

    /// Regular grid with `points_per_dim` points along every axis, endpoints
    /// included. Points are emitted with the first coordinate varying slowest.
    pub fn grid(&self, points_per_dim: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self
            .bounds
            .iter()
            .map(|b| axis_points(*b, points_per_dim))
            .collect();
        cartesian(&axes)
    }

    /// L1 covering radius of [`grid`](Self::grid) over the continuous box.
    pub fn grid_covering_radius(&self, points_per_dim: usize) -> f64 {
        if points_per_dim <= 1 {
            return self.bounds.iter().map(|b| b.width() / 2.0).sum();
        }
        self.bounds
            .iter()
            .map(|b| b.width() / (2.0 * (points_per_dim - 1) as f64))
            .sum()
    }

    /// First `n` points of the Halton sequence mapped into the box.
    pub fn halton(&self, n: usize) -> Vec<Vec<f64>> {
        let primes = first_primes(self.dim());
        (1..=n)
            .map(|i| {
                self.bounds
                    .iter()
                    .zip(&primes)
                    .map(|(b, &p)| b.lower + radical_inverse(i as u64, p) * b.width())
                    .collect()
            })
            .collect()
    }

    /// Probe set used for covering-radius readings: a 64-per-axis grid up to
    /// two dimensions, 4096 low-discrepancy points beyond that.
    pub fn default_probes(&self) -> Vec<Vec<f64>> {
        if self.dim() <= 2 {
            self.grid(64)
        } else {
            self.halton(4096)
        }
    }
}

fn axis_points(b: Interval, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![b.lower + b.width() / 2.0],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    b.upper
                } else {
                    b.lower + b.width() * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for prefix in &out {
            for &x in axis {
                let mut p = prefix.clone();
                p.push(x);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(n);
    let mut candidate = 2u64;
    while primes.len() < n {
        if primes.iter().all(|p| candidate % p != 0) {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    out
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionEntry {
    pub action_id: usize,
    pub latent: Vec<f64>,
    pub added_at_change: usize,
}

/// Append-only record of every observed action and the latent behind it.
///
/// Ids are dense and assigned in insertion order. `current_k` counts the
/// changes applied so far; the base MDP (`k = 0`) has no actions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionRegistry {
    entries: Vec<ActionEntry>,
    current_k: usize,
}

impl ActionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn current_k(&self) -> usize {
        self.current_k
    }

    pub fn entries(&self) -> &[ActionEntry] {
        &self.entries
    }

    pub fn latent(&self, action_id: usize) -> Result<&[f64]> {
        self.entries
            .get(action_id)
            .map(|e| e.latent.as_slice())
            .ok_or(LabError::UnknownAction(action_id))
    }

    /// Entries available in `M_k`.
    pub fn available_at(&self, k: usize) -> impl Iterator<Item = &ActionEntry> {
        self.entries.iter().filter(move |e| e.added_at_change <= k)
    }

    pub fn available_ids(&self) -> Vec<usize> {
        self.available_at(self.current_k).map(|e| e.action_id).collect()
    }

    pub fn available_latents(&self) -> Vec<&[f64]> {
        self.available_at(self.current_k)
            .map(|e| e.latent.as_slice())
            .collect()
    }

    pub fn is_available(&self, action_id: usize) -> bool {
        self.entries
            .get(action_id)
            .is_some_and(|e| e.added_at_change <= self.current_k)
    }

    /// Latent of an action that must currently be available.
    pub fn ensure_available(&self, action_id: usize) -> Result<&[f64]> {
        match self.entries.get(action_id) {
            Some(e) if e.added_at_change <= self.current_k => Ok(&e.latent),
            _ => Err(LabError::ActionUnavailable(action_id)),
        }
    }

    /// Appends one change worth of latents and returns the ids they received.
    /// Either every latent is accepted or the registry is left untouched.
    pub fn add_change(
        &mut self,
        latents: &[Vec<f64>],
        space: &LatentActionSpace,
    ) -> Result<Range<usize>> {
        if latents.is_empty() {
            return Err(LabError::InvalidSchedule("a change must add at least one action".into()));
        }
        if let Some(bad) = latents.iter().find(|e| !space.contains(e)) {
            return Err(LabError::LatentOutOfBounds(bad.clone()));
        }
        let k = self.current_k + 1;
        let start = self.entries.len();
        self.entries.extend(latents.iter().enumerate().map(|(i, e)| ActionEntry {
            action_id: start + i,
            latent: e.clone(),
            added_at_change: k,
        }));
        self.current_k = k;
        Ok(start..self.entries.len())
    }

    /// CSV dump: `action_id,added_at_change,latent_0,...`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let dim = self.entries.first().map_or(0, |e| e.latent.len());
        write!(w, "action_id,added_at_change")?;
        for i in 0..dim {
            write!(w, ",latent_{i}")?;
        }
        writeln!(w)?;
        for e in &self.entries {
            write!(w, "{},{}", e.action_id, e.added_at_change)?;
            for x in &e.latent {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Pre-materialised realisation of the change indicators and the sets of
/// latents they add.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangeSchedule {
    change_episodes: Vec<usize>,
    additions: Vec<Vec<Vec<f64>>>,
}

impl ChangeSchedule {
    pub fn new(change_episodes: Vec<usize>, additions: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if change_episodes.len() != additions.len() {
            return Err(LabError::InvalidSchedule(format!(
                "{} change episodes but {} addition sets",
                change_episodes.len(),
                additions.len()
            )));
        }
        if change_episodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LabError::InvalidSchedule(
                "change episodes must be strictly increasing".into(),
            ));
        }
        if let Some(i) = additions.iter().position(Vec::is_empty) {
            return Err(LabError::InvalidSchedule(format!("change {i} adds no actions")));
        }
        Ok(ChangeSchedule {
            change_episodes,
            additions,
        })
    }

    /// Shuffles `latents` and splits them into `n_sets` consecutive sets
    /// released every `interval` episodes starting at episode 0. When the
    /// split is uneven, earlier sets take one extra action each.
    pub fn equal_split<R: Rng + ?Sized>(
        mut latents: Vec<Vec<f64>>,
        n_sets: usize,
        interval: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_sets == 0 || n_sets > latents.len() {
            return Err(LabError::InvalidSchedule(format!(
                "cannot split {} actions into {n_sets} non-empty sets",
                latents.len()
            )));
        }
        if interval == 0 && n_sets > 1 {
            return Err(LabError::InvalidSchedule("change interval must be positive".into()));
        }
        latents.shuffle(rng);
        let mut rest = latents.into_iter();
        let additions = split_sizes(rest.len(), n_sets)
            .into_iter()
            .map(|n| rest.by_ref().take(n).collect())
            .collect();
        let episodes = (0..n_sets).map(|i| i * interval).collect();
        Self::new(episodes, additions)
    }

    /// `n_changes` sets of `per_change` latents drawn uniformly from the box.
    pub fn uniform<R: Rng + ?Sized>(
        space: &LatentActionSpace,
        n_changes: usize,
        per_change: usize,
        interval: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if per_change == 0 {
            return Err(LabError::InvalidSchedule("per-change additions must be >= 1".into()));
        }
        let additions = (0..n_changes)
            .map(|_| (0..per_change).map(|_| space.sample_uniform(rng)).collect())
            .collect();
        let episodes = (0..n_changes).map(|i| i * interval.max(1)).collect();
        Self::new(episodes, additions)
    }

    pub fn change_episodes(&self) -> &[usize] {
        &self.change_episodes
    }

    pub fn additions(&self) -> &[Vec<Vec<f64>>] {
        &self.additions
    }

    pub fn n_changes(&self) -> usize {
        self.change_episodes.len()
    }

    pub fn total_actions(&self) -> usize {
        self.additions.iter().map(Vec::len).sum()
    }

    pub fn additions_at(&self, episode: usize) -> Option<&[Vec<f64>]> {
        self.change_episodes
            .binary_search(&episode)
            .ok()
            .map(|i| self.additions[i].as_slice())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            change_episodes: Vec<usize>,
            additions: Vec<Vec<Vec<f64>>>,
        }
        let raw: Raw = serde_json::from_str(text)?;
        Self::new(raw.change_episodes, raw.additions)
    }
}

/// Set sizes for splitting `total` items into `n_sets`, remainder first.
pub fn split_sizes(total: usize, n_sets: usize) -> Vec<usize> {
    let base = total / n_sets;
    let extra = total % n_sets;
    (0..n_sets).map(|i| base + usize::from(i < extra)).collect()
}

/// Releases the actions scheduled for `episode`, if any. Returns how many
/// actions were appended; a non-change episode leaves the registry untouched.
pub fn apply_change(
    registry: &mut ActionRegistry,
    schedule: &ChangeSchedule,
    space: &LatentActionSpace,
    episode: usize,
) -> Result<usize> {
    match schedule.additions_at(episode) {
        Some(latents) => Ok(registry.add_change(latents, space)?.len()),
        None => Ok(0),
    }
}

/// Largest L1 distance from a probe point to its nearest available latent.
pub fn covering_radius(registry: &ActionRegistry, probes: &[Vec<f64>]) -> Result<f64> {
    let latents = registry.available_latents();
    covering_radius_of(&latents, probes)
}

pub fn covering_radius_of<L: AsRef<[f64]>>(latents: &[L], probes: &[Vec<f64>]) -> Result<f64> {
    if latents.is_empty() {
        return Err(LabError::NoAvailableActions);
    }
    Ok(probes
        .iter()
        .map(|p| {
            latents
                .iter()
                .map(|e| l1_distance(p, e.as_ref()))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max))
}

/// Models that expose their exact next-state distribution for any latent.
pub trait LatentKernel {
    fn n_states(&self) -> usize;
    fn kernel_row(&self, state: usize, latent: &[f64]) -> Vec<f64>;
}

/// Empirical Lipschitz constant over `(state, e_i, e_j)` triples: the largest
/// ratio of kernel L1 distance to latent L1 distance. Pairs with equal
/// latents are skipped. The result is a lower bound on the true constant.
pub fn lipschitz_estimate<K: LatentKernel + ?Sized>(
    model: &K,
    pairs: &[(usize, Vec<f64>, Vec<f64>)],
) -> Result<f64> {
    let mut best: Option<f64> = None;
    for (s, ei, ej) in pairs {
        let dist = l1_distance(ei, ej);
        if dist == 0.0 {
            continue;
        }
        let pi = model.kernel_row(*s, ei);
        let pj = model.kernel_row(*s, ej);
        let ratio = l1_distance(&pi, &pj) / dist;
        best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
    }
    best.ok_or(LabError::DegeneratePairs)
}

/// Random `(state, e_i, e_j)` triples for [`lipschitz_estimate`].
pub fn sample_pairs<R: Rng + ?Sized>(
    space: &LatentActionSpace,
    n_states: usize,
    n: usize,
    rng: &mut R,
) -> Vec<(usize, Vec<f64>, Vec<f64>)> {
    (0..n)
        .map(|_| {
            let s = rng.random_range(0..n_states);
            (s, space.sample_uniform(rng), space.sample_uniform(rng))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StateDescriptor {
    Finite { n_states: usize },
    Continuous { dim: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialDistribution {
    /// Deterministic continuous start.
    Point { position: Vec<f64> },
    /// Deterministic finite start.
    State { index: usize },
    /// Uniform over the finite states (or catalogue items).
    Uniform,
}

/// The parts of the base MDP shared by every `M_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseMdpSpec {
    pub state: StateDescriptor,
    pub gamma: f64,
    pub r_max: f64,
    pub initial: InitialDistribution,
}

impl BaseMdpSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(LabError::Config(format!("gamma = {} must lie in [0, 1)", self.gamma)));
        }
        if !(self.r_max > 0.0) || !self.r_max.is_finite() {
            return Err(LabError::Config(format!("r_max = {} must be positive", self.r_max)));
        }
        Ok(())
    }
}

/// Step contract shared by every environment. Rewards depend on the state
/// that is entered, never on the action that led there.
pub trait Environment {
    type State: Clone + std::fmt::Debug;

    fn spec(&self) -> &BaseMdpSpec;

    fn horizon(&self) -> usize;

    fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;

    /// Samples the successor of `state` under the hidden latent of the chosen
    /// action. The flag is true when the successor is a goal (terminal) state.
    fn transition<R: Rng + ?Sized>(
        &self,
        state: &Self::State,
        latent: &[f64],
        rng: &mut R,
    ) -> (Self::State, f64, bool);

    /// Observation in `[0, 1]^observation_dim`.
    fn observe(&self, state: &Self::State) -> Vec<f64>;

    fn observation_dim(&self) -> usize;
}

#[derive(Clone, Debug)]
pub struct StepOutcome<S> {
    pub next_state: S,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

/// One episode in progress. Truncation at the horizon counts as terminal.
#[derive(Clone, Debug)]
pub struct Episode<S> {
    state: S,
    t: usize,
    done: bool,
    total_reward: f64,
}

impl<S: Clone + std::fmt::Debug> Episode<S> {
    pub fn start<E, R>(env: &E, rng: &mut R) -> Self
    where
        E: Environment<State = S>,
        R: Rng + ?Sized,
    {
        Episode {
            state: env.initial_state(rng),
            t: 0,
            done: false,
            total_reward: 0.0,
        }
    }

    pub fn from_state(state: S) -> Self {
        Episode {
            state,
            t: 0,
            done: false,
            total_reward: 0.0,
        }
    }

    pub fn state(&self) -> &S {
        &self.state
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn total_reward(&self) -> f64 {
        self.total_reward
    }

    pub fn step<E, R>(
        &mut self,
        env: &E,
        registry: &ActionRegistry,
        action_id: usize,
        rng: &mut R,
    ) -> Result<StepOutcome<S>>
    where
        E: Environment<State = S>,
        R: Rng + ?Sized,
    {
        if self.done {
            return Err(LabError::EpisodeTerminated);
        }
        let latent = registry.ensure_available(action_id)?;
        let (next, reward, goal) = env.transition(&self.state, latent, rng);
        self.t += 1;
        let truncated = !goal && self.t >= env.horizon();
        self.done = goal || truncated;
        self.total_reward += reward;
        self.state = next.clone();
        Ok(StepOutcome {
            next_state: next,
            reward,
            terminal: self.done,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn line_space() -> LatentActionSpace {
        LatentActionSpace::unit_cube(1, 1.0).unwrap()
    }

    #[test]
    fn space_rejects_degenerate_bounds() {
        assert!(LatentActionSpace::new(vec![], 1.0).is_err());
        assert!(LatentActionSpace::new(vec![Interval::new(1.0, 1.0)], 1.0).is_err());
        assert!(LatentActionSpace::new(vec![Interval::new(0.0, 1.0)], -0.1).is_err());
    }

    #[test]
    fn non_change_episode_is_a_noop() {
        let space = line_space();
        let schedule =
            ChangeSchedule::new(vec![100, 200], vec![vec![vec![0.1]], vec![vec![0.9]]]).unwrap();
        let mut registry = ActionRegistry::new();
        apply_change(&mut registry, &schedule, &space, 100).unwrap();
        let before = registry.clone();
        assert_eq!(apply_change(&mut registry, &schedule, &space, 150).unwrap(), 0);
        assert_eq!(registry, before);
    }

    #[test]
    fn change_appends_consecutive_ids() {
        let space = line_space();
        let mut registry = ActionRegistry::new();
        registry
            .add_change(&[vec![0.0], vec![0.2], vec![0.4], vec![0.6]], &space)
            .unwrap();
        let k = registry.current_k();
        let schedule = ChangeSchedule::new(
            vec![10],
            vec![vec![vec![0.1], vec![0.3], vec![0.5]]],
        )
        .unwrap();
        assert_eq!(apply_change(&mut registry, &schedule, &space, 10).unwrap(), 3);
        let ids: Vec<usize> = registry.entries()[4..].iter().map(|e| e.action_id).collect();
        assert_eq!(ids, vec![4, 5, 6]);
        assert_eq!(registry.current_k(), k + 1);
    }

    #[test]
    fn out_of_bounds_latent_leaves_registry_untouched() {
        let space = line_space();
        let mut registry = ActionRegistry::new();
        let err = registry.add_change(&[vec![0.5], vec![1.5]], &space);
        assert!(matches!(err, Err(LabError::LatentOutOfBounds(_))));
        assert!(registry.is_empty());
        assert_eq!(registry.current_k(), 0);
    }

    #[test]
    fn maze_sized_split_counts() {
        let latents: Vec<Vec<f64>> = (0..256).map(|i| vec![i as f64 / 255.0]).collect();
        let mut r = rng::stream(3, 0);
        let schedule = ChangeSchedule::equal_split(latents, 5, 2000, &mut r).unwrap();
        let space = line_space();
        let mut registry = ActionRegistry::new();
        let mut counts = Vec::new();
        for &ep in schedule.change_episodes() {
            apply_change(&mut registry, &schedule, &space, ep).unwrap();
            counts.push(registry.available_ids().len());
        }
        assert_eq!(counts, vec![52, 103, 154, 205, 256]);
        assert_eq!(schedule.change_episodes(), &[0, 2000, 4000, 6000, 8000]);
    }

    #[test]
    fn split_sizes_put_remainder_first() {
        assert_eq!(split_sizes(256, 5), vec![52, 51, 51, 51, 51]);
        assert_eq!(split_sizes(10, 5), vec![2; 5]);
        assert_eq!(split_sizes(7, 3), vec![3, 2, 2]);
    }

    #[test]
    fn covering_radius_on_a_line() {
        let space = line_space();
        let mut registry = ActionRegistry::new();
        registry.add_change(&[vec![0.0], vec![1.0]], &space).unwrap();
        let probes = space.grid(1001);
        let eps = covering_radius(&registry, &probes).unwrap();
        assert!((eps - 0.5).abs() < 1e-12);
    }

    #[test]
    fn covering_radius_in_the_square() {
        // Exhaustive minimisation over the 101x101 grid: the farthest probe
        // from {(0,0), (1,0)} is (0.5, 1.0) at L1 distance 1.5.
        let space = LatentActionSpace::unit_cube(2, 1.0).unwrap();
        let probes = space.grid(101);
        let latents = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        let mut best = (0.0, vec![]);
        for p in &probes {
            let d = latents
                .iter()
                .map(|e| l1_distance(p, e))
                .fold(f64::INFINITY, f64::min);
            if d > best.0 {
                best = (d, p.clone());
            }
        }
        assert!((best.0 - 1.5).abs() < 1e-12);
        assert!((best.1[0] - 0.5).abs() < 1e-12 && (best.1[1] - 1.0).abs() < 1e-12);
        assert!((covering_radius_of(&latents, &probes).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn covering_radius_is_zero_on_probe_set() {
        let space = LatentActionSpace::unit_cube(2, 1.0).unwrap();
        let probes = space.grid(9);
        assert_eq!(covering_radius_of(&probes, &probes).unwrap(), 0.0);
    }

    #[test]
    fn covering_radius_requires_actions() {
        let registry = ActionRegistry::new();
        assert!(matches!(
            covering_radius(&registry, &[vec![0.5]]),
            Err(LabError::NoAvailableActions)
        ));
    }

    #[test]
    fn grid_covering_radius_matches_exhaustive_reading() {
        let space = LatentActionSpace::unit_cube(2, 1.0).unwrap();
        let fine = space.grid(81);
        let coarse = space.grid(5);
        let measured = covering_radius_of(&coarse, &fine).unwrap();
        assert!((measured - space.grid_covering_radius(5)).abs() < 1e-12);
    }

    #[test]
    fn default_probes_switch_to_halton_in_high_dimensions() {
        assert_eq!(LatentActionSpace::unit_cube(2, 1.0).unwrap().default_probes().len(), 4096);
        let probes = LatentActionSpace::unit_cube(3, 1.0).unwrap().default_probes();
        assert_eq!(probes.len(), 4096);
        assert!(probes.iter().all(|p| p.iter().all(|x| (0.0..1.0).contains(x))));
    }

    struct Interp {
        p0: Vec<Vec<f64>>,
        p1: Vec<Vec<f64>>,
    }

    impl LatentKernel for Interp {
        fn n_states(&self) -> usize {
            self.p0.len()
        }
        fn kernel_row(&self, s: usize, e: &[f64]) -> Vec<f64> {
            self.p0[s]
                .iter()
                .zip(&self.p1[s])
                .map(|(a, b)| (1.0 - e[0]) * a + e[0] * b)
                .collect()
        }
    }

    #[test]
    fn lipschitz_of_linear_interpolation_is_constant() {
        // ||P1 - P0||_1 = 0.8 in the only state.
        let model = Interp {
            p0: vec![vec![0.6, 0.4, 0.0]],
            p1: vec![vec![0.2, 0.4, 0.4]],
        };
        let mut r = rng::stream(1, 0);
        for _ in 0..20 {
            let pairs = sample_pairs(&line_space(), 1, 1, &mut r);
            assert!((lipschitz_estimate(&model, &pairs).unwrap() - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn lipschitz_skips_identical_pairs() {
        let model = Interp {
            p0: vec![vec![1.0, 0.0]],
            p1: vec![vec![0.0, 1.0]],
        };
        let pairs = vec![
            (0, vec![0.3], vec![0.3]),
            (0, vec![0.1], vec![0.6]),
            (0, vec![0.7], vec![0.7]),
        ];
        assert!((lipschitz_estimate(&model, &pairs).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(
            lipschitz_estimate(&model, &[(0, vec![0.2], vec![0.2])]),
            Err(LabError::DegeneratePairs)
        ));
    }

    #[test]
    fn schedule_validation() {
        assert!(ChangeSchedule::new(vec![5, 5], vec![vec![vec![0.0]], vec![vec![0.0]]]).is_err());
        assert!(ChangeSchedule::new(vec![5], vec![vec![]]).is_err());
        assert!(ChangeSchedule::new(vec![5, 6], vec![vec![vec![0.0]]]).is_err());
    }

    #[test]
    fn schedule_json_shape() {
        let s = ChangeSchedule::new(
            vec![0, 10],
            vec![vec![vec![0.1, 0.2]], vec![vec![0.3, 0.4], vec![0.5, 0.6]]],
        )
        .unwrap();
        let text = s.to_json().unwrap();
        assert_eq!(
            text,
            r#"{"change_episodes":[0,10],"additions":[[[0.1,0.2]],[[0.3,0.4],[0.5,0.6]]]}"#
        );
        assert_eq!(ChangeSchedule::from_json(&text).unwrap(), s);
        assert!(ChangeSchedule::from_json(r#"{"change_episodes":[1,0],"additions":[[[0]],[[0]]]}"#).is_err());
    }

    #[test]
    fn registry_csv_dump() {
        let space = LatentActionSpace::unit_cube(2, 1.0).unwrap();
        let mut registry = ActionRegistry::new();
        registry.add_change(&[vec![0.5, 0.25]], &space).unwrap();
        registry.add_change(&[vec![1.0, 0.0]], &space).unwrap();
        let mut buf = Vec::new();
        registry.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "action_id,added_at_change,latent_0,latent_1\n0,1,0.5,0.25\n1,2,1,0\n"
        );
    }

    proptest! {
        #[test]
        fn availability_and_covering_are_monotone(seed in 0u64..500, sizes in proptest::collection::vec(1usize..6, 1..6)) {
            let space = LatentActionSpace::unit_cube(2, 1.0).unwrap();
            let mut r = rng::stream(seed, 0);
            let probes = space.grid(17);
            let mut registry = ActionRegistry::new();
            let mut prev_eps = f64::INFINITY;
            let mut prev_ids: Vec<usize> = Vec::new();
            for n in sizes {
                let latents: Vec<Vec<f64>> = (0..n).map(|_| space.sample_uniform(&mut r)).collect();
                registry.add_change(&latents, &space).unwrap();
                let ids = registry.available_ids();
                prop_assert!(prev_ids.iter().all(|id| ids.contains(id)));
                let eps = covering_radius(&registry, &probes).unwrap();
                prop_assert!(eps <= prev_eps);
                prev_eps = eps;
                prev_ids = ids;
            }
            for k in 0..registry.current_k() {
                let a: Vec<usize> = registry.available_at(k).map(|e| e.action_id).collect();
                let b: Vec<usize> = registry.available_at(k + 1).map(|e| e.action_id).collect();
                prop_assert!(a.iter().all(|id| b.contains(id)));
            }
        }
    }
}
