//! Exact solvers on tabular latent MDPs and empirical checks of the
//! sub-optimality bound for a fixed, growing action set.
//!
//! Values follow `v(s) = R(s) + gamma * max_e sum_s' P(s' | s, e) v(s')`.
//! The supremum over the continuous latent box is approximated on a grid
//! that always contains the box's extreme latents. Because the grid's own
//! covering radius `eps_D` bounds how far the grid optimum can fall short of
//! the continuous one, every check adds `gamma rho eps_D R_max / (1-gamma)^2`
//! to its slack, plus the solver tolerance.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::reconstruction_kls;
use crate::env::{generate_tabular, TabularLatentMdp};
use crate::error::Result;
use crate::lmdp::{covering_radius_of, ActionRegistry, ChangeSchedule};
use crate::policy::{ActionSelector, InverseDynamics};
use crate::rng::{self, streams};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_GRID: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueSolution {
    pub values: Vec<f64>,
    /// Index into the candidate latents chosen greedily in each state.
    pub policy: Vec<usize>,
    /// Sup-norm Bellman residual of `values`.
    pub residual: f64,
    pub iterations: usize,
}

/// Value iteration over a finite candidate set of latents.
pub fn value_iteration<L: AsRef<[f64]>>(env: &TabularLatentMdp, latents: &[L], tolerance: f64) -> ValueSolution {
    let n = env.n_states();
    let gamma = env.gamma();
    let rewards = env.rewards();
    // kernels[c][s * n + s']
    let kernels: Vec<Vec<f64>> = latents
        .iter()
        .map(|e| env.kernel_matrix(e.as_ref()).into_iter().flatten().collect())
        .collect();
    let backup = |v: &[f64]| -> (Vec<f64>, Vec<usize>) {
        let mut out = vec![0.0; n];
        let mut pol = vec![0usize; n];
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            for (c, k) in kernels.iter().enumerate() {
                let row = &k[s * n..(s + 1) * n];
                let q: f64 = row.iter().zip(v).map(|(p, x)| p * x).sum();
                if q > best {
                    best = q;
                    pol[s] = c;
                }
            }
            out[s] = rewards[s] + gamma * best;
        }
        (out, pol)
    };
    let sup = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);

    let mut v = vec![0.0; n];
    let mut iterations = 0;
    loop {
        let (next, _) = backup(&v);
        iterations += 1;
        let diff = sup(&next, &v);
        v = next;
        if diff <= tolerance * (1.0 - gamma) || iterations >= 1_000_000 {
            break;
        }
    }
    let (tv, policy) = backup(&v);
    ValueSolution {
        residual: sup(&tv, &v),
        values: v,
        policy,
        iterations,
    }
}

/// `gamma rho eps R_max / (1 - gamma)^2`.
pub fn theorem_bound(gamma: f64, rho: f64, epsilon: f64, r_max: f64) -> f64 {
    gamma * rho * epsilon * r_max / ((1.0 - gamma) * (1.0 - gamma))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub instance: usize,
    pub k: usize,
    pub n_actions: usize,
    pub epsilon_k: f64,
    pub gap: f64,
    pub bound: f64,
    pub slack: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
    pub grid_points_per_dim: usize,
    pub solver_tolerance: f64,
    /// Measured KL radius per change, when a learned pipeline was supplied.
    #[serde(default)]
    pub delta_k_hat: Vec<f64>,
}

impl BoundReport {
    pub fn all_hold(&self) -> bool {
        self.rows.iter().all(|r| r.holds)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("instance,k,n_actions,epsilon_k,gap,bound,slack,holds\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.instance, r.k, r.n_actions, r.epsilon_k, r.gap, r.bound, r.slack, r.holds
            );
        }
        out
    }

    pub fn summary(&self) -> BoundSummary {
        let instances = self.rows.iter().map(|r| r.instance).collect::<std::collections::BTreeSet<_>>().len();
        let max_ratio = self
            .rows
            .iter()
            .filter(|r| r.bound + r.slack > 0.0)
            .map(|r| r.gap / (r.bound + r.slack))
            .fold(0.0, f64::max);
        BoundSummary {
            instances,
            rows: self.rows.len(),
            holding: self.rows.iter().filter(|r| r.holds).count(),
            all_hold: self.all_hold(),
            max_gap_to_bound_ratio: max_ratio,
            grid_points_per_dim: self.grid_points_per_dim,
            solver_tolerance: self.solver_tolerance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub instances: usize,
    pub rows: usize,
    pub holding: usize,
    pub all_hold: bool,
    pub max_gap_to_bound_ratio: f64,
    pub grid_points_per_dim: usize,
    pub solver_tolerance: f64,
}

/// Candidate set approximating the continuous latent box: a regular grid
/// plus the instance's extreme latents.
pub fn discretization(env: &TabularLatentMdp, points_per_dim: usize) -> Vec<Vec<f64>> {
    let mut d = env.space().grid(points_per_dim);
    for e in env.extreme_latents() {
        if !d.contains(&e) {
            d.push(e);
        }
    }
    d
}

/// Slack added to every bound check: grid discretisation plus solver error.
pub fn certification_slack(env: &TabularLatentMdp, points_per_dim: usize, tolerance: f64) -> f64 {
    let eps_d = env.space().grid_covering_radius(points_per_dim);
    theorem_bound(env.gamma(), env.rho(), eps_d, env.r_max()) + 2.0 * tolerance / (1.0 - env.gamma())
}

/// Gap between the best value over the whole latent box and the best value
/// with only the first `k` scheduled additions, checked against the bound
/// for every `k`. Covering radii are read on the discretisation grid.
pub fn certify_theorem1(
    env: &TabularLatentMdp,
    schedule: &ChangeSchedule,
    points_per_dim: usize,
    instance: usize,
) -> Result<BoundReport> {
    let tol = DEFAULT_TOLERANCE;
    let d = discretization(env, points_per_dim);
    let probes = env.space().grid(points_per_dim);
    let s0 = env.start_state();
    let v_star = value_iteration(env, &d, tol).values[s0];
    let slack = certification_slack(env, points_per_dim, tol);
    let mut available: Vec<Vec<f64>> = Vec::new();
    let mut rows = Vec::with_capacity(schedule.n_changes());
    for (k0, additions) in schedule.additions().iter().enumerate() {
        available.extend(additions.iter().cloned());
        let eps = covering_radius_of(&available, &probes)?;
        let v_k = value_iteration(env, &available, tol).values[s0];
        let gap = v_star - v_k;
        let bound = theorem_bound(env.gamma(), env.rho(), eps, env.r_max());
        rows.push(BoundRow {
            instance,
            k: k0 + 1,
            n_actions: available.len(),
            epsilon_k: eps,
            gap,
            bound,
            slack,
            holds: gap <= bound + slack && gap >= -slack,
        });
    }
    Ok(BoundReport {
        rows,
        grid_points_per_dim: points_per_dim,
        solver_tolerance: tol,
        delta_k_hat: Vec::new(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Theorem1Suite {
    pub instances: usize,
    pub seed: u64,
    pub n_states: usize,
    pub n_anchors: usize,
    /// Latent dimension cycles through `1..=max_latent_dim` across instances.
    pub max_latent_dim: usize,
    pub n_changes: usize,
    pub per_change: usize,
    pub grid_points_per_dim: usize,
}

impl Default for Theorem1Suite {
    fn default() -> Self {
        Theorem1Suite {
            instances: 50,
            seed: 0,
            n_states: 10,
            n_anchors: 3,
            max_latent_dim: 2,
            n_changes: 5,
            per_change: 2,
            grid_points_per_dim: DEFAULT_GRID,
        }
    }
}

/// Seeded instances with uniformly drawn additions, certified in parallel.
pub fn run_theorem1_suite(suite: &Theorem1Suite) -> Result<BoundReport> {
    let reports: Vec<BoundReport> = (0..suite.instances)
        .into_par_iter()
        .map(|i| {
            let seed = rng::trial_seed(suite.seed, i as u64);
            let dim = 1 + i % suite.max_latent_dim.max(1);
            let env = generate_tabular(seed, suite.n_states, suite.n_anchors, dim)?;
            let mut r = rng::stream(seed, streams::SCHEDULE);
            let schedule = ChangeSchedule::uniform(env.space(), suite.n_changes, suite.per_change, 1, &mut r)?;
            certify_theorem1(&env, &schedule, suite.grid_points_per_dim, i)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundReport {
        rows: reports.into_iter().flat_map(|r| r.rows).collect(),
        grid_points_per_dim: suite.grid_points_per_dim,
        solver_tolerance: DEFAULT_TOLERANCE,
        delta_k_hat: Vec::new(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub epsilons: Vec<f64>,
    pub gaps: Vec<f64>,
    pub epsilon_non_increasing: bool,
}

/// Covering radius and value gap after each change of `schedule`.
pub fn certify_corollary1(env: &TabularLatentMdp, schedule: &ChangeSchedule, points_per_dim: usize) -> Result<TrendReport> {
    let report = certify_theorem1(env, schedule, points_per_dim, 0)?;
    let epsilons: Vec<f64> = report.rows.iter().map(|r| r.epsilon_k).collect();
    let gaps = report.rows.iter().map(|r| r.gap).collect();
    let epsilon_non_increasing = epsilons.windows(2).all(|w| w[1] <= w[0]);
    Ok(TrendReport {
        epsilons,
        gaps,
        epsilon_non_increasing,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Corollary1Sweep {
    pub seeds: usize,
    pub seed: u64,
    pub n_states: usize,
    pub n_anchors: usize,
    pub latent_dim: usize,
    pub n_changes: usize,
    pub per_change: usize,
    pub grid_points_per_dim: usize,
}

impl Default for Corollary1Sweep {
    fn default() -> Self {
        Corollary1Sweep {
            seeds: 20,
            seed: 0,
            n_states: 10,
            n_anchors: 3,
            latent_dim: 1,
            n_changes: 10,
            per_change: 2,
            grid_points_per_dim: DEFAULT_GRID,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub runs: Vec<TrendReport>,
    pub all_epsilon_non_increasing: bool,
    pub median_gap_first: f64,
    pub median_gap_last: f64,
    /// Fraction of runs whose last gap is at most their first gap.
    pub fraction_last_le_first: f64,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn run_corollary1_sweep(sweep: &Corollary1Sweep) -> Result<SweepReport> {
    let runs: Vec<TrendReport> = (0..sweep.seeds)
        .into_par_iter()
        .map(|i| {
            let seed = rng::trial_seed(sweep.seed, i as u64);
            let env = generate_tabular(seed, sweep.n_states, sweep.n_anchors, sweep.latent_dim)?;
            let mut r = rng::stream(seed, streams::SCHEDULE);
            let schedule = ChangeSchedule::uniform(env.space(), sweep.n_changes, sweep.per_change, 1, &mut r)?;
            certify_corollary1(&env, &schedule, sweep.grid_points_per_dim)
        })
        .collect::<Result<Vec<_>>>()?;
    let first: Vec<f64> = runs.iter().map(|r| r.gaps[0]).collect();
    let last: Vec<f64> = runs.iter().map(|r| *r.gaps.last().expect("at least one change")).collect();
    let le = first.iter().zip(&last).filter(|(f, l)| l <= f).count();
    Ok(SweepReport {
        all_epsilon_non_increasing: runs.iter().all(|r| r.epsilon_non_increasing),
        median_gap_first: median(&first),
        median_gap_last: median(&last),
        fraction_last_le_first: le as f64 / runs.len().max(1) as f64,
        runs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub delta_hat: f64,
    pub samples: usize,
    pub smoothed: usize,
}

/// `max sqrt(2 KL(P(.|s,a) || P(.|s,a_hat)))` over `n` sampled pairs, with
/// `a_hat` reconstructed through the encoder and selector.
pub fn measure_delta_k<R: Rng + ?Sized>(
    selector: &ActionSelector,
    inverse: &InverseDynamics,
    env: &TabularLatentMdp,
    registry: &ActionRegistry,
    n: usize,
    rng: &mut R,
) -> Result<DeltaReport> {
    let kls = reconstruction_kls(selector, inverse, env, registry, n, rng)?;
    Ok(DeltaReport {
        delta_hat: kls.kls.iter().map(|kl| (2.0 * kl).sqrt()).fold(0.0, f64::max),
        samples: kls.kls.len(),
        smoothed: kls.smoothed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::MixtureWeights;
    use crate::lmdp::Interval;

    fn absorbing(reward: f64, gamma: f64) -> TabularLatentMdp {
        let identity = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        TabularLatentMdp::new(
            vec![identity.clone(), identity],
            MixtureWeights::Affine {
                offset: vec![1.0, 0.0],
                coefficients: vec![vec![-1.0], vec![1.0]],
            },
            vec![reward, reward],
            vec![Interval::new(0.0, 1.0)],
            gamma,
            0,
            10,
        )
        .unwrap()
    }

    #[test]
    fn absorbing_state_geometric_series() {
        let env = absorbing(1.0, 0.5);
        let sol = value_iteration(&env, &[vec![0.5]], DEFAULT_TOLERANCE);
        assert!((sol.values[0] - 2.0).abs() < 1e-9);
        assert!(sol.residual <= DEFAULT_TOLERANCE);
    }

    #[test]
    fn zero_discount_gives_immediate_reward() {
        let env = generate_tabular(3, 5, 2, 1).unwrap().with_gamma(0.0).unwrap();
        let sol = value_iteration(&env, &[vec![0.0], vec![1.0]], DEFAULT_TOLERANCE);
        assert_eq!(sol.values, env.rewards().to_vec());
    }

    #[test]
    fn bound_arithmetic() {
        assert!((theorem_bound(0.9, 2.0, 0.25, 1.0) - 45.0).abs() < 1e-9);
    }

    #[test]
    fn full_discretization_has_zero_gap() {
        let env = generate_tabular(5, 6, 3, 1).unwrap();
        let d = discretization(&env, 16);
        let schedule = ChangeSchedule::new(vec![0], vec![d]).unwrap();
        let rep = certify_theorem1(&env, &schedule, 16, 0).unwrap();
        assert_eq!(rep.rows[0].epsilon_k, 0.0);
        assert!(rep.rows[0].gap.abs() <= 1e-9);
        assert!(rep.all_hold());
    }

    #[test]
    fn single_action_forever_is_constant() {
        let env = generate_tabular(6, 5, 2, 1).unwrap();
        let schedule =
            ChangeSchedule::new(vec![0, 1, 2], vec![vec![vec![0.4]], vec![vec![0.4]], vec![vec![0.4]]]).unwrap();
        let t = certify_corollary1(&env, &schedule, 32).unwrap();
        assert!(t.epsilons.windows(2).all(|w| w[0] == w[1]));
        assert!(t.gaps.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn increasing_a_reward_never_decreases_values() {
        let env = generate_tabular(8, 5, 3, 2).unwrap();
        let latents = env.space().grid(5);
        let base = value_iteration(&env, &latents, DEFAULT_TOLERANCE);
        let mut rewards = env.rewards().to_vec();
        rewards[2] += 0.5;
        let bumped_env = TabularLatentMdp::new(
            env.anchors().to_vec(),
            env.mixture().clone(),
            rewards,
            env.space().bounds().to_vec(),
            env.gamma(),
            env.start_state(),
            10,
        )
        .unwrap();
        let bumped = value_iteration(&bumped_env, &latents, DEFAULT_TOLERANCE);
        for (a, b) in base.values.iter().zip(&bumped.values) {
            assert!(b >= &(a - 1e-9));
        }
    }

    #[test]
    fn refining_the_grid_never_lowers_the_optimum() {
        let env = generate_tabular(9, 6, 3, 2).unwrap();
        let coarse = value_iteration(&env, &env.space().grid(3), DEFAULT_TOLERANCE).values[0];
        let fine = value_iteration(&env, &env.space().grid(5), DEFAULT_TOLERANCE).values[0];
        assert!(fine >= coarse - 1e-9);
    }

    #[test]
    fn csv_has_one_row_per_change() {
        let suite = Theorem1Suite {
            instances: 3,
            grid_points_per_dim: 8,
            ..Theorem1Suite::default()
        };
        let rep = run_theorem1_suite(&suite).unwrap();
        assert_eq!(rep.to_csv().lines().count(), 1 + 3 * suite.n_changes);
        assert!(rep.all_hold());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
