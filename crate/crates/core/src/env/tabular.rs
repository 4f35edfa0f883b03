//! Finite-state latent MDPs with exact kernels and a known Lipschitz constant.
//!
//! The kernel for latent `e` is a mixture of anchor kernels,
//! `P(.|s, e) = sum_m w_m(e) P_m(.|s)`, where the weight map sends the latent
//! box onto the probability simplex. Because the weight map is Lipschitz with
//! a computable constant, so is the kernel: for a zero-sum weight change `dw`
//! the mixture moves by at most `max_{m,m'} ||P_m - P_m'||_1 * ||dw||_1 / 2`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::lmdp::{
    l1_distance, BaseMdpSpec, Environment, InitialDistribution, Interval, LatentActionSpace,
    LatentKernel, StateDescriptor,
};
use crate::rng;

const ROW_TOLERANCE: f64 = 1e-12;

/// Map from a latent to simplex weights over the anchors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MixtureWeights {
    /// `w(e) = offset + coefficients * e`, with `coefficients[m][j]`.
    Affine {
        offset: Vec<f64>,
        coefficients: Vec<Vec<f64>>,
    },
    /// Scalar latent; piecewise-linear interpolation between consecutive
    /// anchors placed at `knots`.
    Hat { knots: Vec<f64> },
}

impl MixtureWeights {
    pub fn n_anchors(&self) -> usize {
        match self {
            MixtureWeights::Affine { offset, .. } => offset.len(),
            MixtureWeights::Hat { knots } => knots.len(),
        }
    }

    pub fn weights(&self, latent: &[f64]) -> Vec<f64> {
        match self {
            MixtureWeights::Affine {
                offset,
                coefficients,
            } => offset
                .iter()
                .zip(coefficients)
                .map(|(c, row)| c + row.iter().zip(latent).map(|(a, e)| a * e).sum::<f64>())
                .collect(),
            MixtureWeights::Hat { knots } => {
                let e = latent[0].clamp(knots[0], knots[knots.len() - 1]);
                let mut w = vec![0.0; knots.len()];
                let i = knots
                    .windows(2)
                    .position(|k| e <= k[1])
                    .unwrap_or(knots.len() - 2);
                let h = knots[i + 1] - knots[i];
                let t = (e - knots[i]) / h;
                w[i] = 1.0 - t;
                w[i + 1] = t;
                w
            }
        }
    }

    /// Operator bound of the weight map from latent L1 to weight L1.
    pub fn l1_operator_bound(&self) -> f64 {
        match self {
            MixtureWeights::Affine { coefficients, .. } => {
                let dim = coefficients.first().map_or(0, Vec::len);
                (0..dim)
                    .map(|j| coefficients.iter().map(|row| row[j].abs()).sum::<f64>())
                    .fold(0.0, f64::max)
            }
            MixtureWeights::Hat { knots } => knots
                .windows(2)
                .map(|k| 2.0 / (k[1] - k[0]))
                .fold(0.0, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularLatentMdp {
    n_states: usize,
    /// `anchors[m][s][s']`.
    anchors: Vec<Vec<Vec<f64>>>,
    weights: MixtureWeights,
    rewards: Vec<f64>,
    space: LatentActionSpace,
    spec: BaseMdpSpec,
    start_state: usize,
    horizon: usize,
}

impl TabularLatentMdp {
    /// Validates the anchors and weight map, and derives `rho` from them.
    pub fn new(
        anchors: Vec<Vec<Vec<f64>>>,
        weights: MixtureWeights,
        rewards: Vec<f64>,
        bounds: Vec<Interval>,
        gamma: f64,
        start_state: usize,
        horizon: usize,
    ) -> Result<Self> {
        let n_states = rewards.len();
        if n_states < 2 {
            return Err(LabError::Config("tabular MDP needs at least 2 states".into()));
        }
        if anchors.len() < 2 || anchors.len() != weights.n_anchors() {
            return Err(LabError::Config(format!(
                "{} anchors but the weight map expects {}",
                anchors.len(),
                weights.n_anchors()
            )));
        }
        for (m, kernel) in anchors.iter().enumerate() {
            if kernel.len() != n_states || kernel.iter().any(|row| row.len() != n_states) {
                return Err(LabError::Config(format!("anchor {m} is not {n_states}x{n_states}")));
            }
            for (s, row) in kernel.iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if row.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > ROW_TOLERANCE {
                    return Err(LabError::Config(format!(
                        "anchor {m} row {s} is not a distribution (sum {sum})"
                    )));
                }
            }
        }
        if start_state >= n_states {
            return Err(LabError::Config(format!("start state {start_state} out of range")));
        }
        let r_max = rewards.iter().fold(0.0f64, |a, r| a.max(r.abs())).max(f64::MIN_POSITIVE);
        let spec = BaseMdpSpec {
            state: StateDescriptor::Finite { n_states },
            gamma,
            r_max,
            initial: InitialDistribution::State { index: start_state },
        };
        spec.validate()?;
        let mut max_gap: f64 = 0.0;
        for s in 0..n_states {
            for a in &anchors {
                for b in &anchors {
                    max_gap = max_gap.max(l1_distance(&a[s], &b[s]));
                }
            }
        }
        let rho = max_gap * weights.l1_operator_bound() / 2.0;
        let space = LatentActionSpace::new(bounds, rho)?;
        if let MixtureWeights::Hat { knots } = &weights {
            if space.dim() != 1 || knots.windows(2).any(|k| k[0] >= k[1]) {
                return Err(LabError::Config("hat weights need a scalar latent and increasing knots".into()));
            }
        }
        let mdp = TabularLatentMdp {
            n_states,
            anchors,
            weights,
            rewards,
            space,
            spec,
            start_state,
            horizon: horizon.max(1),
        };
        for corner in mdp.space.grid(2) {
            let w = mdp.weights.weights(&corner);
            let total: f64 = w.iter().sum();
            if w.iter().any(|&x| x < -ROW_TOLERANCE) || (total - 1.0).abs() > 1e-9 {
                return Err(LabError::Config(format!(
                    "weight map leaves the simplex at latent {corner:?}"
                )));
            }
        }
        Ok(mdp)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn anchors(&self) -> &[Vec<Vec<f64>>] {
        &self.anchors
    }

    pub fn mixture(&self) -> &MixtureWeights {
        &self.weights
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn gamma(&self) -> f64 {
        self.spec.gamma
    }

    pub fn r_max(&self) -> f64 {
        self.spec.r_max
    }

    pub fn rho(&self) -> f64 {
        self.space.rho()
    }

    pub fn space(&self) -> &LatentActionSpace {
        &self.space
    }

    pub fn start_state(&self) -> usize {
        self.start_state
    }

    /// Full `S x S` kernel for one latent.
    pub fn kernel_matrix(&self, latent: &[f64]) -> Vec<Vec<f64>> {
        (0..self.n_states).map(|s| self.kernel_row(s, latent)).collect()
    }

    /// Latent points at which the kernel is a pure anchor or where the weight
    /// map changes slope. Optimal values over the latent box are attained on
    /// this set because every Bellman backup is piecewise affine in `e`.
    pub fn extreme_latents(&self) -> Vec<Vec<f64>> {
        match &self.weights {
            MixtureWeights::Affine { .. } => self.space.grid(2),
            MixtureWeights::Hat { knots } => knots.iter().map(|&k| vec![k]).collect(),
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        self.spec.gamma = gamma;
        self.spec.validate()?;
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon.max(1);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: TabularLatentMdp = serde_json::from_str(text)?;
        // Re-run validation so a hand-edited file cannot smuggle in a bad rho.
        Self::new(
            raw.anchors,
            raw.weights,
            raw.rewards,
            raw.space.bounds().to_vec(),
            raw.spec.gamma,
            raw.start_state,
            raw.horizon,
        )
    }
}

impl LatentKernel for TabularLatentMdp {
    fn n_states(&self) -> usize {
        self.n_states
    }

    fn kernel_row(&self, state: usize, latent: &[f64]) -> Vec<f64> {
        let w = self.weights.weights(latent);
        let mut row = vec![0.0; self.n_states];
        for (wm, anchor) in w.iter().zip(&self.anchors) {
            if *wm == 0.0 {
                continue;
            }
            for (r, p) in row.iter_mut().zip(&anchor[state]) {
                *r += wm * p;
            }
        }
        row
    }
}

fn dirichlet_row<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    let mut row: Vec<f64> = draws.iter().map(|x| x / total).collect();
    // absorb rounding so rows sum to one within the validation tolerance
    let drift = 1.0 - row.iter().sum::<f64>();
    row[0] += drift;
    row
}

/// Random instance: Dirichlet(1, ..., 1) anchor rows, latent box `[0,1]^d`,
/// rewards uniform in `[-1, 1]`, discount 0.9, start state 0.
///
/// The weight map is `w(e) = (1 - sum_j e_j / d) v_0 + sum_j (e_j / d) v_{1 + j mod (M-1)}`
/// over simplex vertices `v_m`, which stays on the simplex on the whole box
/// and reduces to `(1 - e, e)` for two anchors and a scalar latent.
pub fn generate_tabular(
    seed: u64,
    n_states: usize,
    n_anchors: usize,
    latent_dim: usize,
) -> Result<TabularLatentMdp> {
    if n_states < 2 || n_anchors < 2 || latent_dim == 0 {
        return Err(LabError::Config(format!(
            "generate_tabular needs n_states >= 2, n_anchors >= 2, latent_dim >= 1 (got {n_states}, {n_anchors}, {latent_dim})"
        )));
    }
    let mut r = rng::stream(seed, 0);
    let anchors: Vec<Vec<Vec<f64>>> = (0..n_anchors)
        .map(|_| (0..n_states).map(|_| dirichlet_row(n_states, &mut r)).collect())
        .collect();
    let rewards: Vec<f64> = (0..n_states).map(|_| r.random_range(-1.0..=1.0)).collect();
    let d = latent_dim as f64;
    let mut offset = vec![0.0; n_anchors];
    offset[0] = 1.0;
    let mut coefficients = vec![vec![0.0; latent_dim]; n_anchors];
    for j in 0..latent_dim {
        coefficients[0][j] -= 1.0 / d;
        coefficients[1 + j % (n_anchors - 1)][j] += 1.0 / d;
    }
    TabularLatentMdp::new(
        anchors,
        MixtureWeights::Affine {
            offset,
            coefficients,
        },
        rewards,
        vec![Interval::new(0.0, 1.0); latent_dim],
        0.9,
        0,
        100,
    )
}

/// Instance whose actions are identifiable from a single transition: `n`
/// deterministic anchors, each sending every state to a distinct successor
/// (a random bijection per state), on a scalar latent with knots at
/// `m / (n - 1)`. The anchor latents are the natural action set.
pub fn generate_injective(seed: u64, n_states: usize) -> Result<TabularLatentMdp> {
    if n_states < 2 {
        return Err(LabError::Config("injective instance needs at least 2 states".into()));
    }
    let mut r = rng::stream(seed, 0);
    let mut anchors = vec![vec![vec![0.0; n_states]; n_states]; n_states];
    for s in 0..n_states {
        let mut targets: Vec<usize> = (0..n_states).collect();
        targets.shuffle(&mut r);
        for (m, &t) in targets.iter().enumerate() {
            anchors[m][s][t] = 1.0;
        }
    }
    let rewards: Vec<f64> = (0..n_states).map(|_| r.random_range(-1.0..=1.0)).collect();
    let knots: Vec<f64> = (0..n_states)
        .map(|m| m as f64 / (n_states - 1) as f64)
        .collect();
    TabularLatentMdp::new(
        anchors,
        MixtureWeights::Hat { knots },
        rewards,
        vec![Interval::new(0.0, 1.0)],
        0.9,
        0,
        50,
    )
}

impl Environment for TabularLatentMdp {
    type State = usize;

    fn spec(&self) -> &BaseMdpSpec {
        &self.spec
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn initial_state<R: Rng + ?Sized>(&self, _rng: &mut R) -> usize {
        self.start_state
    }

    fn transition<R: Rng + ?Sized>(&self, state: &usize, latent: &[f64], rng: &mut R) -> (usize, f64, bool) {
        let row = self.kernel_row(*state, latent);
        let next = sample_categorical(&row, rng);
        (next, self.rewards[next], false)
    }

    fn observe(&self, state: &usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_states];
        v[*state] = 1.0;
        v
    }

    fn observation_dim(&self) -> usize {
        self.n_states
    }
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmdp::{lipschitz_estimate, sample_pairs};

    #[test]
    fn two_anchor_rho_is_the_anchor_distance() {
        let mdp = generate_tabular(11, 4, 2, 1).unwrap();
        let expected = (0..4)
            .map(|s| l1_distance(&mdp.anchors()[0][s], &mdp.anchors()[1][s]))
            .fold(0.0, f64::max);
        assert!((mdp.rho() - expected).abs() < 1e-15);
        assert_eq!(mdp.mixture().weights(&[0.25]), vec![0.75, 0.25]);
    }

    #[test]
    fn anchor_vertex_reproduces_anchor() {
        let mdp = generate_tabular(5, 3, 3, 2).unwrap();
        for s in 0..3 {
            assert_eq!(mdp.kernel_row(s, &[0.0, 0.0]), mdp.anchors()[0][s]);
        }
        let inj = generate_injective(2, 5).unwrap();
        for (m, knot) in [0.0, 0.25, 0.5, 0.75, 1.0].iter().enumerate() {
            for s in 0..5 {
                assert_eq!(inj.kernel_row(s, &[*knot]), inj.anchors()[m][s]);
            }
        }
    }

    #[test]
    fn rows_are_distributions() {
        let mdp = generate_tabular(9, 6, 4, 2).unwrap();
        let mut r = rng::stream(1, 1);
        for _ in 0..200 {
            let e = mdp.space().sample_uniform(&mut r);
            for s in 0..6 {
                let row = mdp.kernel_row(s, &e);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&p| p >= 0.0));
            }
        }
    }

    #[test]
    fn stored_rho_dominates_sampled_ratios() {
        for seed in 0..5 {
            let mdp = generate_tabular(seed, 5, 3, 2).unwrap();
            let mut r = rng::stream(seed, 9);
            let pairs = sample_pairs(mdp.space(), 5, 10_000, &mut r);
            let est = lipschitz_estimate(&mdp, &pairs).unwrap();
            assert!(est <= mdp.rho() * (1.0 + 1e-9), "{est} > {}", mdp.rho());
        }
        let inj = generate_injective(3, 5).unwrap();
        let mut r = rng::stream(3, 9);
        let pairs = sample_pairs(inj.space(), 5, 10_000, &mut r);
        assert!(lipschitz_estimate(&inj, &pairs).unwrap() <= inj.rho() * (1.0 + 1e-9));
    }

    #[test]
    fn generators_are_seed_deterministic() {
        assert_eq!(generate_tabular(4, 5, 3, 2).unwrap(), generate_tabular(4, 5, 3, 2).unwrap());
        assert_ne!(generate_tabular(4, 5, 3, 2).unwrap(), generate_tabular(5, 5, 3, 2).unwrap());
        assert_eq!(generate_injective(4, 5).unwrap(), generate_injective(4, 5).unwrap());
    }

    #[test]
    fn json_round_trip_revalidates() {
        let mdp = generate_tabular(1, 3, 2, 1).unwrap();
        let text = mdp.to_json().unwrap();
        assert_eq!(TabularLatentMdp::from_json(&text).unwrap(), mdp);
        let broken = text.replacen("\"rewards\"", "\"rewardz\"", 1);
        assert!(TabularLatentMdp::from_json(&broken).is_err());
    }

    #[test]
    fn monte_carlo_transitions_match_kernel() {
        // 3 states, fixed seed, 10^5 steps per state.
        let mdp = generate_tabular(21, 3, 2, 1).unwrap();
        let e = [0.3];
        let mut r = rng::stream(21, 5);
        for s in 0..3 {
            let mut counts = [0usize; 3];
            for _ in 0..100_000 {
                counts[mdp.transition(&s, &e, &mut r).0] += 1;
            }
            let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / 1e5).collect();
            assert!(l1_distance(&freq, &mdp.kernel_row(s, &e)) < 0.01);
        }
    }

    #[test]
    fn zero_weight_endpoint_equals_base_kernel() {
        let mdp = generate_tabular(8, 4, 2, 1).unwrap();
        assert_eq!(mdp.kernel_matrix(&[0.0]), mdp.anchors()[0]);
    }

    #[test]
    fn rejects_bad_anchor_rows() {
        let anchors = vec![vec![vec![0.5, 0.4], vec![0.5, 0.5]], vec![vec![1.0, 0.0], vec![0.0, 1.0]]];
        let weights = MixtureWeights::Affine {
            offset: vec![1.0, 0.0],
            coefficients: vec![vec![-1.0], vec![1.0]],
        };
        assert!(TabularLatentMdp::new(anchors, weights, vec![0.0, 1.0], vec![Interval::new(0.0, 1.0)], 0.9, 0, 10).is_err());
    }
}
