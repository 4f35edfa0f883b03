//! Continuous open-arena maze driven by eight on/off actuators.
//!
//! The agent lives in the unit square. Each of the 256 actions switches a
//! subset of eight equally spaced actuators on; the executed displacement is
//! the vector sum of the active actuators, which is also the hidden latent of
//! the action.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::lmdp::{
    BaseMdpSpec, Environment, InitialDistribution, Interval, LatentActionSpace, StateDescriptor,
};

pub const N_ACTUATORS: usize = 8;
pub const N_MAZE_ACTIONS: usize = 1 << N_ACTUATORS;

/// Axis-aligned wall segment. Moves whose straight path crosses a wall are
/// blocked and leave the agent in place.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wall {
    pub from: [f64; 2],
    pub to: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MazeConfig {
    pub step_scale: f64,
    pub noise_prob: f64,
    pub horizon: usize,
    pub step_penalty: f64,
    pub goal_reward: f64,
    pub goal_center: [f64; 2],
    pub goal_radius: f64,
    pub start: [f64; 2],
    pub gamma: f64,
    pub walls: Vec<Wall>,
}

impl Default for MazeConfig {
    fn default() -> Self {
        MazeConfig {
            step_scale: 0.05,
            noise_prob: 0.10,
            horizon: 150,
            step_penalty: -1.0,
            goal_reward: 100.0,
            goal_center: [0.95, 0.95],
            goal_radius: 0.05,
            start: [0.05, 0.05],
            gamma: 0.99,
            walls: Vec::new(),
        }
    }
}

impl MazeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LabError::Config(format!("maze: {msg}")));
        if !(self.step_scale > 0.0) {
            return bad(format!("step_scale = {} must be positive", self.step_scale));
        }
        if !(0.0..=1.0).contains(&self.noise_prob) {
            return bad(format!("noise_prob = {} must lie in [0, 1]", self.noise_prob));
        }
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        if !(self.step_penalty < 0.0) {
            return bad(format!("step_penalty = {} must be negative", self.step_penalty));
        }
        if !(self.goal_reward > 0.0) {
            return bad(format!("goal_reward = {} must be positive", self.goal_reward));
        }
        if !(self.goal_radius > 0.0) {
            return bad(format!("goal_radius = {} must be positive", self.goal_radius));
        }
        let in_unit = |p: &[f64; 2]| p.iter().all(|x| (0.0..=1.0).contains(x));
        if !in_unit(&self.start) || !in_unit(&self.goal_center) {
            return bad("start and goal_center must lie in the unit square".into());
        }
        for w in &self.walls {
            if w.from[0] != w.to[0] && w.from[1] != w.to[1] {
                return bad(format!("wall {:?} -> {:?} is not axis-aligned", w.from, w.to));
            }
        }
        Ok(())
    }
}

/// Net displacement of the actuator combination `bitmask`.
pub fn maze_latent(bitmask: u8, step_scale: f64) -> [f64; 2] {
    let mut out = [0.0, 0.0];
    for i in 0..N_ACTUATORS {
        if bitmask & (1 << i) != 0 {
            let angle = 2.0 * PI * i as f64 / N_ACTUATORS as f64;
            out[0] += angle.cos();
            out[1] += angle.sin();
        }
    }
    [step_scale * out[0], step_scale * out[1]]
}

#[derive(Clone, Debug)]
pub struct MazeEnv {
    config: MazeConfig,
    spec: BaseMdpSpec,
}

impl MazeEnv {
    pub fn new(config: MazeConfig) -> Result<Self> {
        config.validate()?;
        let spec = BaseMdpSpec {
            state: StateDescriptor::Continuous { dim: 2 },
            gamma: config.gamma,
            r_max: config.goal_reward.abs().max(config.step_penalty.abs()),
            initial: InitialDistribution::Point {
                position: config.start.to_vec(),
            },
        };
        spec.validate()?;
        Ok(MazeEnv { config, spec })
    }

    pub fn config(&self) -> &MazeConfig {
        &self.config
    }

    /// Latents of all 256 actuator combinations, indexed by bitmask.
    pub fn action_latents(&self) -> Vec<Vec<f64>> {
        (0..N_MAZE_ACTIONS)
            .map(|m| maze_latent(m as u8, self.config.step_scale).to_vec())
            .collect()
    }

    /// Box containing every actuator sum. Translation dynamics are
    /// 1-Lipschitz in the displacement.
    pub fn latent_space(&self) -> LatentActionSpace {
        let reach = self.config.step_scale * (1.0 + 2.0 * (PI / 4.0).cos());
        LatentActionSpace::new(vec![Interval::new(-reach, reach); 2], 1.0)
            .expect("positive step scale gives a valid box")
    }

    pub fn in_goal(&self, p: &[f64; 2]) -> bool {
        let dx = p[0] - self.config.goal_center[0];
        let dy = p[1] - self.config.goal_center[1];
        (dx * dx + dy * dy).sqrt() <= self.config.goal_radius
    }

    fn blocked(&self, from: &[f64; 2], to: &[f64; 2]) -> bool {
        self.config
            .walls
            .iter()
            .any(|w| segments_intersect(from, to, &w.from, &w.to))
    }

    /// Moves by `displacement` (already including any noise), clamps to the
    /// unit square and applies walls.
    pub fn displace(&self, state: &[f64; 2], displacement: [f64; 2]) -> [f64; 2] {
        let target = [
            (state[0] + displacement[0]).clamp(0.0, 1.0),
            (state[1] + displacement[1]).clamp(0.0, 1.0),
        ];
        if self.blocked(state, &target) {
            *state
        } else {
            target
        }
    }
}

fn orientation(a: &[f64; 2], b: &[f64; 2], c: &[f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: &[f64; 2], b: &[f64; 2], p: &[f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(p1: &[f64; 2], p2: &[f64; 2], q1: &[f64; 2], q2: &[f64; 2]) -> bool {
    let d1 = orientation(q1, q2, p1);
    let d2 = orientation(q1, q2, p2);
    let d3 = orientation(p1, p2, q1);
    let d4 = orientation(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

impl Environment for MazeEnv {
    type State = [f64; 2];

    fn spec(&self) -> &BaseMdpSpec {
        &self.spec
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn initial_state<R: Rng + ?Sized>(&self, _rng: &mut R) -> [f64; 2] {
        self.config.start
    }

    fn transition<R: Rng + ?Sized>(
        &self,
        state: &[f64; 2],
        latent: &[f64],
        rng: &mut R,
    ) -> ([f64; 2], f64, bool) {
        let mut d = [latent[0], latent[1]];
        if self.config.noise_prob > 0.0 && rng.random::<f64>() < self.config.noise_prob {
            let s = self.config.step_scale;
            d[0] += rng.random_range(-s..=s);
            d[1] += rng.random_range(-s..=s);
        }
        let next = self.displace(state, d);
        if self.in_goal(&next) {
            (next, self.config.goal_reward, true)
        } else {
            (next, self.config.step_penalty, false)
        }
    }

    fn observe(&self, state: &[f64; 2]) -> Vec<f64> {
        state.to_vec()
    }

    fn observation_dim(&self) -> usize {
        2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmdp::{l1_distance, ActionRegistry, Episode};
    use crate::rng;
    use proptest::prelude::*;

    fn quiet() -> MazeEnv {
        MazeEnv::new(MazeConfig {
            noise_prob: 0.0,
            ..MazeConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn latent_of_empty_and_antipodal_masks_is_zero() {
        assert_eq!(maze_latent(0, 0.05), [0.0, 0.0]);
        let l = maze_latent(0b0001_0001, 0.05);
        assert!(l[0].abs() < 1e-15 && l[1].abs() < 1e-15);
    }

    #[test]
    fn actuator_two_points_up() {
        let l = maze_latent(0b0000_0100, 0.05);
        assert!(l[0].abs() < 1e-12);
        assert!((l[1] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn all_latents_lie_in_the_latent_box() {
        let env = quiet();
        let space = env.latent_space();
        assert!(env.action_latents().iter().all(|e| space.contains(e)));
    }

    #[test]
    fn null_action_stays_put() {
        let env = quiet();
        let mut r = rng::stream(0, 0);
        let (next, reward, terminal) = env.transition(&[0.5, 0.5], &[0.0, 0.0], &mut r);
        assert_eq!(next, [0.5, 0.5]);
        assert_eq!(reward, -1.0);
        assert!(!terminal);
    }

    #[test]
    fn entering_the_goal_terminates_with_reward() {
        let env = quiet();
        let mut r = rng::stream(0, 0);
        let (next, reward, terminal) = env.transition(&[0.90, 0.95], &[0.02, 0.0], &mut r);
        assert!(env.in_goal(&next));
        assert_eq!(reward, 100.0);
        assert!(terminal);
    }

    #[test]
    fn boundary_clamps() {
        let env = quiet();
        let mut r = rng::stream(0, 0);
        let (next, _, _) = env.transition(&[0.99, 0.5], &[0.05, 0.0], &mut r);
        assert_eq!(next, [1.0, 0.5]);
    }

    #[test]
    fn horizon_truncates_and_unavailable_actions_fault() {
        let env = MazeEnv::new(MazeConfig {
            noise_prob: 0.0,
            horizon: 3,
            ..MazeConfig::default()
        })
        .unwrap();
        let mut registry = ActionRegistry::new();
        registry
            .add_change(&[vec![0.0, 0.0]], &env.latent_space())
            .unwrap();
        let mut r = rng::stream(0, 0);
        let mut ep = Episode::start(&env, &mut r);
        assert!(matches!(
            ep.step(&env, &registry, 1, &mut r),
            Err(LabError::ActionUnavailable(1))
        ));
        for t in 0..3 {
            let out = ep.step(&env, &registry, 0, &mut r).unwrap();
            assert_eq!(out.terminal, t == 2);
            assert_eq!(out.truncated, t == 2);
        }
        assert!(matches!(
            ep.step(&env, &registry, 0, &mut r),
            Err(LabError::EpisodeTerminated)
        ));
    }

    #[test]
    fn walls_block_crossing_moves() {
        let env = MazeEnv::new(MazeConfig {
            noise_prob: 0.0,
            walls: vec![Wall {
                from: [0.5, 0.0],
                to: [0.5, 0.6],
            }],
            ..MazeConfig::default()
        })
        .unwrap();
        assert_eq!(env.displace(&[0.48, 0.3], [0.05, 0.0]), [0.48, 0.3]);
        assert_eq!(env.displace(&[0.48, 0.7], [0.05, 0.0]), [0.53, 0.7]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            MazeConfig { step_scale: 0.0, ..MazeConfig::default() },
            MazeConfig { noise_prob: 1.5, ..MazeConfig::default() },
            MazeConfig { step_penalty: 1.0, ..MazeConfig::default() },
            MazeConfig { horizon: 0, ..MazeConfig::default() },
        ] {
            assert!(MazeEnv::new(cfg).is_err());
        }
    }

    proptest! {
        #[test]
        fn positions_stay_in_the_unit_square(seed in 0u64..1000, masks in proptest::collection::vec(any::<u8>(), 1..200)) {
            let env = MazeEnv::new(MazeConfig::default()).unwrap();
            let mut r = rng::stream(seed, 0);
            let mut s = env.config().start;
            for m in masks {
                let l = maze_latent(m, env.config().step_scale);
                s = env.transition(&s, &l, &mut r).0;
                prop_assert!(s.iter().all(|x| (0.0..=1.0).contains(x)));
            }
        }

        #[test]
        fn quiet_dynamics_are_latent_consistent_and_lipschitz(x in 0.0f64..=1.0, y in 0.0f64..=1.0, a in any::<u8>(), b in any::<u8>()) {
            let env = quiet();
            let mut r = rng::stream(0, 0);
            let (ea, eb) = (maze_latent(a, 0.05), maze_latent(b, 0.05));
            let na = env.transition(&[x, y], &ea, &mut r).0;
            let nb = env.transition(&[x, y], &eb, &mut r).0;
            prop_assert!(l1_distance(&na, &nb) <= l1_distance(&ea, &eb) + 1e-12);
            let again = env.transition(&[x, y], &ea, &mut r).0;
            prop_assert_eq!(na, again);
        }
    }
}
