use laica_core::adapt::{run_adaptation, smoothed_kl, AdaptationConfig};
use laica_core::approx::Featurizer;
use laica_core::env::{generate_tabular, TabularLatentMdp};
use laica_core::lmdp::{ActionRegistry, LatentKernel};
use laica_core::policy::{ActionSelector, Critic, DecisionPolicy, InverseDynamics, LogStd, PolicyBundle};
use laica_core::rng::{self, streams};
use laica_core::verify::measure_delta_k;

fn bundle(n_states: usize, n_actions: usize, seed: u64) -> PolicyBundle {
    let mut r = rng::stream(seed, streams::INIT);
    let feat = Featurizer::Identity { dim: n_states };
    PolicyBundle {
        beta: DecisionPolicy::new(feat.clone(), 2, &[], LogStd::Fixed(0.0), &mut r).unwrap(),
        selector: ActionSelector::new(2, n_actions, 1.0, &mut r),
        inverse: InverseDynamics::new(feat.clone(), 2, &[64], &mut r),
        critic: Critic::new(n_states, &[], &mut r),
    }
}

#[test]
fn delta_is_zero_when_all_actions_share_a_kernel() {
    let env = generate_tabular(1, 5, 3, 1).unwrap();
    let mut reg = ActionRegistry::new();
    reg.add_change(&[vec![0.4], vec![0.4], vec![0.4]], env.space()).unwrap();
    let b = bundle(5, 3, 1);
    let mut r = rng::stream(1, streams::PROBES);
    let d = measure_delta_k(&b.selector, &b.inverse, &env, &reg, 300, &mut r).unwrap();
    assert_eq!(d.delta_hat, 0.0);
    assert_eq!(d.samples, 300);
}

/// Largest `sqrt(2 KL)` between the kernels of any two available actions.
fn worst_pairwise_divergence(env: &TabularLatentMdp, reg: &ActionRegistry) -> f64 {
    let ids = reg.available_ids();
    let mut worst: f64 = 0.0;
    for s in 0..env.n_states() {
        for &a in &ids {
            for &b in &ids {
                let p = env.kernel_row(s, reg.latent(a).unwrap());
                let q = env.kernel_row(s, reg.latent(b).unwrap());
                worst = worst.max((2.0 * smoothed_kl(&p, &q).0).sqrt());
            }
        }
    }
    worst
}

#[test]
fn delta_is_bounded_by_worst_pairwise_divergence() {
    let adaptation = AdaptationConfig {
        lambda: 1e-2,
        iterations: 300,
        ..AdaptationConfig::default()
    };
    for seed in 0..5u64 {
        let env = generate_tabular(200 + seed, 5, 3, 1).unwrap().with_horizon(20);
        let mut reg = ActionRegistry::new();
        reg.add_change(&env.extreme_latents(), env.space()).unwrap();
        reg.add_change(&[vec![0.5]], env.space()).unwrap();
        let bound = worst_pairwise_divergence(&env, &reg);
        let mut b = bundle(5, reg.len(), seed);
        let mut probe = rng::stream(seed, streams::PROBES);
        let pre = measure_delta_k(&b.selector, &b.inverse, &env, &reg, 300, &mut probe).unwrap();
        let mut adapt = rng::stream(seed, streams::ADAPT);
        run_adaptation(&mut b, &env, &reg, &adaptation, &mut adapt).unwrap();
        let mut probe = rng::stream(seed, streams::PROBES);
        let post = measure_delta_k(&b.selector, &b.inverse, &env, &reg, 300, &mut probe).unwrap();
        assert!(bound > 0.0);
        assert!(pre.delta_hat <= bound + 1e-12, "seed {seed}: {} > {bound}", pre.delta_hat);
        assert!(post.delta_hat <= bound + 1e-12, "seed {seed}: {} > {bound}", post.delta_hat);
    }
}
