//! Shared helper: the finite-difference gradient audit, used by both the
//! dedicated gradient test and the acceptance suite.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swarmlink::env::{Env, EnvOptions};
use swarmlink::policy::{NetConfig, PolicyMode, PolicySet};
use swarmlink::trainer::{minibatch_pass, run_episode, SampleRef, Transition};
use swarmlink::world::ScenarioConfig;

const CLIP: f64 = 0.2;
const ENTROPY_COEFF: f64 = 0.01;
const FD_STEP: f64 = 1e-6;

/// One UAV, two users, two subcarriers: an 8-dimensional state.
fn reduced_scenario() -> ScenarioConfig {
    ScenarioConfig {
        num_uavs: 1,
        num_users: 2,
        num_subcarriers: 2,
        horizon: 8,
        seed: 41,
        ..ScenarioConfig::default()
    }
}

fn reduced_net() -> NetConfig {
    NetConfig { trunk1: 12, trunk2: 10, head_hidden: 6, log_std_init: -0.3, head_gain: 0.5 }
}

/// Collects transitions from the reduced environment and offsets the stored
/// log-probabilities so the replayed ratios land on both sides of the clip
/// band as well as inside it, for positive and negative advantages alike.
fn build_samples(policy: &PolicySet, cfg: &ScenarioConfig) -> Vec<(Transition, f64, f64)> {
    let mut env = Env::new(cfg.clone(), EnvOptions::default(), 41).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(977);
    let data = run_episode(&mut env, policy, Some(&mut rng), 0.95, true, None).unwrap();
    let offsets = [0.0, 0.3, -0.3];
    let advantages = [1.1, -0.8, 0.6, -1.3, 0.9, -0.5];
    data.transitions
        .into_iter()
        .take(6)
        .enumerate()
        .map(|(i, mut t)| {
            for lp in &mut t.logp {
                *lp += offsets[i % offsets.len()];
            }
            (t, advantages[i % advantages.len()], 0.4 * (i as f64) - 1.0)
        })
        .collect()
}

fn loss_of(policy: &PolicySet, samples: &[SampleRef]) -> f64 {
    let stats = minibatch_pass(policy, samples, CLIP, ENTROPY_COEFF, None).unwrap();
    stats.policy_loss + stats.value_loss
}

/// Writes a flat parameter vector back into the policy, actors first, in
/// the same order `flatten_all` reads them out.
fn unflatten_all(policy: &mut PolicySet, theta: &[f64]) {
    let mut cursor = 0;
    for a in &mut policy.actors {
        let n = a.param_count();
        a.unflatten(&theta[cursor..cursor + n]).unwrap();
        cursor += n;
    }
    policy.critic.unflatten(&theta[cursor..]).unwrap();
}

/// Parameter-block boundaries of the flattened policy, named so the probe
/// set provably touches every architectural piece.
fn block_ranges(policy: &PolicySet) -> Vec<(&'static str, usize, usize)> {
    let net = policy.net_cfg;
    let input = policy.base_state_dim;
    let (t1, t2, hh) = (net.trunk1, net.trunk2, net.head_hidden);
    let linear = |rows: usize, cols: usize| rows * cols + rows;
    let head = |out: usize| linear(hh, t2) + linear(out, hh);
    let table = policy.num_users * policy.num_subcarriers + 1;
    let n_sub = policy.num_subcarriers;
    let actor_blocks = [
        ("actor trunk 1", linear(t1, input)),
        ("actor trunk 2", linear(t2, t1)),
        ("assignment head", head(table)),
        ("power head", head(n_sub)),
        ("speed head", head(1)),
        ("azimuth head", head(1)),
        ("polar head", head(1)),
        ("log std", n_sub + 3),
    ];
    let critic_blocks = [
        ("critic layer 1", linear(t1, input)),
        ("critic layer 2", linear(t2, t1)),
        ("critic layer 3", linear(hh, t2)),
        ("critic output", linear(1, hh)),
    ];
    let mut out = Vec::new();
    let mut cursor = 0;
    for (name, len) in actor_blocks.into_iter().chain(critic_blocks) {
        out.push((name, cursor, cursor + len));
        cursor += len;
    }
    assert_eq!(
        cursor,
        policy.total_actor_params() + policy.critic.param_count(),
        "block arithmetic must cover the whole parameter vector"
    );
    out
}

/// Audits `probe_count` parameters (spread across every block, random fill)
/// against central finite differences of the minibatch loss. Panics when any
/// relative error reaches `rel_tol`; returns the worst error observed.
pub fn gradient_audit(probe_count: usize, rel_tol: f64) -> f64 {
    let cfg = reduced_scenario();
    assert_eq!(cfg.state_dim(), 8);
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let policy = PolicySet::new(
        PolicyMode::PerAgent,
        cfg.state_dim(),
        1,
        cfg.num_users,
        cfg.num_subcarriers,
        reduced_net(),
        &mut rng,
    );

    let owned = build_samples(&policy, &cfg);
    assert!(owned.len() >= 6, "need a full probe batch");
    let samples: Vec<SampleRef> = owned
        .iter()
        .map(|(t, adv, ret)| SampleRef { transition: t, advantage: *adv, ret: *ret })
        .collect();

    // The batch must actually exercise the clipped-surrogate regimes and the
    // masked assignment: ratios inside and outside the band, and at least
    // one chosen user so the categorical path is live.
    let eval_stats = minibatch_pass(&policy, &samples, CLIP, ENTROPY_COEFF, None).unwrap();
    assert!(eval_stats.clip_fraction > 0.0, "no sample landed outside the clip band");
    assert!(eval_stats.clip_fraction < 1.0, "no sample stayed inside the clip band");
    let some_pick = owned
        .iter()
        .any(|(t, _, _)| t.actions.iter().any(|a| a.picks.iter().any(Option::is_some)));
    assert!(some_pick, "assignment heads never chose a user");

    // Analytic gradients of exactly the probed loss.
    let mut actor_grads: Vec<_> = policy.actors.iter().map(|a| a.grads()).collect();
    let mut critic_grads = policy.critic.grads();
    minibatch_pass(&policy, &samples, CLIP, ENTROPY_COEFF, Some((&mut actor_grads, &mut critic_grads)))
        .unwrap();
    let mut analytic = Vec::new();
    for g in &actor_grads {
        g.write_flat(&mut analytic);
    }
    critic_grads.write_flat(&mut analytic);

    let theta = policy.flatten_all();
    assert_eq!(theta.len(), analytic.len());

    // Probe plan: four spread positions per named block, then random fill.
    let blocks = block_ranges(&policy);
    let mut probes = Vec::new();
    for &(_, lo, hi) in &blocks {
        let len = hi - lo;
        for frac in [0usize, 1, 2, 3] {
            probes.push(lo + (frac * (len - 1)) / 3);
        }
    }
    probes.sort_unstable();
    probes.dedup();
    let mut pick_rng = ChaCha8Rng::seed_from_u64(555);
    use rand::Rng;
    while probes.len() < probe_count {
        let i = pick_rng.random_range(0..theta.len());
        if !probes.contains(&i) {
            probes.push(i);
        }
    }

    let mut scratch = policy.clone();
    let mut worst = 0.0f64;
    for &i in &probes {
        let mut plus = theta.clone();
        plus[i] += FD_STEP;
        unflatten_all(&mut scratch, &plus);
        let lp = loss_of(&scratch, &samples);
        let mut minus = theta.clone();
        minus[i] -= FD_STEP;
        unflatten_all(&mut scratch, &minus);
        let lm = loss_of(&scratch, &samples);
        let fd = (lp - lm) / (2.0 * FD_STEP);
        let a = analytic[i];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
        let block = blocks.iter().find(|&&(_, lo, hi)| i >= lo && i < hi).unwrap().0;
        assert!(
            rel < rel_tol,
            "parameter {i} ({block}): analytic {a:.3e} vs finite difference {fd:.3e} (rel {rel:.3e})"
        );
    }
    worst
}
