//! Actor and critic networks with analytic gradients, hybrid-distribution
//! sampling and log-probabilities, and portable checkpoints.
//!
//! Each actor is a shared two-layer trunk feeding five branches: assignment
//! logits (one per (user, subcarrier) pair plus a NONE option), power means,
//! and scalar speed, azimuth, and polar means. Continuous branches squash a
//! tanh mean; exploration noise comes from state-independent learnable log
//! standard deviations. The critic is a separate four-layer value network.

pub mod nn;

use crate::env::HybridAction;
use crate::masking::{self, PickEval};
use crate::{Error, Result};
use nn::{clip_grad_norm, relu, relu_backward, Linear, LinearGrad};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Learnable log standard deviations are clamped to this band after every
/// optimizer step.
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;

/// Network architecture and initialization knobs. The trunk and head widths
/// reproduce the reference sizes by default; tests shrink them.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub trunk1: usize,
    pub trunk2: usize,
    pub head_hidden: usize,
    /// Initial value of every learnable log standard deviation.
    pub log_std_init: f64,
    /// Orthogonal-init gain of each branch's output layer (small, so initial
    /// outputs are near zero and the policy starts close to uniform).
    pub head_gain: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { trunk1: 256, trunk2: 128, head_hidden: 64, log_std_init: 0.0, head_gain: 0.01 }
    }
}

// ---------------------------------------------------------------------------
// Gaussian helpers (pre-squash space)
// ---------------------------------------------------------------------------

pub fn gaussian_logp(x: f64, mean: f64, log_std: f64) -> f64 {
    let z = (x - mean) / log_std.exp();
    -0.5 * z * z - log_std - HALF_LN_TWO_PI
}

pub fn gaussian_entropy(log_std: f64) -> f64 {
    0.5 + HALF_LN_TWO_PI + log_std
}

// ---------------------------------------------------------------------------
// Heads
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
struct Head {
    hidden: Linear,
    out: Linear,
}

#[derive(Clone, Debug)]
pub struct HeadCache {
    h_pre: Vec<f64>,
    h_act: Vec<f64>,
    out: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct HeadGrad {
    hidden: LinearGrad,
    out: LinearGrad,
}

impl Head {
    fn new<R: Rng + ?Sized>(
        in_dim: usize,
        hidden_dim: usize,
        out_dim: usize,
        out_gain: f64,
        rng: &mut R,
    ) -> Self {
        Head {
            hidden: Linear::orthogonal(hidden_dim, in_dim, std::f64::consts::SQRT_2, rng),
            out: Linear::orthogonal(out_dim, hidden_dim, out_gain, rng),
        }
    }

    fn forward(&self, x: &[f64]) -> HeadCache {
        let mut h_pre = vec![0.0; self.hidden.rows];
        self.hidden.forward(x, &mut h_pre);
        let mut h_act = h_pre.clone();
        relu(&mut h_act);
        let mut out = vec![0.0; self.out.rows];
        self.out.forward(&h_act, &mut out);
        HeadCache { h_pre, h_act, out }
    }

    /// Backward from the head output into the trunk (`dx` accumulates).
    fn backward(&self, x: &[f64], cache: &HeadCache, d_out: &[f64], dx: &mut [f64], grad: &mut HeadGrad) {
        let mut d_h = vec![0.0; self.hidden.rows];
        self.out.backward(&cache.h_act, d_out, Some(&mut d_h), &mut grad.out);
        relu_backward(&cache.h_pre, &mut d_h);
        self.hidden.backward(x, &d_h, Some(dx), &mut grad.hidden);
    }

    fn param_count(&self) -> usize {
        self.hidden.param_count() + self.out.param_count()
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        self.hidden.write_params(out);
        self.out.write_params(out);
    }

    fn read_params(&mut self, src: &[f64], cursor: &mut usize) {
        self.hidden.read_params(src, cursor);
        self.out.read_params(src, cursor);
    }

    fn grad(&self) -> HeadGrad {
        HeadGrad { hidden: LinearGrad::for_layer(&self.hidden), out: LinearGrad::for_layer(&self.out) }
    }
}

impl HeadGrad {
    fn zero(&mut self) {
        self.hidden.zero();
        self.out.zero();
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        self.hidden.write_flat(out);
        self.out.write_flat(out);
    }
}

// ---------------------------------------------------------------------------
// Actor network
// ---------------------------------------------------------------------------

/// Continuous-branch layout inside `log_std`: the N power dimensions first,
/// then speed, azimuth, polar.
pub fn log_std_len(num_subcarriers: usize) -> usize {
    num_subcarriers + 3
}

#[derive(Clone, Debug)]
pub struct ActorNet {
    pub input_dim: usize,
    pub num_users: usize,
    pub num_subcarriers: usize,
    pub net_cfg: NetConfig,
    t1: Linear,
    t2: Linear,
    assign: Head,
    power: Head,
    speed: Head,
    azimuth: Head,
    polar: Head,
    /// Learnable log standard deviations, `[power_0..N, speed, azimuth, polar]`.
    pub log_std: Vec<f64>,
}

/// One forward pass's outputs: assignment logits and squashable means
/// (already tanh-bounded to (−1, 1)).
#[derive(Clone, Debug)]
pub struct ActorOut {
    pub assign_logits: Vec<f64>,
    pub power_mean: Vec<f64>,
    pub speed_mean: f64,
    pub azimuth_mean: f64,
    pub polar_mean: f64,
}

#[derive(Clone, Debug)]
pub struct ActorCache {
    input: Vec<f64>,
    t1_pre: Vec<f64>,
    t1_act: Vec<f64>,
    t2_pre: Vec<f64>,
    t2_act: Vec<f64>,
    assign: HeadCache,
    power: HeadCache,
    speed: HeadCache,
    azimuth: HeadCache,
    polar: HeadCache,
}

/// Loss gradient with respect to an actor's outputs. Mean gradients are with
/// respect to the post-tanh means; the tanh Jacobian is applied inside
/// [`ActorNet::backward`].
#[derive(Clone, Debug)]
pub struct ActorOutGrad {
    pub d_assign: Vec<f64>,
    pub d_power_mean: Vec<f64>,
    pub d_speed_mean: f64,
    pub d_azimuth_mean: f64,
    pub d_polar_mean: f64,
    pub d_log_std: Vec<f64>,
}

impl ActorOutGrad {
    pub fn zeros(num_users: usize, num_subcarriers: usize) -> Self {
        ActorOutGrad {
            d_assign: vec![0.0; masking::table_len(num_users, num_subcarriers)],
            d_power_mean: vec![0.0; num_subcarriers],
            d_speed_mean: 0.0,
            d_azimuth_mean: 0.0,
            d_polar_mean: 0.0,
            d_log_std: vec![0.0; log_std_len(num_subcarriers)],
        }
    }
}

#[derive(Clone, Debug)]
pub struct ActorGrads {
    t1: LinearGrad,
    t2: LinearGrad,
    assign: HeadGrad,
    power: HeadGrad,
    speed: HeadGrad,
    azimuth: HeadGrad,
    polar: HeadGrad,
    log_std: Vec<f64>,
}

impl ActorGrads {
    pub fn zero(&mut self) {
        self.t1.zero();
        self.t2.zero();
        self.assign.zero();
        self.power.zero();
        self.speed.zero();
        self.azimuth.zero();
        self.polar.zero();
        self.log_std.fill(0.0);
    }

    /// Flattens in the same order as [`ActorNet::flatten`].
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        self.t1.write_flat(out);
        self.t2.write_flat(out);
        self.assign.write_flat(out);
        self.power.write_flat(out);
        self.speed.write_flat(out);
        self.azimuth.write_flat(out);
        self.polar.write_flat(out);
        out.extend_from_slice(&self.log_std);
    }
}

fn tanh_vec(xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|x| x.tanh()).collect()
}

impl ActorNet {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        num_users: usize,
        num_subcarriers: usize,
        net_cfg: NetConfig,
        rng: &mut R,
    ) -> Self {
        let g = std::f64::consts::SQRT_2;
        let t1 = Linear::orthogonal(net_cfg.trunk1, input_dim, g, rng);
        let t2 = Linear::orthogonal(net_cfg.trunk2, net_cfg.trunk1, g, rng);
        let head = |out_dim: usize, rng: &mut R| {
            Head::new(net_cfg.trunk2, net_cfg.head_hidden, out_dim, net_cfg.head_gain, rng)
        };
        let assign = head(masking::table_len(num_users, num_subcarriers), rng);
        let power = head(num_subcarriers, rng);
        let speed = head(1, rng);
        let azimuth = head(1, rng);
        let polar = head(1, rng);
        ActorNet {
            input_dim,
            num_users,
            num_subcarriers,
            net_cfg,
            t1,
            t2,
            assign,
            power,
            speed,
            azimuth,
            polar,
            log_std: vec![net_cfg.log_std_init; log_std_len(num_subcarriers)],
        }
    }

    pub fn forward_cached(&self, x: &[f64]) -> (ActorOut, ActorCache) {
        debug_assert_eq!(x.len(), self.input_dim);
        let mut t1_pre = vec![0.0; self.t1.rows];
        self.t1.forward(x, &mut t1_pre);
        let mut t1_act = t1_pre.clone();
        relu(&mut t1_act);
        let mut t2_pre = vec![0.0; self.t2.rows];
        self.t2.forward(&t1_act, &mut t2_pre);
        let mut t2_act = t2_pre.clone();
        relu(&mut t2_act);

        let assign = self.assign.forward(&t2_act);
        let power = self.power.forward(&t2_act);
        let speed = self.speed.forward(&t2_act);
        let azimuth = self.azimuth.forward(&t2_act);
        let polar = self.polar.forward(&t2_act);

        let out = ActorOut {
            assign_logits: assign.out.clone(),
            power_mean: tanh_vec(&power.out),
            speed_mean: speed.out[0].tanh(),
            azimuth_mean: azimuth.out[0].tanh(),
            polar_mean: polar.out[0].tanh(),
        };
        let cache = ActorCache {
            input: x.to_vec(),
            t1_pre,
            t1_act,
            t2_pre,
            t2_act,
            assign,
            power,
            speed,
            azimuth,
            polar,
        };
        (out, cache)
    }

    pub fn forward(&self, x: &[f64]) -> ActorOut {
        self.forward_cached(x).0
    }

    /// Accumulates parameter gradients for one sample given the gradient of
    /// the loss with respect to this actor's outputs.
    pub fn backward(&self, cache: &ActorCache, out: &ActorOut, og: &ActorOutGrad, grads: &mut ActorGrads) {
        let mut d_t2_act = vec![0.0; self.t2.rows];

        self.assign.backward(&cache.t2_act, &cache.assign, &og.d_assign, &mut d_t2_act, &mut grads.assign);

        // Continuous branches: apply the tanh Jacobian (1 − mean²) to go from
        // post-tanh mean gradients to the branch's linear output.
        let d_power: Vec<f64> = og
            .d_power_mean
            .iter()
            .zip(&out.power_mean)
            .map(|(g, m)| g * (1.0 - m * m))
            .collect();
        self.power.backward(&cache.t2_act, &cache.power, &d_power, &mut d_t2_act, &mut grads.power);

        let d_speed = [og.d_speed_mean * (1.0 - out.speed_mean * out.speed_mean)];
        self.speed.backward(&cache.t2_act, &cache.speed, &d_speed, &mut d_t2_act, &mut grads.speed);

        let d_azimuth = [og.d_azimuth_mean * (1.0 - out.azimuth_mean * out.azimuth_mean)];
        self.azimuth.backward(&cache.t2_act, &cache.azimuth, &d_azimuth, &mut d_t2_act, &mut grads.azimuth);

        let d_polar = [og.d_polar_mean * (1.0 - out.polar_mean * out.polar_mean)];
        self.polar.backward(&cache.t2_act, &cache.polar, &d_polar, &mut d_t2_act, &mut grads.polar);

        relu_backward(&cache.t2_pre, &mut d_t2_act);
        let mut d_t1_act = vec![0.0; self.t1.rows];
        self.t2.backward(&cache.t1_act, &d_t2_act, Some(&mut d_t1_act), &mut grads.t2);
        relu_backward(&cache.t1_pre, &mut d_t1_act);
        self.t1.backward(&cache.input, &d_t1_act, None, &mut grads.t1);

        for (g, d) in grads.log_std.iter_mut().zip(&og.d_log_std) {
            *g += d;
        }
    }

    pub fn grads(&self) -> ActorGrads {
        ActorGrads {
            t1: LinearGrad::for_layer(&self.t1),
            t2: LinearGrad::for_layer(&self.t2),
            assign: self.assign.grad(),
            power: self.power.grad(),
            speed: self.speed.grad(),
            azimuth: self.azimuth.grad(),
            polar: self.polar.grad(),
            log_std: vec![0.0; self.log_std.len()],
        }
    }

    pub fn param_count(&self) -> usize {
        self.t1.param_count()
            + self.t2.param_count()
            + self.assign.param_count()
            + self.power.param_count()
            + self.speed.param_count()
            + self.azimuth.param_count()
            + self.polar.param_count()
            + self.log_std.len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.t1.write_params(&mut out);
        self.t2.write_params(&mut out);
        self.assign.write_params(&mut out);
        self.power.write_params(&mut out);
        self.speed.write_params(&mut out);
        self.azimuth.write_params(&mut out);
        self.polar.write_params(&mut out);
        out.extend_from_slice(&self.log_std);
        out
    }

    pub fn unflatten(&mut self, src: &[f64]) -> Result<()> {
        if src.len() != self.param_count() {
            return Err(Error::Invalid(format!(
                "actor parameter vector length {} does not match architecture ({})",
                src.len(),
                self.param_count()
            )));
        }
        let mut cursor = 0;
        self.t1.read_params(src, &mut cursor);
        self.t2.read_params(src, &mut cursor);
        self.assign.read_params(src, &mut cursor);
        self.power.read_params(src, &mut cursor);
        self.speed.read_params(src, &mut cursor);
        self.azimuth.read_params(src, &mut cursor);
        self.polar.read_params(src, &mut cursor);
        let n = self.log_std.len();
        self.log_std.copy_from_slice(&src[cursor..cursor + n]);
        Ok(())
    }

    pub fn clamp_log_std(&mut self) {
        for s in &mut self.log_std {
            *s = s.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }
}

// ---------------------------------------------------------------------------
// Critic network
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct CriticNet {
    pub input_dim: usize,
    pub net_cfg: NetConfig,
    l1: Linear,
    l2: Linear,
    l3: Linear,
    l4: Linear,
}

#[derive(Clone, Debug)]
pub struct CriticCache {
    input: Vec<f64>,
    pre1: Vec<f64>,
    act1: Vec<f64>,
    pre2: Vec<f64>,
    act2: Vec<f64>,
    pre3: Vec<f64>,
    act3: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct CriticGrads {
    l1: LinearGrad,
    l2: LinearGrad,
    l3: LinearGrad,
    l4: LinearGrad,
}

impl CriticGrads {
    pub fn zero(&mut self) {
        self.l1.zero();
        self.l2.zero();
        self.l3.zero();
        self.l4.zero();
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        self.l1.write_flat(out);
        self.l2.write_flat(out);
        self.l3.write_flat(out);
        self.l4.write_flat(out);
    }
}

impl CriticNet {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, net_cfg: NetConfig, rng: &mut R) -> Self {
        let g = std::f64::consts::SQRT_2;
        CriticNet {
            input_dim,
            net_cfg,
            l1: Linear::orthogonal(net_cfg.trunk1, input_dim, g, rng),
            l2: Linear::orthogonal(net_cfg.trunk2, net_cfg.trunk1, g, rng),
            l3: Linear::orthogonal(net_cfg.head_hidden, net_cfg.trunk2, g, rng),
            l4: Linear::orthogonal(1, net_cfg.head_hidden, 1.0, rng),
        }
    }

    pub fn forward_cached(&self, x: &[f64]) -> (f64, CriticCache) {
        debug_assert_eq!(x.len(), self.input_dim);
        let mut pre1 = vec![0.0; self.l1.rows];
        self.l1.forward(x, &mut pre1);
        let mut act1 = pre1.clone();
        relu(&mut act1);
        let mut pre2 = vec![0.0; self.l2.rows];
        self.l2.forward(&act1, &mut pre2);
        let mut act2 = pre2.clone();
        relu(&mut act2);
        let mut pre3 = vec![0.0; self.l3.rows];
        self.l3.forward(&act2, &mut pre3);
        let mut act3 = pre3.clone();
        relu(&mut act3);
        let mut out = [0.0];
        self.l4.forward(&act3, &mut out);
        (out[0], CriticCache { input: x.to_vec(), pre1, act1, pre2, act2, pre3, act3 })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.forward_cached(x).0
    }

    pub fn backward(&self, cache: &CriticCache, d_value: f64, grads: &mut CriticGrads) {
        let d_out = [d_value];
        let mut d3 = vec![0.0; self.l3.rows];
        self.l4.backward(&cache.act3, &d_out, Some(&mut d3), &mut grads.l4);
        relu_backward(&cache.pre3, &mut d3);
        let mut d2 = vec![0.0; self.l2.rows];
        self.l3.backward(&cache.act2, &d3, Some(&mut d2), &mut grads.l3);
        relu_backward(&cache.pre2, &mut d2);
        let mut d1 = vec![0.0; self.l1.rows];
        self.l2.backward(&cache.act1, &d2, Some(&mut d1), &mut grads.l2);
        relu_backward(&cache.pre1, &mut d1);
        self.l1.backward(&cache.input, &d1, None, &mut grads.l1);
    }

    pub fn grads(&self) -> CriticGrads {
        CriticGrads {
            l1: LinearGrad::for_layer(&self.l1),
            l2: LinearGrad::for_layer(&self.l2),
            l3: LinearGrad::for_layer(&self.l3),
            l4: LinearGrad::for_layer(&self.l4),
        }
    }

    pub fn param_count(&self) -> usize {
        self.l1.param_count() + self.l2.param_count() + self.l3.param_count() + self.l4.param_count()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.l1.write_params(&mut out);
        self.l2.write_params(&mut out);
        self.l3.write_params(&mut out);
        self.l4.write_params(&mut out);
        out
    }

    pub fn unflatten(&mut self, src: &[f64]) -> Result<()> {
        if src.len() != self.param_count() {
            return Err(Error::Invalid(format!(
                "critic parameter vector length {} does not match architecture ({})",
                src.len(),
                self.param_count()
            )));
        }
        let mut cursor = 0;
        self.l1.read_params(src, &mut cursor);
        self.l2.read_params(src, &mut cursor);
        self.l3.read_params(src, &mut cursor);
        self.l4.read_params(src, &mut cursor);
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Policy set: per-agent actors (or one shared actor) plus the critic
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyMode {
    /// One independent actor per agent.
    PerAgent,
    /// A single actor shared by all agents, with a one-hot agent id appended
    /// to its input.
    Shared,
}

impl PolicyMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyMode::PerAgent => "per_agent",
            PolicyMode::Shared => "shared",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "per_agent" => Ok(PolicyMode::PerAgent),
            "shared" => Ok(PolicyMode::Shared),
            other => Err(Error::Checkpoint(format!("unknown policy mode '{other}'"))),
        }
    }
}

/// The full set of trainable networks for one run.
#[derive(Clone, Debug)]
pub struct PolicySet {
    pub mode: PolicyMode,
    pub num_agents: usize,
    pub base_state_dim: usize,
    pub num_users: usize,
    pub num_subcarriers: usize,
    pub net_cfg: NetConfig,
    pub actors: Vec<ActorNet>,
    pub critic: CriticNet,
}

/// One sampled (or greedy) joint action with its per-agent log-probabilities
/// and the critic's value estimate.
#[derive(Clone, Debug)]
pub struct ActOutcome {
    pub actions: Vec<HybridAction>,
    pub logp: Vec<f64>,
    pub value: f64,
}

/// Differentiable re-evaluation of a stored joint action for one agent.
#[derive(Debug)]
pub struct AgentEval {
    pub out: ActorOut,
    pub cache: ActorCache,
    pub picks: Vec<PickEval>,
    pub logp: f64,
    pub entropy: f64,
}

#[derive(Debug)]
pub struct EvalBundle {
    pub agents: Vec<AgentEval>,
    pub value: f64,
    pub critic_cache: CriticCache,
}

impl PolicySet {
    pub fn new<R: Rng + ?Sized>(
        mode: PolicyMode,
        base_state_dim: usize,
        num_agents: usize,
        num_users: usize,
        num_subcarriers: usize,
        net_cfg: NetConfig,
        rng: &mut R,
    ) -> Self {
        let actor_count = match mode {
            PolicyMode::PerAgent => num_agents,
            PolicyMode::Shared => 1,
        };
        let actor_input = match mode {
            PolicyMode::PerAgent => base_state_dim,
            PolicyMode::Shared => base_state_dim + num_agents,
        };
        let actors = (0..actor_count)
            .map(|_| ActorNet::new(actor_input, num_users, num_subcarriers, net_cfg, rng))
            .collect();
        let critic = CriticNet::new(base_state_dim, net_cfg, rng);
        PolicySet { mode, num_agents, base_state_dim, num_users, num_subcarriers, net_cfg, actors, critic }
    }

    /// Index into `actors` for `agent` (always 0 in shared mode).
    pub fn actor_index(&self, agent: usize) -> usize {
        match self.mode {
            PolicyMode::PerAgent => agent,
            PolicyMode::Shared => 0,
        }
    }

    /// The actor evaluated for `agent` (the same network for every agent in
    /// shared mode).
    pub fn actor_for(&self, agent: usize) -> &ActorNet {
        &self.actors[self.actor_index(agent)]
    }

    /// Builds the actor input for `agent`: the normalized state, plus a
    /// one-hot agent id in shared mode.
    pub fn actor_input(&self, state: &[f64], agent: usize) -> Vec<f64> {
        debug_assert_eq!(state.len(), self.base_state_dim);
        match self.mode {
            PolicyMode::PerAgent => state.to_vec(),
            PolicyMode::Shared => {
                let mut x = Vec::with_capacity(state.len() + self.num_agents);
                x.extend_from_slice(state);
                let mut one_hot = vec![0.0; self.num_agents];
                one_hot[agent] = 1.0;
                x.extend_from_slice(&one_hot);
                x
            }
        }
    }

    pub fn total_actor_params(&self) -> usize {
        self.actors.iter().map(ActorNet::param_count).sum()
    }

    /// Samples a joint hybrid action: masked sequential assignment picks,
    /// then Gaussian draws for power logits, speed, azimuth, and polar per
    /// agent. Sampling happens in the raw (pre-squash) space — the
    /// environment applies the bounded squash when executing the action —
    /// and log-probabilities are per agent, summed over the agent's picks
    /// and continuous dimensions.
    pub fn act_stochastic<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> ActOutcome {
        let outs: Vec<ActorOut> = (0..self.num_agents)
            .map(|m| self.actor_for(m).forward(&self.actor_input(state, m)))
            .collect();
        let tables: Vec<&[f64]> = outs.iter().map(|o| o.assign_logits.as_slice()).collect();
        let sample = masking::sample_assignment(&tables, self.num_users, self.num_subcarriers, rng);

        let mut actions = Vec::with_capacity(self.num_agents);
        let mut logp = sample.logp.clone();
        for m in 0..self.num_agents {
            let actor = self.actor_for(m);
            let out = &outs[m];
            let n = self.num_subcarriers;
            let mut power_raw = Vec::with_capacity(n);
            for i in 0..n {
                let ls = actor.log_std[i];
                let raw = out.power_mean[i] + ls.exp() * rng.sample::<f64, _>(StandardNormal);
                logp[m] += gaussian_logp(raw, out.power_mean[i], ls);
                power_raw.push(raw);
            }
            let scalar = |mean: f64, ls: f64, rng: &mut R| {
                let raw = mean + ls.exp() * rng.sample::<f64, _>(StandardNormal);
                (raw, gaussian_logp(raw, mean, ls))
            };
            // Accumulation order mirrors `evaluate` exactly, so a replay
            // under unchanged parameters reproduces this sum bit for bit.
            let (speed_raw, lp_s) = scalar(out.speed_mean, actor.log_std[n], rng);
            logp[m] += lp_s;
            let (azimuth_raw, lp_a) = scalar(out.azimuth_mean, actor.log_std[n + 1], rng);
            logp[m] += lp_a;
            let (polar_raw, lp_p) = scalar(out.polar_mean, actor.log_std[n + 2], rng);
            logp[m] += lp_p;
            actions.push(HybridAction {
                picks: sample.picks[m].clone(),
                power_raw,
                speed_raw,
                azimuth_raw,
                polar_raw,
            });
        }
        let value = self.critic.value(state);
        ActOutcome { actions, logp, value }
    }

    /// Greedy deterministic action: argmax assignment picks under the mask
    /// and distribution means for every continuous dimension.
    pub fn act_greedy(&self, state: &[f64]) -> ActOutcome {
        let outs: Vec<ActorOut> = (0..self.num_agents)
            .map(|m| self.actor_for(m).forward(&self.actor_input(state, m)))
            .collect();
        let tables: Vec<&[f64]> = outs.iter().map(|o| o.assign_logits.as_slice()).collect();
        let picks = masking::greedy_assignment(&tables, self.num_users, self.num_subcarriers);
        let actions = (0..self.num_agents)
            .map(|m| HybridAction {
                picks: picks[m].clone(),
                power_raw: outs[m].power_mean.clone(),
                speed_raw: outs[m].speed_mean,
                azimuth_raw: outs[m].azimuth_mean,
                polar_raw: outs[m].polar_mean,
            })
            .collect();
        let value = self.critic.value(state);
        ActOutcome { actions, logp: vec![0.0; self.num_agents], value }
    }

    /// Re-evaluates a stored joint action under the current parameters,
    /// returning per-agent log-probabilities, entropies, and the caches
    /// needed for backpropagation.
    pub fn evaluate(&self, state: &[f64], actions: &[HybridAction]) -> Result<EvalBundle> {
        if actions.len() != self.num_agents {
            return Err(Error::Invalid(format!(
                "joint action has {} agents, expected {}",
                actions.len(),
                self.num_agents
            )));
        }
        let mut outs = Vec::with_capacity(self.num_agents);
        let mut caches = Vec::with_capacity(self.num_agents);
        for m in 0..self.num_agents {
            let (out, cache) = self.actor_for(m).forward_cached(&self.actor_input(state, m));
            outs.push(out);
            caches.push(cache);
        }
        let tables: Vec<&[f64]> = outs.iter().map(|o| o.assign_logits.as_slice()).collect();
        let picks: Vec<Vec<Option<usize>>> = actions.iter().map(|a| a.picks.clone()).collect();
        let pick_evals =
            masking::evaluate_assignment(&tables, &picks, self.num_users, self.num_subcarriers)?;

        let mut agents = Vec::with_capacity(self.num_agents);
        for (m, (out, cache)) in outs.into_iter().zip(caches).enumerate() {
            let actor = self.actor_for(m);
            let evals = &pick_evals[m];
            let mut logp: f64 = evals.iter().map(|e| e.logp).sum();
            let mut entropy: f64 = evals.iter().map(|e| e.entropy).sum();
            let n = self.num_subcarriers;
            let a = &actions[m];
            for i in 0..n {
                logp += gaussian_logp(a.power_raw[i], out.power_mean[i], actor.log_std[i]);
                entropy += gaussian_entropy(actor.log_std[i]);
            }
            logp += gaussian_logp(a.speed_raw, out.speed_mean, actor.log_std[n]);
            logp += gaussian_logp(a.azimuth_raw, out.azimuth_mean, actor.log_std[n + 1]);
            logp += gaussian_logp(a.polar_raw, out.polar_mean, actor.log_std[n + 2]);
            entropy += gaussian_entropy(actor.log_std[n])
                + gaussian_entropy(actor.log_std[n + 1])
                + gaussian_entropy(actor.log_std[n + 2]);
            agents.push(AgentEval { out, cache, picks: pick_evals[m].clone(), logp, entropy });
        }
        let (value, critic_cache) = self.critic.forward_cached(state);
        Ok(EvalBundle { agents, value, critic_cache })
    }

    /// All parameters of all networks, actors first, as one flat vector.
    pub fn flatten_all(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for a in &self.actors {
            out.extend(a.flatten());
        }
        out.extend(self.critic.flatten());
        out
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 8] = b"SWLKCKPT";
const CKPT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    mode: String,
    num_agents: usize,
    base_state_dim: usize,
    num_users: usize,
    num_subcarriers: usize,
    net: NetConfig,
}

impl PolicySet {
    /// Writes a versioned, checksummed checkpoint: magic, format version,
    /// a JSON architecture descriptor, little-endian f64 parameter blocks
    /// (actors in order, then the critic), and a trailing SHA-256 digest.
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = CheckpointMeta {
            mode: self.mode.as_str().to_string(),
            num_agents: self.num_agents,
            base_state_dim: self.base_state_dim,
            num_users: self.num_users,
            num_subcarriers: self.num_subcarriers,
            net: self.net_cfg,
        };
        let meta_bytes = serde_json::to_vec(&meta)
            .map_err(|e| Error::Checkpoint(format!("cannot encode descriptor: {e}")))?;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(CKPT_MAGIC);
        bytes.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(meta_bytes.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&meta_bytes);
        let write_block = |params: Vec<f64>, bytes: &mut Vec<u8>| {
            bytes.extend_from_slice(&(params.len() as u64).to_le_bytes());
            for p in params {
                bytes.extend_from_slice(&p.to_le_bytes());
            }
        };
        for actor in &self.actors {
            write_block(actor.flatten(), &mut bytes);
        }
        write_block(self.critic.flatten(), &mut bytes);
        let digest = Sha256::digest(&bytes);
        bytes.extend_from_slice(&digest);
        std::fs::write(path, bytes)?;
        Ok(())
    }

    /// Loads and fully validates a checkpoint written by [`PolicySet::save`].
    pub fn load(path: &Path) -> Result<PolicySet> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        if bytes.len() < CKPT_MAGIC.len() + 8 + 32 {
            return Err(Error::Checkpoint("file too short to be a checkpoint".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if &bytes[..8] != CKPT_MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let expected = Sha256::digest(body);
        if digest != expected.as_slice() {
            return Err(Error::Checkpoint("checksum mismatch: file corrupted".into()));
        }
        let mut cursor = 8;
        let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
            if *cursor + n > body.len() {
                return Err(Error::Checkpoint("truncated checkpoint".into()));
            }
            let s = &body[*cursor..*cursor + n];
            *cursor += n;
            Ok(s)
        };
        let version = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap());
        if version != CKPT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}, expected {CKPT_VERSION}"
            )));
        }
        let meta_len = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
        let meta: CheckpointMeta = serde_json::from_slice(take(&mut cursor, meta_len)?)
            .map_err(|e| Error::Checkpoint(format!("bad descriptor: {e}")))?;
        let mode = PolicyMode::parse(&meta.mode)?;

        // Architecture first, then overwrite every parameter from the file.
        let mut throwaway = crate::world::stream(0, crate::world::stream_id::INIT);
        let mut policy = PolicySet::new(
            mode,
            meta.base_state_dim,
            meta.num_agents,
            meta.num_users,
            meta.num_subcarriers,
            meta.net,
            &mut throwaway,
        );
        let read_block = |cursor: &mut usize, expected_len: usize| -> Result<Vec<f64>> {
            let count = u64::from_le_bytes(take(cursor, 8)?.try_into().unwrap()) as usize;
            if count != expected_len {
                return Err(Error::Checkpoint(format!(
                    "parameter block of {count} values does not match architecture ({expected_len})"
                )));
            }
            let raw = take(cursor, count * 8)?;
            Ok(raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        for i in 0..policy.actors.len() {
            let expected_len = policy.actors[i].param_count();
            let params = read_block(&mut cursor, expected_len)?;
            policy.actors[i].unflatten(&params)?;
        }
        let params = read_block(&mut cursor, policy.critic.param_count())?;
        policy.critic.unflatten(&params)?;
        if cursor != body.len() {
            return Err(Error::Checkpoint("trailing bytes after parameter blocks".into()));
        }
        Ok(policy)
    }
}

/// Applies one optimizer step to a flat parameter vector with optional
/// gradient-norm clipping; returns the pre-clip gradient norm.
pub fn optimizer_step(
    params: &mut [f64],
    grads: &mut [f64],
    opt: &mut nn::Optimizer,
    lr: f64,
    grad_clip: f64,
) -> Result<f64> {
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical("non-finite gradient".into()));
    }
    let norm = clip_grad_norm(grads, grad_clip);
    opt.step(params, grads, lr);
    Ok(norm)
}
