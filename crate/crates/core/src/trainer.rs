//! Clipped-surrogate policy optimization over the multi-UAV environment.
//!
//! Workers stream transitions into a fixed-capacity rollout buffer; the
//! moment it fills — mid-episode if that is where the boundary lands — an
//! optimization phase runs, bootstrapping any truncated episode with the
//! critic value of its pending state, and collection resumes under the
//! updated parameters. Each phase draws a fixed number of minibatches,
//! re-evaluates stored joint actions under the current parameters, and
//! applies analytic gradients (the same code path a finite-difference test
//! can audit). Baselines reuse the loop: the shared-actor variant swaps the
//! policy mode, and the exploration baseline skips updates entirely.

use crate::env::{Env, EnvOptions, EnvState, HybridAction, PowerMap};
use crate::metrics::{EpisodeRecord, RunWriter, UpdateStats};
use crate::policy::{
    nn::Optimizer, optimizer_step, ActorGrads, ActorOutGrad, CriticGrads, NetConfig, PolicyMode,
    PolicySet,
};
use crate::world::{derived_seed, stream, stream_id, ScenarioConfig};
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Seed-derivation tags, one per purpose, so no two RNG streams coincide.
const TAG_WORKER_ENV: u64 = 0xA000;
const TAG_WORKER_POLICY: u64 = 0xB000;
const TAG_EVAL_ENV: u64 = 0xE7A1;

/// The evaluation environment seed for a run with base seed `base_seed`.
/// Every method evaluated against the same base seed sees identical user
/// mobility and fading draws.
pub fn eval_seed(base_seed: u64) -> u64 {
    derived_seed(base_seed, TAG_EVAL_ENV)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Training hyperparameters; defaults reproduce the reference setting.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Sample-reuse factor: each buffer is consumed by
    /// `reuse * buffer / batch_size` minibatch steps.
    pub reuse: usize,
    /// Rollout buffer capacity in transitions; an update runs once at least
    /// this many have been collected.
    pub buffer: usize,
    pub episodes: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    /// Surrogate clip radius ε.
    pub clip: f64,
    pub entropy_coeff: f64,
    /// Overrides the scenario seed when set.
    pub seed: Option<u64>,
    /// Use the advantage recursion written in terms of empirical returns
    /// instead of the one-step temporal difference.
    pub gae_double_sum: bool,
    pub normalize_advantages: bool,
    /// Global gradient-norm ceiling per network per step; 0 disables.
    pub grad_clip: f64,
    pub workers: usize,
    pub optimizer: OptimizerKind,
    /// Save a numbered checkpoint every this many updates; 0 saves only the
    /// initial and final ones.
    pub checkpoint_every: usize,
    pub penalty_coeff: f64,
    pub reward_scale: f64,
    pub power_map: PowerMap,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 256,
            reuse: 20,
            buffer: 2048,
            episodes: 2000,
            gamma: 0.95,
            gae_lambda: 0.95,
            clip: 0.2,
            entropy_coeff: 0.001,
            seed: None,
            gae_double_sum: false,
            normalize_advantages: true,
            grad_clip: 0.0,
            workers: 1,
            optimizer: OptimizerKind::Adam,
            checkpoint_every: 0,
            penalty_coeff: 0.5,
            reward_scale: 1.0,
            power_map: PowerMap::Softmax,
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("train.{field}: {why}")));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr", format!("must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if self.buffer < self.batch_size {
            return bad(
                "buffer",
                format!("capacity {} is smaller than batch_size {}", self.buffer, self.batch_size),
            );
        }
        if self.reuse == 0 {
            return bad("reuse", "must be at least 1".into());
        }
        if self.episodes == 0 {
            return bad("episodes", "must be at least 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma", format!("must be in (0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda", format!("must be in [0, 1], got {}", self.gae_lambda));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip", format!("must be in (0, 1), got {}", self.clip));
        }
        if self.entropy_coeff < 0.0 {
            return bad("entropy_coeff", "must be non-negative".into());
        }
        if self.grad_clip < 0.0 {
            return bad("grad_clip", "must be non-negative (0 disables)".into());
        }
        if self.workers == 0 {
            return bad("workers", "must be at least 1".into());
        }
        if self.net.trunk1 == 0 || self.net.trunk2 == 0 || self.net.head_hidden == 0 {
            return bad("net", "layer widths must be positive".into());
        }
        Ok(())
    }

    pub fn env_options(&self) -> EnvOptions {
        EnvOptions {
            penalty_coeff: self.penalty_coeff,
            reward_scale: self.reward_scale,
            power_map: self.power_map,
        }
    }
}

/// Which algorithm variant to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Per-agent actors with a centralized critic (the full method).
    Mahppo,
    /// One actor shared by all agents, selected by a one-hot agent id.
    Hppo,
    /// The initial stochastic policy, never updated.
    Exploration,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Mahppo => "mahppo",
            Method::Hppo => "hppo",
            Method::Exploration => "exploration",
        }
    }

    pub fn policy_mode(&self) -> PolicyMode {
        match self {
            Method::Hppo => PolicyMode::Shared,
            _ => PolicyMode::PerAgent,
        }
    }

    pub fn learns(&self) -> bool {
        !matches!(self, Method::Exploration)
    }
}

/// One stored environment interaction.
#[derive(Clone, Debug)]
pub struct Transition {
    pub state: EnvState,
    pub actions: Vec<HybridAction>,
    /// Per-agent log-probabilities at collection time.
    pub logp: Vec<f64>,
    /// Critic value at collection time.
    pub value: f64,
    pub reward: f64,
    pub done: bool,
}

// ---------------------------------------------------------------------------
// Returns and advantages
// ---------------------------------------------------------------------------

/// Discounted empirical returns, resetting at terminals; a trailing
/// non-terminal transition is continued with `bootstrap`.
pub fn compute_returns_bootstrapped(
    rewards: &[f64],
    dones: &[bool],
    gamma: f64,
    bootstrap: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut next = bootstrap;
    for t in (0..rewards.len()).rev() {
        let r = rewards[t] + gamma * if dones[t] { 0.0 } else { next };
        out[t] = r;
        next = r;
    }
    out
}

/// Discounted empirical returns of complete episodes (zero bootstrap).
pub fn compute_returns(rewards: &[f64], dones: &[bool], gamma: f64) -> Vec<f64> {
    compute_returns_bootstrapped(rewards, dones, gamma, 0.0)
}

/// Generalized advantage estimates from one-step temporal differences:
/// `δ_t = r_t + γ·V(s_{t+1}) − V(s_t)`, accumulated backward with factor
/// `γλ` and reset at terminals. A trailing non-terminal transition uses
/// `bootstrap` as its successor value.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let t_max = rewards.len();
    let mut out = vec![0.0; t_max];
    let mut acc = 0.0;
    for t in (0..t_max).rev() {
        let next_v = if dones[t] {
            0.0
        } else if t + 1 < t_max {
            values[t + 1]
        } else {
            bootstrap
        };
        let delta = rewards[t] + gamma * next_v - values[t];
        acc = delta + if dones[t] { 0.0 } else { gamma * lambda * acc };
        out[t] = acc;
    }
    out
}

/// Advantage recursion with the residual written against empirical returns,
/// `δ_t = R_t − V(s_t)`, as an optional alternative estimator.
pub fn compute_gae_double_sum(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let rets = compute_returns_bootstrapped(rewards, dones, gamma, bootstrap);
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rets[t] - values[t];
        acc = delta + if dones[t] { 0.0 } else { gamma * lambda * acc };
        out[t] = acc;
    }
    out
}

// ---------------------------------------------------------------------------
// Minibatch loss and gradients
// ---------------------------------------------------------------------------

/// The clipped surrogate objective for one agent-sample:
/// `min(ratio·Â, clamp(ratio, 1−ε, 1+ε)·Â)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let surr1 = ratio * advantage;
    let surr2 = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    surr1.min(surr2)
}

/// One minibatch entry: a stored transition with its advantage estimate and
/// critic target.
pub struct SampleRef<'a> {
    pub transition: &'a Transition,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct MinibatchStats {
    /// Mean clipped-surrogate loss including the entropy bonus.
    pub policy_loss: f64,
    /// Mean squared error of the critic.
    pub value_loss: f64,
    /// Mean per-agent entropy.
    pub mean_entropy: f64,
    /// Mean per-agent importance ratio.
    pub mean_ratio: f64,
    /// Fraction of agent-samples with a ratio outside the clip band.
    pub clip_fraction: f64,
}

/// Computes the minibatch losses and, when `grads` is given, accumulates the
/// analytic parameter gradients of exactly those losses. Keeping the forward
/// and backward paths in one function is what makes the finite-difference
/// audit meaningful.
pub fn minibatch_pass(
    policy: &PolicySet,
    samples: &[SampleRef],
    clip: f64,
    entropy_coeff: f64,
    mut grads: Option<(&mut [ActorGrads], &mut CriticGrads)>,
) -> Result<MinibatchStats> {
    if samples.is_empty() {
        return Err(Error::Invalid("empty minibatch".into()));
    }
    let inv_b = 1.0 / samples.len() as f64;
    let n_sub = policy.num_subcarriers;
    let mut stats = MinibatchStats::default();
    let mut entropy_sum = 0.0;
    let mut ratio_sum = 0.0;
    let mut clip_count = 0usize;

    for s in samples {
        let t = s.transition;
        let eval = policy.evaluate(&t.state.normalized, &t.actions)?;
        for (m, agent) in eval.agents.iter().enumerate() {
            let ratio = (agent.logp - t.logp[m]).exp();
            stats.policy_loss +=
                (-clipped_surrogate(ratio, s.advantage, clip) - entropy_coeff * agent.entropy)
                    * inv_b;
            entropy_sum += agent.entropy;
            ratio_sum += ratio;
            if (ratio - 1.0).abs() > clip {
                clip_count += 1;
            }

            if let Some((actor_grads, _)) = grads.as_mut() {
                // The surrogate reaches the parameters only through the new
                // log-probability; its gradient flows iff the unclipped
                // branch is the active minimum.
                let surr1 = ratio * s.advantage;
                let surr2 = ratio.clamp(1.0 - clip, 1.0 + clip) * s.advantage;
                let g_logp = if surr1 <= surr2 { -ratio * s.advantage * inv_b } else { 0.0 };

                let mut og = ActorOutGrad::zeros(policy.num_users, n_sub);
                for pe in &agent.picks {
                    for &j in &pe.candidates {
                        let p = pe.probs[j];
                        let ind = if j == pe.chosen { 1.0 } else { 0.0 };
                        let mut d = g_logp * (ind - p);
                        if p > 0.0 {
                            // Entropy bonus of the masked categorical.
                            d += entropy_coeff * inv_b * p * (p.ln() + pe.entropy);
                        }
                        og.d_assign[j] += d;
                    }
                }
                let actor = policy.actor_for(m);
                let a = &t.actions[m];
                for i in 0..n_sub {
                    let var = (2.0 * actor.log_std[i]).exp();
                    let z = a.power_raw[i] - agent.out.power_mean[i];
                    og.d_power_mean[i] = g_logp * z / var;
                    og.d_log_std[i] = g_logp * (z * z / var - 1.0) - entropy_coeff * inv_b;
                }
                let scalars = [
                    (a.speed_raw, agent.out.speed_mean),
                    (a.azimuth_raw, agent.out.azimuth_mean),
                    (a.polar_raw, agent.out.polar_mean),
                ];
                let mut d_means = [0.0; 3];
                for (i, (raw, mean)) in scalars.iter().enumerate() {
                    let var = (2.0 * actor.log_std[n_sub + i]).exp();
                    let z = raw - mean;
                    d_means[i] = g_logp * z / var;
                    og.d_log_std[n_sub + i] =
                        g_logp * (z * z / var - 1.0) - entropy_coeff * inv_b;
                }
                og.d_speed_mean = d_means[0];
                og.d_azimuth_mean = d_means[1];
                og.d_polar_mean = d_means[2];
                actor.backward(&agent.cache, &agent.out, &og, &mut actor_grads[policy.actor_index(m)]);
            }
        }
        stats.value_loss += (eval.value - s.ret).powi(2) * inv_b;
        if let Some((_, critic_grads)) = grads.as_mut() {
            let dv = 2.0 * (eval.value - s.ret) * inv_b;
            policy.critic.backward(&eval.critic_cache, dv, critic_grads);
        }
    }
    let denom = (samples.len() * policy.num_agents) as f64;
    stats.mean_entropy = entropy_sum / denom;
    stats.mean_ratio = ratio_sum / denom;
    stats.clip_fraction = clip_count as f64 / denom;
    Ok(stats)
}

// ---------------------------------------------------------------------------
// Episode collection
// ---------------------------------------------------------------------------

/// Everything one episode produced; transitions may be omitted when only the
/// scalars matter (evaluation).
#[derive(Clone, Debug, Default)]
pub struct EpisodeData {
    pub transitions: Vec<Transition>,
    pub reward_sum: f64,
    pub discounted_return: f64,
    pub final_fairness: f64,
    pub energy_j: f64,
    pub eta_mean: f64,
    pub eta_episode: f64,
    pub violations: usize,
    pub steps: usize,
}

impl EpisodeData {
    pub fn record(&self, episode: usize) -> EpisodeRecord {
        EpisodeRecord {
            episode,
            discounted_return: self.discounted_return,
            reward_sum: self.reward_sum,
            final_fairness: self.final_fairness,
            energy_j: self.energy_j,
            eta_mean: self.eta_mean,
            eta_episode: self.eta_episode,
            violations: self.violations,
            steps: self.steps,
        }
    }
}

fn record_positions(world: &crate::world::WorldState, traj: &mut [Vec<[f64; 3]>]) {
    for (uav, t) in world.uavs.iter().zip(traj.iter_mut()) {
        t.push([uav.position.x, uav.position.y, uav.position.z]);
    }
}

/// Runs one complete episode. `rng` selects stochastic (training) versus
/// greedy (evaluation) actions; `traj` captures per-UAV position polylines.
pub fn run_episode(
    env: &mut Env,
    policy: &PolicySet,
    mut rng: Option<&mut ChaCha8Rng>,
    gamma: f64,
    keep_transitions: bool,
    mut traj: Option<&mut Vec<Vec<[f64; 3]>>>,
) -> Result<EpisodeData> {
    let ts = env.cfg.slot_duration;
    let mut state = env.reset()?;
    if let Some(t) = traj.as_deref_mut() {
        t.clear();
        t.resize(env.cfg.num_uavs, Vec::new());
        record_positions(env.world()?, t);
    }
    let mut data = EpisodeData::default();
    let mut discount = 1.0;
    let mut fair_bits = 0.0;
    let mut eff_sum = 0.0;
    loop {
        let act = match rng.as_deref_mut() {
            Some(r) => policy.act_stochastic(&state.normalized, r),
            None => policy.act_greedy(&state.normalized),
        };
        let out = env.step(&act.actions)?;
        data.reward_sum += out.reward;
        data.discounted_return += discount * out.reward;
        discount *= gamma;
        data.energy_j += out.energy_j;
        data.violations += out.violations;
        eff_sum += out.efficiency;
        fair_bits += out.report.fair_rate * ts;
        data.final_fairness = out.report.fairness;
        data.steps += 1;
        if let Some(t) = traj.as_deref_mut() {
            record_positions(env.world()?, t);
        }
        if keep_transitions {
            data.transitions.push(Transition {
                state,
                actions: act.actions,
                logp: act.logp,
                value: act.value,
                reward: out.reward,
                done: out.done,
            });
        }
        state = out.next_state;
        if out.done {
            break;
        }
    }
    data.eta_mean = eff_sum / data.steps.max(1) as f64;
    data.eta_episode =
        if data.energy_j > 0.0 { fair_bits / data.energy_j / 1000.0 } else { 0.0 };
    Ok(data)
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

/// Scalar accumulators for an episode whose transitions stream directly
/// into the rollout buffer as they happen.
struct InFlight {
    state: EnvState,
    data: EpisodeData,
    discount: f64,
    fair_bits: f64,
    eff_sum: f64,
}

/// One collection context: an environment plus its policy-sampling RNG and
/// the episode currently in flight, if any.
struct Worker {
    env: Env,
    rng: ChaCha8Rng,
    inflight: Option<InFlight>,
}

pub struct Trainer {
    pub scenario: ScenarioConfig,
    pub cfg: TrainConfig,
    pub method: Method,
    pub policy: PolicySet,
    pub records: Vec<EpisodeRecord>,
    pub update_stats: Vec<UpdateStats>,
    seed: u64,
    workers: Vec<Worker>,
    /// Rollout buffer and, per entry, the worker that produced it; advantage
    /// estimation follows each worker's own timeline through the buffer.
    buf: Vec<Transition>,
    buf_worker: Vec<usize>,
    minibatch_rng: ChaCha8Rng,
    actor_opts: Vec<Optimizer>,
    critic_opt: Optimizer,
    episodes_done: usize,
    updates_done: usize,
}

impl Trainer {
    pub fn new(scenario: ScenarioConfig, cfg: TrainConfig, method: Method) -> Result<Self> {
        scenario.validate()?;
        cfg.validate()?;
        let seed = cfg.seed.unwrap_or(scenario.seed);
        let mut init_rng = stream(seed, stream_id::INIT);
        let policy = PolicySet::new(
            method.policy_mode(),
            scenario.state_dim(),
            scenario.num_uavs,
            scenario.num_users,
            scenario.num_subcarriers,
            cfg.net,
            &mut init_rng,
        );
        let workers = (0..cfg.workers)
            .map(|w| {
                Ok(Worker {
                    env: Env::new(
                        scenario.clone(),
                        cfg.env_options(),
                        derived_seed(seed, TAG_WORKER_ENV + w as u64),
                    )?,
                    rng: stream(
                        derived_seed(seed, TAG_WORKER_POLICY + w as u64),
                        stream_id::POLICY,
                    ),
                    inflight: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let make_opt = |count: usize| match cfg.optimizer {
            OptimizerKind::Adam => Optimizer::adam(count),
            OptimizerKind::Sgd => Optimizer::Sgd,
        };
        let actor_opts = policy.actors.iter().map(|a| make_opt(a.param_count())).collect();
        let critic_opt = make_opt(policy.critic.param_count());
        let minibatch_rng = stream(seed, stream_id::MINIBATCH);
        Ok(Trainer {
            scenario,
            cfg,
            method,
            policy,
            records: Vec::new(),
            update_stats: Vec::new(),
            seed,
            workers,
            buf: Vec::new(),
            buf_worker: Vec::new(),
            minibatch_rng,
            actor_opts,
            critic_opt,
            episodes_done: 0,
            updates_done: 0,
        })
    }

    pub fn base_seed(&self) -> u64 {
        self.seed
    }

    /// Runs the full training loop. With a writer, saves the initial
    /// checkpoint, periodic and final checkpoints for learning methods, and
    /// the episode/update CSVs.
    ///
    /// Workers advance one step per round in fixed order, so the buffer
    /// order — and with it every downstream draw — is deterministic for any
    /// worker count; a single worker additionally reproduces runs bit for
    /// bit.
    pub fn train(&mut self, writer: Option<&RunWriter>) -> Result<()> {
        if let Some(w) = writer {
            self.policy.save(&w.checkpoint_path("init.ckpt")?)?;
        }
        let keep = self.method.learns();
        let mut started = 0usize;
        loop {
            let mut any_active = false;
            for w in 0..self.workers.len() {
                if self.workers[w].inflight.is_none() && started < self.cfg.episodes {
                    let state = self.workers[w].env.reset()?;
                    self.workers[w].inflight = Some(InFlight {
                        state,
                        data: EpisodeData::default(),
                        discount: 1.0,
                        fair_bits: 0.0,
                        eff_sum: 0.0,
                    });
                    started += 1;
                }
                let Some(mut fl) = self.workers[w].inflight.take() else { continue };
                any_active = true;
                let worker = &mut self.workers[w];
                let act = self.policy.act_stochastic(&fl.state.normalized, &mut worker.rng);
                let out = worker.env.step(&act.actions)?;
                fl.data.reward_sum += out.reward;
                fl.data.discounted_return += fl.discount * out.reward;
                fl.discount *= self.cfg.gamma;
                fl.data.energy_j += out.energy_j;
                fl.data.violations += out.violations;
                fl.eff_sum += out.efficiency;
                fl.fair_bits += out.report.fair_rate * self.scenario.slot_duration;
                fl.data.final_fairness = out.report.fairness;
                fl.data.steps += 1;
                let prev_state = std::mem::replace(&mut fl.state, out.next_state);
                if keep {
                    self.buf.push(Transition {
                        state: prev_state,
                        actions: act.actions,
                        logp: act.logp,
                        value: act.value,
                        reward: out.reward,
                        done: out.done,
                    });
                    self.buf_worker.push(w);
                }
                if out.done {
                    fl.data.eta_mean = fl.eff_sum / fl.data.steps.max(1) as f64;
                    fl.data.eta_episode = if fl.data.energy_j > 0.0 {
                        fl.fair_bits / fl.data.energy_j / 1000.0
                    } else {
                        0.0
                    };
                    self.records.push(fl.data.record(self.records.len()));
                    self.episodes_done += 1;
                    log::debug!(
                        "{}: episode {}/{}",
                        self.method.as_str(),
                        self.episodes_done,
                        self.cfg.episodes
                    );
                } else {
                    self.workers[w].inflight = Some(fl);
                }
                if keep && self.buf.len() == self.cfg.buffer {
                    self.run_update(writer)?;
                }
            }
            if !any_active {
                break;
            }
        }
        if keep && !self.buf.is_empty() {
            log::debug!(
                "{} trailing transitions below buffer capacity; no update",
                self.buf.len()
            );
            self.buf.clear();
            self.buf_worker.clear();
        }
        if let Some(w) = writer {
            if self.method.learns() {
                self.policy.save(&w.checkpoint_path("final.ckpt")?)?;
            }
            w.write_metrics(&self.records)?;
            w.write_update_stats(&self.update_stats)?;
        }
        Ok(())
    }

    /// Runs one optimization phase over the exactly-full buffer. Episodes
    /// the capacity boundary truncated are bootstrapped with the critic
    /// value of their pending state; the buffer is cleared afterwards and
    /// collection resumes under the updated parameters.
    fn run_update(&mut self, writer: Option<&RunWriter>) -> Result<()> {
        let bootstraps: Vec<f64> = self
            .workers
            .iter()
            .map(|wk| {
                wk.inflight
                    .as_ref()
                    .map_or(0.0, |fl| self.policy.critic.value(&fl.state.normalized))
            })
            .collect();
        let buffer = std::mem::take(&mut self.buf);
        let tags = std::mem::take(&mut self.buf_worker);
        let stats = self.update(&buffer, &tags, &bootstraps)?;
        log::info!(
            "update {}: {} transitions, first-minibatch ratio {:.6} (clipped {:.4}), policy loss {:.6}, value loss {:.6}",
            stats.update,
            stats.transitions,
            stats.first_mean_ratio,
            stats.first_clip_fraction,
            stats.mean_policy_loss,
            stats.mean_value_loss
        );
        if let Some(w) = writer {
            if self.cfg.checkpoint_every > 0 && stats.update % self.cfg.checkpoint_every == 0 {
                self.policy
                    .save(&w.checkpoint_path(&format!("update_{:04}.ckpt", stats.update))?)?;
            }
        }
        self.update_stats.push(stats);
        Ok(())
    }

    /// The optimization arithmetic for one full buffer: advantage and
    /// return targets per worker timeline, then the minibatch loop.
    fn update(
        &mut self,
        buffer: &[Transition],
        tags: &[usize],
        bootstraps: &[f64],
    ) -> Result<UpdateStats> {
        let gamma = self.cfg.gamma;
        let lambda = self.cfg.gae_lambda;
        let clip = self.cfg.clip;
        let entropy_coeff = self.cfg.entropy_coeff;
        let lr = self.cfg.lr;
        let grad_clip = self.cfg.grad_clip;

        let total = buffer.len();
        let mut streams: Vec<Vec<usize>> = vec![Vec::new(); self.workers.len()];
        for (i, &w) in tags.iter().enumerate() {
            streams[w].push(i);
        }
        let mut advs = vec![0.0; total];
        let mut rets = vec![0.0; total];
        for (w, idxs) in streams.iter().enumerate() {
            if idxs.is_empty() {
                continue;
            }
            let rewards: Vec<f64> = idxs.iter().map(|&i| buffer[i].reward).collect();
            let values: Vec<f64> = idxs.iter().map(|&i| buffer[i].value).collect();
            let dones: Vec<bool> = idxs.iter().map(|&i| buffer[i].done).collect();
            let a = if self.cfg.gae_double_sum {
                compute_gae_double_sum(&rewards, &values, &dones, bootstraps[w], gamma, lambda)
            } else {
                compute_gae(&rewards, &values, &dones, bootstraps[w], gamma, lambda)
            };
            let r = compute_returns_bootstrapped(&rewards, &dones, gamma, bootstraps[w]);
            for (j, &i) in idxs.iter().enumerate() {
                advs[i] = a[j];
                rets[i] = r[j];
            }
        }
        if self.cfg.normalize_advantages {
            let n = advs.len() as f64;
            let mean = advs.iter().sum::<f64>() / n;
            let std =
                (advs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt() + 1e-8;
            for a in &mut advs {
                *a = (*a - mean) / std;
            }
        }

        let batch = self.cfg.batch_size.min(total);
        let minibatches = ((self.cfg.reuse * total) / self.cfg.batch_size).max(1);
        let mut actor_grads: Vec<ActorGrads> =
            self.policy.actors.iter().map(|a| a.grads()).collect();
        let mut critic_grads = self.policy.critic.grads();
        let mut order: Vec<usize> = (0..total).collect();

        let mut first = MinibatchStats::default();
        let mut sum_policy_loss = 0.0;
        let mut sum_value_loss = 0.0;
        let mut sum_entropy = 0.0;
        let mut sum_actor_norm = 0.0;
        let mut sum_critic_norm = 0.0;

        for step in 0..minibatches {
            // Uniform sample without replacement via a partial shuffle.
            for i in 0..batch {
                let j = self.minibatch_rng.random_range(i..total);
                order.swap(i, j);
            }
            for g in &mut actor_grads {
                g.zero();
            }
            critic_grads.zero();
            let samples: Vec<SampleRef> = order[..batch]
                .iter()
                .map(|&i| SampleRef { transition: &buffer[i], advantage: advs[i], ret: rets[i] })
                .collect();
            let stats = minibatch_pass(
                &self.policy,
                &samples,
                clip,
                entropy_coeff,
                Some((&mut actor_grads, &mut critic_grads)),
            )?;
            if step == 0 {
                first = stats;
            }
            sum_policy_loss += stats.policy_loss;
            sum_value_loss += stats.value_loss;
            sum_entropy += stats.mean_entropy;

            let mut norm_sum = 0.0;
            for (ai, actor) in self.policy.actors.iter_mut().enumerate() {
                let mut params = actor.flatten();
                let mut g = Vec::with_capacity(params.len());
                actor_grads[ai].write_flat(&mut g);
                norm_sum +=
                    optimizer_step(&mut params, &mut g, &mut self.actor_opts[ai], lr, grad_clip)?;
                actor.unflatten(&params)?;
                actor.clamp_log_std();
            }
            sum_actor_norm += norm_sum / self.policy.actors.len() as f64;
            let mut params = self.policy.critic.flatten();
            let mut g = Vec::with_capacity(params.len());
            critic_grads.write_flat(&mut g);
            sum_critic_norm +=
                optimizer_step(&mut params, &mut g, &mut self.critic_opt, lr, grad_clip)?;
            self.policy.critic.unflatten(&params)?;
        }

        self.updates_done += 1;
        let mb = minibatches as f64;
        Ok(UpdateStats {
            update: self.updates_done,
            transitions: total,
            minibatches,
            first_mean_ratio: first.mean_ratio,
            first_clip_fraction: first.clip_fraction,
            mean_policy_loss: sum_policy_loss / mb,
            mean_value_loss: sum_value_loss / mb,
            mean_entropy: sum_entropy / mb,
            mean_actor_grad_norm: sum_actor_norm / mb,
            mean_critic_grad_norm: sum_critic_norm / mb,
        })
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

pub struct EvalOutcome {
    pub records: Vec<EpisodeRecord>,
    /// Per-UAV position polylines from the first evaluated episode.
    pub trajectories: Vec<Vec<[f64; 3]>>,
}

/// Evaluates a policy over fresh episodes. Greedy by default; `stochastic`
/// samples from the policy's distributions instead. A given `seed` yields
/// identical environments regardless of which policy is being evaluated.
pub fn evaluate_policy(
    policy: &PolicySet,
    scenario: &ScenarioConfig,
    opts: EnvOptions,
    seed: u64,
    episodes: usize,
    stochastic: bool,
    gamma: f64,
) -> Result<EvalOutcome> {
    let mut env = Env::new(scenario.clone(), opts, seed)?;
    let mut rng = if stochastic { Some(stream(seed, stream_id::POLICY)) } else { None };
    let mut records = Vec::with_capacity(episodes);
    let mut trajectories = Vec::new();
    for ep in 0..episodes {
        let data = if ep == 0 {
            run_episode(&mut env, policy, rng.as_mut(), gamma, false, Some(&mut trajectories))?
        } else {
            run_episode(&mut env, policy, rng.as_mut(), gamma, false, None)?
        };
        records.push(data.record(ep));
    }
    Ok(EvalOutcome { records, trajectories })
}
