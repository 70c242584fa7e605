//! Slot-stepped simulation environment: applies joint hybrid actions,
//! advances UAV kinematics and user mobility, draws fading, and produces the
//! fairness-weighted energy-efficiency reward.
//!
//! Continuous action dimensions are exchanged in *raw* (unbounded) space and
//! squashed here with a scaled sigmoid; the policy's log-probabilities are
//! taken in raw space, so the environment is the single owner of the bounds.

use crate::channel::{
    self, AllocationDecision, LinkGain, RateReport,
};
use crate::energy;
use crate::world::{init_world, RngStreams, ScenarioConfig, UavState, WorldState};
use crate::{Error, Result};
use crate::vec3::Vec3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Polar (zenith) angle bounds: the flight direction stays within ±30° of
/// horizontal, so commanded climbs and descents are never vertical.
pub const POLAR_MIN: f64 = PI / 3.0;
pub const POLAR_MAX: f64 = 2.0 * PI / 3.0;

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps an unbounded raw value into the open interval `(lo, hi)`.
pub fn squash(raw: f64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * sigmoid(raw)
}

/// One agent's action for one slot: per-subcarrier user picks (already
/// mask-valid), raw power logits, and raw motion commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridAction {
    /// `picks[n]` is the user served on subcarrier `n`, or `None`.
    pub picks: Vec<Option<usize>>,
    /// Raw per-subcarrier power logits; see [`map_power`].
    pub power_raw: Vec<f64>,
    pub speed_raw: f64,
    pub azimuth_raw: f64,
    pub polar_raw: f64,
}

impl HybridAction {
    /// Commanded speed in `(0, v_max)`.
    pub fn speed_cmd(&self, v_max: f64) -> f64 {
        squash(self.speed_raw, 0.0, v_max)
    }

    /// Commanded azimuth in `(0, 2π)`.
    pub fn azimuth(&self) -> f64 {
        squash(self.azimuth_raw, 0.0, TAU)
    }

    /// Commanded polar angle from the +z axis, in `(π/3, 2π/3)`.
    pub fn polar(&self) -> f64 {
        squash(self.polar_raw, POLAR_MIN, POLAR_MAX)
    }
}

/// How raw power logits become per-subcarrier transmit powers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerMap {
    /// Softmax over the logits scaled by the power budget: the UAV always
    /// spends its full budget, split across subcarriers.
    #[default]
    Softmax,
    /// Independent sigmoid per subcarrier, each capped at `p_max / N`, so
    /// the budget holds without coupling the channels.
    ChannelSigmoid,
}

/// Maps raw logits to transmit powers in watts; the sum never exceeds
/// `p_max` under either mapping.
pub fn map_power(raw: &[f64], p_max: f64, map: PowerMap) -> Vec<f64> {
    match map {
        PowerMap::Softmax => {
            let m = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = raw.iter().map(|r| (r - m).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.into_iter().map(|e| p_max * e / sum).collect()
        }
        PowerMap::ChannelSigmoid => {
            let cap = p_max / raw.len() as f64;
            raw.iter().map(|r| cap * sigmoid(*r)).collect()
        }
    }
}

/// Reward shaping and power-mapping knobs (everything that is not scenario
/// physics).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvOptions {
    /// Weight of the per-slot separation-violation penalty, in the same
    /// units as the efficiency term.
    pub penalty_coeff: f64,
    /// Scales the whole reward (efficiency minus penalty).
    pub reward_scale: f64,
    pub power_map: PowerMap,
}

impl Default for EnvOptions {
    fn default() -> Self {
        EnvOptions { penalty_coeff: 0.5, reward_scale: 1.0, power_map: PowerMap::Softmax }
    }
}

/// Which kinematic limits clipped a commanded move.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct KinematicsClamps {
    pub accel: bool,
    pub speed: bool,
    pub altitude: bool,
    pub area: bool,
}

impl KinematicsClamps {
    pub fn any(&self) -> bool {
        self.accel || self.speed || self.altitude || self.area
    }
}

/// Advances one UAV by one slot from a commanded (speed, azimuth, polar)
/// triple. The commanded speed is limited to within `a_max·Ts` of the
/// previous speed and to `[0, v_max]`; the new position is clipped to the
/// service volume, and the realized velocity is whatever displacement
/// survived the clipping.
pub fn apply_kinematics(
    uav: &UavState,
    speed_cmd: f64,
    azimuth: f64,
    polar: f64,
    cfg: &ScenarioConfig,
) -> (UavState, KinematicsClamps) {
    let ts = cfg.slot_duration;
    let mut clamps = KinematicsClamps::default();

    let lo = (uav.speed - cfg.a_max * ts).max(0.0);
    let hi = uav.speed + cfg.a_max * ts;
    let mut speed = speed_cmd;
    if speed < lo || speed > hi {
        speed = speed.clamp(lo, hi);
        clamps.accel = true;
    }
    if speed > cfg.v_max {
        speed = cfg.v_max;
        clamps.speed = true;
    }

    let (sin_p, cos_p) = polar.sin_cos();
    let dir = Vec3::new(sin_p * azimuth.cos(), sin_p * azimuth.sin(), cos_p);
    let mut pos = uav.position + dir * (speed * ts);

    let z = pos.z.clamp(cfg.h_min, cfg.h_max);
    if z != pos.z {
        clamps.altitude = true;
        pos.z = z;
    }
    let x = pos.x.clamp(0.0, cfg.area_x);
    let y = pos.y.clamp(0.0, cfg.area_y);
    if x != pos.x || y != pos.y {
        clamps.area = true;
        pos.x = x;
        pos.y = y;
    }

    let velocity = (pos - uav.position) * (1.0 / ts);
    (UavState { position: pos, velocity, speed: velocity.norm() }, clamps)
}

/// Observation for the policy: flat raw values and the same vector
/// normalized by per-component scales.
///
/// Layout: user positions `(x, y)` for each user, then UAV positions
/// `(x, y, z)` for each UAV, then UAV speeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl EnvState {
    fn from_world(world: &WorldState, cfg: &ScenarioConfig) -> Self {
        let mut raw = Vec::with_capacity(cfg.state_dim());
        let mut scales = Vec::with_capacity(cfg.state_dim());
        for u in &world.users {
            raw.extend_from_slice(&[u.x, u.y]);
            scales.extend_from_slice(&[cfg.area_x, cfg.area_y]);
        }
        for uav in &world.uavs {
            raw.extend_from_slice(&[uav.position.x, uav.position.y, uav.position.z]);
            scales.extend_from_slice(&[cfg.area_x, cfg.area_y, cfg.area_z]);
        }
        for uav in &world.uavs {
            raw.push(uav.speed);
            scales.push(cfg.v_max);
        }
        let normalized = raw.iter().zip(&scales).map(|(r, s)| r / s).collect();
        EnvState { raw, normalized }
    }
}

/// Everything one slot produced.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub next_state: EnvState,
    pub reward: f64,
    /// Fairness-weighted energy efficiency for this slot, in kbits/J.
    pub efficiency: f64,
    pub report: RateReport,
    /// Total propulsion energy of the swarm this slot, in joules.
    pub energy_j: f64,
    /// Number of UAV pairs closer than the separation minimum.
    pub violations: usize,
    pub clamps: Vec<KinematicsClamps>,
    pub done: bool,
}

/// The simulation environment. Deterministic given its seed: mobility,
/// fading, and region placement each consume an independent RNG stream.
pub struct Env {
    pub cfg: ScenarioConfig,
    pub opts: EnvOptions,
    world: Option<WorldState>,
    streams: RngStreams,
}

impl Env {
    pub fn new(cfg: ScenarioConfig, opts: EnvOptions, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Env { cfg, opts, world: None, streams: RngStreams::new(seed) })
    }

    /// Starts a new episode and returns its initial observation. Successive
    /// resets continue the same RNG streams, so each episode differs but the
    /// whole sequence is reproducible.
    pub fn reset(&mut self) -> Result<EnvState> {
        let world = init_world(&self.cfg, &mut self.streams)?;
        let state = EnvState::from_world(&world, &self.cfg);
        self.world = Some(world);
        Ok(state)
    }

    pub fn world(&self) -> Result<&WorldState> {
        self.world.as_ref().ok_or_else(|| Error::Invalid("environment not reset".into()))
    }

    /// Applies one joint action for the current slot.
    pub fn step(&mut self, actions: &[HybridAction]) -> Result<StepOutcome> {
        let cfg = self.cfg.clone();
        let opts = self.opts;
        let world = self
            .world
            .as_mut()
            .ok_or_else(|| Error::Invalid("environment not reset".into()))?;
        if actions.len() != cfg.num_uavs {
            return Err(Error::Invalid(format!(
                "{} actions for {} UAVs",
                actions.len(),
                cfg.num_uavs
            )));
        }
        let ts = cfg.slot_duration;

        // 1. Kinematics. The power model's acceleration is the along-track
        //    speed change: commanded direction may turn instantly, but the
        //    speed band keeps |a| within a_max, the regime the rotor model
        //    is fitted for.
        let mut clamps = Vec::with_capacity(cfg.num_uavs);
        let mut accels = Vec::with_capacity(cfg.num_uavs);
        for (uav, action) in world.uavs.iter_mut().zip(actions) {
            let old_speed = uav.speed;
            let old_dir = uav.velocity.unit_or_zero();
            let (next, c) = apply_kinematics(
                uav,
                action.speed_cmd(cfg.v_max),
                action.azimuth(),
                action.polar(),
                &cfg,
            );
            let mut dir = next.velocity.unit_or_zero();
            if dir == Vec3::ZERO {
                dir = old_dir;
            }
            accels.push(dir * ((next.speed - old_speed) / ts));
            clamps.push(c);
            *uav = next;
        }

        // 2. Separation violations between the new positions.
        let mut violations = 0;
        for m in 0..cfg.num_uavs {
            for j in m + 1..cfg.num_uavs {
                if (world.uavs[m].position - world.uavs[j].position).norm() < cfg.d_min_uav {
                    violations += 1;
                }
            }
        }

        // 3. Channel gains for every (UAV, user) pair: unit-mean exponential
        //    fading on top of the probabilistic-mean path loss, with users
        //    inside an obstructed region pinned to the non-line-of-sight
        //    loss.
        let obstructed: Vec<bool> =
            (0..cfg.num_users).map(|k| world.is_obstructed(k)).collect();
        let mut gains: Vec<Vec<LinkGain>> = Vec::with_capacity(cfg.num_uavs);
        for uav in &world.uavs {
            let mut row = Vec::with_capacity(cfg.num_users);
            for (k, user) in world.users.iter().enumerate() {
                let fading: f64 = self.streams.fading.sample(rand_distr::Exp1);
                let h = uav.position.z;
                let d = channel::distance_3d(uav, user);
                let (mean_db, los_prob) = if obstructed[k] {
                    (channel::mean_pathloss_obstructed(h, d, cfg.carrier_freq_ghz)?, 0.0)
                } else {
                    (
                        channel::mean_pathloss(h, d, cfg.carrier_freq_ghz)?,
                        channel::los_probability(h, d)?,
                    )
                };
                row.push(LinkGain {
                    gain: channel::channel_gain(mean_db, fading),
                    mean_pathloss_db: mean_db,
                    los_prob,
                });
            }
            gains.push(row);
        }

        // 4. Rates and cumulative fairness under the commanded allocation.
        let assign: Vec<Option<usize>> = actions
            .iter()
            .flat_map(|a| a.picks.iter().cloned())
            .collect();
        let power: Vec<f64> = actions
            .iter()
            .flat_map(|a| map_power(&a.power_raw, cfg.p_max(), opts.power_map))
            .collect();
        let alloc = AllocationDecision::new(
            cfg.num_uavs,
            cfg.num_subcarriers,
            cfg.num_users,
            &assign,
            &power,
            cfg.p_max(),
        )?;
        let report = channel::rates_and_fairness(
            &alloc,
            &gains,
            world,
            cfg.subcarrier_bandwidth_hz,
            cfg.noise_power(),
        );

        // 5. Propulsion energy of the whole swarm this slot.
        let aero = cfg.aero_params();
        let energy_j = energy::swarm_energy(
            world
                .uavs
                .iter()
                .zip(&accels)
                .map(|(uav, a)| energy::propulsion_energy(uav.velocity, *a, &aero, ts)),
        );

        // 6. Reward: scaled fairness-weighted energy efficiency (kbits/J)
        //    minus the separation penalty.
        let eta_bits = energy::energy_efficiency(report.fairness, report.total, energy_j, ts)?;
        let efficiency = eta_bits / 1000.0;
        let reward =
            opts.reward_scale * (efficiency - opts.penalty_coeff * violations as f64);
        if !reward.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite reward at slot {}",
                world.slot
            )));
        }

        // 7. User mobility, then the slot counter.
        world.step_users(&cfg, &mut self.streams.mobility);
        world.slot += 1;
        let done = world.slot >= cfg.horizon;

        let next_state = EnvState::from_world(world, &cfg);
        Ok(StepOutcome {
            next_state,
            reward,
            efficiency,
            report,
            energy_j,
            violations,
            clamps,
            done,
        })
    }
}
