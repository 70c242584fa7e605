//! Scenario configuration, geometry, ground-user mobility, obstructed
//! regions, UAV kinematic state, and the seeded randomness contract.

use crate::energy::AeroParams;
use crate::vec3::Vec3;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Exact dBm → watt conversion.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Exact watt → dBm conversion (w > 0).
pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

// ---------------------------------------------------------------------------
// Named random streams
// ---------------------------------------------------------------------------

/// Stream ids for the seeded generator. Each randomness source gets its own
/// stream of one ChaCha generator family so that toggling one source (say,
/// fading) never perturbs the draws of another (say, mobility).
pub mod stream_id {
    pub const MOBILITY: u64 = 1;
    pub const FADING: u64 = 2;
    pub const REGIONS: u64 = 3;
    pub const POLICY: u64 = 4;
    pub const MINIBATCH: u64 = 5;
    pub const INIT: u64 = 6;
}

/// A seeded generator on a named stream.
pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Derives an independent seed for a parallel worker or auxiliary context.
pub fn derived_seed(seed: u64, tag: u64) -> u64 {
    seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// The environment-side random streams: user mobility, small-scale fading,
/// and obstructed-region placement.
pub struct RngStreams {
    pub mobility: ChaCha8Rng,
    pub fading: ChaCha8Rng,
    pub regions: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        RngStreams {
            mobility: stream(seed, stream_id::MOBILITY),
            fading: stream(seed, stream_id::FADING),
            regions: stream(seed, stream_id::REGIONS),
        }
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Aerodynamic constants of the rotor-craft power model.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeroConfig {
    /// Air density, kg/m³.
    pub rho: f64,
    /// Rotor disc area, m².
    pub disc_area: f64,
    /// Blade profile drag coefficient.
    pub delta: f64,
    /// Rotor solidity.
    pub rotor_solidity: f64,
    /// Fuselage equivalent flat plate area, m².
    pub plate_area: f64,
    /// Thrust coefficient.
    pub thrust_coeff: f64,
    /// Induced power correction factor.
    pub induced_corr: f64,
}

impl Default for AeroConfig {
    fn default() -> Self {
        AeroConfig {
            rho: 1.225,
            disc_area: 0.79,
            delta: 0.012,
            rotor_solidity: 0.1,
            plate_area: 0.01,
            thrust_coeff: 0.3,
            induced_corr: 0.13,
        }
    }
}

/// Obstructed-area placement parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObstructionConfig {
    /// Number of obstructed regions re-drawn each episode.
    pub count: usize,
    /// Half side length of each axis-aligned square region, meters.
    pub half_extent: f64,
}

impl Default for ObstructionConfig {
    fn default() -> Self {
        ObstructionConfig { count: 2, half_extent: 150.0 }
    }
}

/// Full scenario description. Defaults reproduce the reference setup: three
/// UAVs serving nine users over three subcarriers in a 1500 m × 1500 m area.
///
/// Power-like quantities are configured in dBm (`*_dbm` fields) and exposed
/// in linear watts through [`ScenarioConfig::p_max`] and
/// [`ScenarioConfig::noise_power`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Service area extents, meters.
    pub area_x: f64,
    pub area_y: f64,
    pub area_z: f64,
    /// Number of UAVs (M).
    pub num_uavs: usize,
    /// Number of ground users (K).
    pub num_users: usize,
    /// Number of OFDMA subcarriers per UAV (N).
    pub num_subcarriers: usize,
    /// Mission horizon in slots (T).
    pub horizon: usize,
    /// Slot duration, seconds (Ts).
    pub slot_duration: f64,
    /// Altitude band, meters.
    pub h_min: f64,
    pub h_max: f64,
    /// Maximum UAV speed, m/s.
    pub v_max: f64,
    /// Maximum along-velocity acceleration, m/s².
    pub a_max: f64,
    /// Minimum safe inter-UAV distance, meters.
    pub d_min_uav: f64,
    /// Maximum per-slot travel distance of a ground user, meters.
    pub d_max_user: f64,
    /// Per-UAV transmit power budget, dBm.
    pub p_max_dbm: f64,
    /// Noise power, dBm.
    pub noise_power_dbm: f64,
    /// Carrier frequency, GHz.
    pub carrier_freq_ghz: f64,
    /// Subcarrier bandwidth, Hz. A scaling knob (not a published constant)
    /// chosen so energy-efficiency values land in the kbits/J regime.
    pub subcarrier_bandwidth_hz: f64,
    /// UAV mass, kg.
    pub uav_mass: f64,
    /// Gravitational acceleration magnitude, m/s².
    pub gravity: f64,
    pub aero: AeroConfig,
    pub obstruction: ObstructionConfig,
    /// Base seed for all random streams.
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            area_x: 1500.0,
            area_y: 1500.0,
            area_z: 100.0,
            num_uavs: 3,
            num_users: 9,
            num_subcarriers: 3,
            horizon: 60,
            slot_duration: 1.0,
            h_min: 40.0,
            h_max: 100.0,
            v_max: 20.0,
            a_max: 5.0,
            d_min_uav: 25.0,
            d_max_user: 10.0,
            p_max_dbm: 30.0,
            noise_power_dbm: -107.0,
            carrier_freq_ghz: 2.0,
            subcarrier_bandwidth_hz: 1000.0,
            uav_mass: 2.0,
            gravity: 9.8,
            aero: AeroConfig::default(),
            obstruction: ObstructionConfig::default(),
            seed: 17,
        }
    }
}

impl ScenarioConfig {
    /// Transmit power budget in linear watts.
    pub fn p_max(&self) -> f64 {
        dbm_to_watts(self.p_max_dbm)
    }

    /// Noise power in linear watts.
    pub fn noise_power(&self) -> f64 {
        dbm_to_watts(self.noise_power_dbm)
    }

    /// Aerodynamic parameter bundle for the energy model.
    pub fn aero_params(&self) -> AeroParams {
        AeroParams {
            rho: self.aero.rho,
            disc_area: self.aero.disc_area,
            delta: self.aero.delta,
            rotor_solidity: self.aero.rotor_solidity,
            plate_area: self.aero.plate_area,
            thrust_coeff: self.aero.thrust_coeff,
            induced_corr: self.aero.induced_corr,
            mass: self.uav_mass,
            g_mag: self.gravity,
        }
    }

    /// Length of the flat state vector: 2K user coordinates plus, per UAV,
    /// a 3D position and a scalar speed.
    pub fn state_dim(&self) -> usize {
        2 * self.num_users + 4 * self.num_uavs
    }

    /// Validates all field invariants, naming the offending field on failure.
    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: f64) -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        }
        positive("area_x", self.area_x)?;
        positive("area_y", self.area_y)?;
        positive("area_z", self.area_z)?;
        for (name, v) in [
            ("num_uavs", self.num_uavs),
            ("num_users", self.num_users),
            ("num_subcarriers", self.num_subcarriers),
            ("horizon", self.horizon),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        positive("slot_duration", self.slot_duration)?;
        positive("h_min", self.h_min)?;
        if !(self.h_min < self.h_max && self.h_max <= self.area_z) {
            return Err(Error::Config(format!(
                "altitude band must satisfy 0 < h_min < h_max <= area_z, got h_min={}, h_max={}, area_z={}",
                self.h_min, self.h_max, self.area_z
            )));
        }
        positive("v_max", self.v_max)?;
        positive("a_max", self.a_max)?;
        if self.d_min_uav < 0.0 {
            return Err(Error::Config("d_min_uav must be nonnegative".into()));
        }
        if self.d_max_user < 0.0 {
            return Err(Error::Config("d_max_user must be nonnegative".into()));
        }
        positive("carrier_freq_ghz", self.carrier_freq_ghz)?;
        positive("subcarrier_bandwidth_hz", self.subcarrier_bandwidth_hz)?;
        positive("uav_mass", self.uav_mass)?;
        positive("gravity", self.gravity)?;
        positive("aero.rho", self.aero.rho)?;
        positive("aero.disc_area", self.aero.disc_area)?;
        positive("aero.delta", self.aero.delta)?;
        positive("aero.rotor_solidity", self.aero.rotor_solidity)?;
        positive("aero.plate_area", self.aero.plate_area)?;
        positive("aero.thrust_coeff", self.aero.thrust_coeff)?;
        positive("aero.induced_corr", self.aero.induced_corr)?;
        if self.obstruction.half_extent < 0.0 {
            return Err(Error::Config("obstruction.half_extent must be nonnegative".into()));
        }
        if 2.0 * self.obstruction.half_extent > self.area_x.min(self.area_y) {
            return Err(Error::Config(
                "obstruction.half_extent too large: region does not fit inside the area".into(),
            ));
        }
        // Initial UAV spacing on the line formation must respect the safe
        // distance; with defaults the spacing is 375 m >= 25 m.
        let spacing = self.area_x / (self.num_uavs as f64 + 1.0);
        if self.num_uavs > 1 && spacing < self.d_min_uav {
            return Err(Error::Config(format!(
                "num_uavs: initial spacing {spacing:.1} m violates d_min_uav {} m",
                self.d_min_uav
            )));
        }
        // Channel resources are meant to be scarce relative to users.
        if self.num_uavs * self.num_subcarriers > self.num_users {
            log::warn!(
                "M*N = {} exceeds K = {}: channel resources are not scarce in this scenario",
                self.num_uavs * self.num_subcarriers,
                self.num_users
            );
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// World state
// ---------------------------------------------------------------------------

/// Kinematic state of one UAV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UavState {
    /// Position, meters.
    pub position: Vec3,
    /// Velocity, m/s.
    pub velocity: Vec3,
    /// Cached speed, ‖velocity‖.
    pub speed: f64,
}

impl UavState {
    pub fn at_rest(position: Vec3) -> Self {
        UavState { position, velocity: Vec3::ZERO, speed: 0.0 }
    }
}

/// Horizontal position of one ground user.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserState {
    pub x: f64,
    pub y: f64,
}

/// Axis-aligned square area in which users lose line of sight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObstructedRegion {
    pub center_x: f64,
    pub center_y: f64,
    pub half_extent: f64,
}

impl ObstructedRegion {
    /// Builds a region clamped to lie fully inside the area.
    pub fn clamped(center_x: f64, center_y: f64, half_extent: f64, area_x: f64, area_y: f64) -> Self {
        let cx = center_x.clamp(half_extent, area_x - half_extent);
        let cy = center_y.clamp(half_extent, area_y - half_extent);
        ObstructedRegion { center_x: cx, center_y: cy, half_extent }
    }

    /// Closed-boundary membership test: points exactly on the edge count as
    /// inside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (x - self.center_x).abs() <= self.half_extent && (y - self.center_y).abs() <= self.half_extent
    }
}

/// Complete mutable world: UAVs, users, obstructed regions, the slot index,
/// and the cumulative-rate accumulators that feed the fairness index.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WorldState {
    pub uavs: Vec<UavState>,
    pub users: Vec<UserState>,
    pub regions: Vec<ObstructedRegion>,
    /// Completed slots in the current episode.
    pub slot: usize,
    /// Per-user cumulative achieved rate since episode start, bits/s summed
    /// over slots.
    pub cumulative_user_rate: Vec<f64>,
    /// Sum of `cumulative_user_rate`.
    pub cumulative_total_rate: f64,
}

/// Builds the initial world: UAVs in a fixed line formation at mid-altitude
/// (evenly spaced on y = area_y/2, zero velocity), users i.i.d. uniform over
/// the area, and obstructed regions placed uniformly at random fully inside
/// the area.
pub fn init_world(cfg: &ScenarioConfig, streams: &mut RngStreams) -> Result<WorldState> {
    cfg.validate()?;
    let mid_alt = 0.5 * (cfg.h_min + cfg.h_max);
    let uavs = (0..cfg.num_uavs)
        .map(|m| {
            let x = cfg.area_x * (m as f64 + 1.0) / (cfg.num_uavs as f64 + 1.0);
            UavState::at_rest(Vec3::new(x, cfg.area_y / 2.0, mid_alt))
        })
        .collect();
    let users = (0..cfg.num_users)
        .map(|_| UserState {
            x: streams.mobility.random_range(0.0..cfg.area_x),
            y: streams.mobility.random_range(0.0..cfg.area_y),
        })
        .collect();
    let regions = (0..cfg.obstruction.count)
        .map(|_| {
            let h = cfg.obstruction.half_extent;
            ObstructedRegion::clamped(
                streams.regions.random_range(0.0..cfg.area_x),
                streams.regions.random_range(0.0..cfg.area_y),
                h,
                cfg.area_x,
                cfg.area_y,
            )
        })
        .collect();
    Ok(WorldState {
        uavs,
        users,
        regions,
        slot: 0,
        cumulative_user_rate: vec![0.0; cfg.num_users],
        cumulative_total_rate: 0.0,
    })
}

/// Specular reflection of a coordinate into [0, max]: an overshoot past a
/// boundary is folded back by the overshot amount.
pub fn reflect_into(mut x: f64, max: f64) -> f64 {
    loop {
        if x < 0.0 {
            x = -x;
        } else if x > max {
            x = 2.0 * max - x;
        } else {
            return x;
        }
    }
}

impl WorldState {
    /// Moves every user by a random distance U(0, d_max_user) in a random
    /// direction U(0, 2π); users hitting a boundary reverse the overshooting
    /// component (specular reflection) and stay inside the area.
    pub fn step_users(&mut self, cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) {
        if cfg.d_max_user <= 0.0 {
            return;
        }
        for user in &mut self.users {
            let dist = rng.random_range(0.0..cfg.d_max_user);
            let angle = rng.random_range(0.0..TAU);
            user.x = reflect_into(user.x + dist * angle.cos(), cfg.area_x);
            user.y = reflect_into(user.y + dist * angle.sin(), cfg.area_y);
        }
    }

    /// True iff the user currently stands inside any obstructed region
    /// (closed boundary).
    pub fn is_obstructed(&self, user: usize) -> bool {
        assert!(user < self.users.len(), "user index {user} out of range");
        let u = &self.users[user];
        self.regions.iter().any(|r| r.contains(u.x, u.y))
    }

    /// Adds one slot's per-user rates into the cumulative accumulators.
    pub fn accumulate_rates(&mut self, per_user: &[f64]) {
        debug_assert_eq!(per_user.len(), self.cumulative_user_rate.len());
        for (acc, r) in self.cumulative_user_rate.iter_mut().zip(per_user) {
            *acc += r;
        }
        self.cumulative_total_rate += per_user.iter().sum::<f64>();
    }
}
