//! Air-to-ground channel: path loss, LoS probability, small-scale fading
//! gains, SINR under inter-UAV interference, per-user rates, and the
//! Jain-fairness-weighted rate objective.

use crate::world::{UavState, UserState, WorldState};
use crate::{Error, Result};

/// Probabilistic LoS/NLoS link statistics for one UAV–user pair.
#[derive(Clone, Copy, Debug)]
pub struct LinkGain {
    /// Realized power gain |g|² (mean path loss plus fading), dimensionless.
    pub gain: f64,
    /// Mean path loss, dB.
    pub mean_pathloss_db: f64,
    /// LoS probability used for the mean (0 for obstructed users).
    pub los_prob: f64,
}

/// 3D distance from a UAV to a ground user (user at z = 0).
pub fn distance_3d(uav: &UavState, user: &UserState) -> f64 {
    let dx = uav.position.x - user.x;
    let dy = uav.position.y - user.y;
    let dz = uav.position.z;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

fn check_geometry(h: f64, d: f64) -> Result<()> {
    if h <= 0.0 {
        return Err(Error::Config(format!("altitude must be positive, got {h}")));
    }
    // Allow a hair of floating-point slack: d is often computed as
    // sqrt(r² + h²) and can round a fraction of an ulp below h at r = 0.
    if d < h * (1.0 - 1e-12) {
        return Err(Error::Config(format!(
            "link distance {d} shorter than altitude {h}: geometry impossible"
        )));
    }
    Ok(())
}

fn los_term(h: f64, d: f64, fc_ghz: f64) -> f64 {
    30.9 + (22.25 - 0.5 * h.log10()) * d.log10() + 20.0 * fc_ghz.log10()
}

fn nlos_term(h: f64, d: f64, fc_ghz: f64) -> f64 {
    let raw = 32.4 + (43.2 - 7.6 * h.log10()) * d.log10() + 20.0 * fc_ghz.log10();
    raw.max(los_term(h, d, fc_ghz))
}

/// Path loss in dB for a link of 3D length `d` from altitude `h`, at carrier
/// frequency `fc_ghz`. The NLoS branch is floored at the LoS value.
pub fn pathloss(h: f64, d: f64, fc_ghz: f64, los: bool) -> Result<f64> {
    check_geometry(h, d)?;
    if fc_ghz <= 0.0 {
        return Err(Error::Config(format!("carrier frequency must be positive, got {fc_ghz}")));
    }
    Ok(if los { los_term(h, d, fc_ghz) } else { nlos_term(h, d, fc_ghz) })
}

/// Breakpoint distance d0 and decay constant p1 of the LoS-probability model,
/// both functions of altitude alone.
pub fn los_model_constants(h: f64) -> Result<(f64, f64)> {
    if h <= 0.0 {
        return Err(Error::Config(format!("altitude must be positive, got {h}")));
    }
    let d0 = (294.05 * h.log10() - 432.94).max(18.0);
    let p1 = 233.98 * h.log10() - 0.95;
    if p1 <= 0.0 {
        return Err(Error::Config(format!(
            "altitude {h} m is below the validity range of the LoS model (p1 = {p1})"
        )));
    }
    Ok((d0, p1))
}

/// Probability of line of sight for a link of 3D length `d` from altitude
/// `h`: 1 inside the breakpoint radius, then a hyperbolic-plus-exponential
/// decay in the horizontal range, clamped to [0, 1].
pub fn los_probability(h: f64, d: f64) -> Result<f64> {
    check_geometry(h, d)?;
    let (d0, p1) = los_model_constants(h)?;
    let r = (d * d - h * h).max(0.0).sqrt();
    if r <= d0 {
        return Ok(1.0);
    }
    let p = d0 / r + (-r / p1 + d0 / p1).exp();
    Ok(p.clamp(0.0, 1.0))
}

/// LoS-probability-weighted mean path loss in dB.
pub fn mean_pathloss(h: f64, d: f64, fc_ghz: f64) -> Result<f64> {
    let p_los = los_probability(h, d)?;
    Ok(p_los * los_term(h, d, fc_ghz) + (1.0 - p_los) * nlos_term(h, d, fc_ghz))
}

/// Mean path loss for a user inside an obstructed region: LoS probability is
/// forced to 0, so the mean collapses to the NLoS branch exactly.
pub fn mean_pathloss_obstructed(h: f64, d: f64, fc_ghz: f64) -> Result<f64> {
    pathloss(h, d, fc_ghz, false)
}

/// Realized power gain |g|² from a mean path loss in dB and a nonnegative
/// unit-mean power-fading draw.
pub fn channel_gain(mean_pathloss_db: f64, fading: f64) -> f64 {
    debug_assert!(fading >= 0.0, "fading draw must be nonnegative");
    fading * 10f64.powf(-mean_pathloss_db / 10.0)
}

// ---------------------------------------------------------------------------
// Allocation and rates
// ---------------------------------------------------------------------------

/// A joint user–channel assignment and power split for one slot.
///
/// Stored as one `Option<user>` per (UAV, subcarrier) slot, which makes "at
/// most one user per slot" structural; the constructor rejects duplicate
/// users across slots and over-budget power rows, and zeroes the power of
/// unassigned subcarriers so interference sums can run over raw powers.
#[derive(Clone, Debug)]
pub struct AllocationDecision {
    num_uavs: usize,
    num_subcarriers: usize,
    num_users: usize,
    /// Indexed m * N + n.
    assign: Vec<Option<usize>>,
    /// Indexed m * N + n, watts; zero wherever `assign` is `None`.
    power: Vec<f64>,
}

impl AllocationDecision {
    pub fn new(
        num_uavs: usize,
        num_subcarriers: usize,
        num_users: usize,
        assign: &[Option<usize>],
        power: &[f64],
        p_max: f64,
    ) -> Result<Self> {
        let slots = num_uavs * num_subcarriers;
        if assign.len() != slots || power.len() != slots {
            return Err(Error::Invalid(format!(
                "allocation expects {slots} slots, got {} assignments and {} powers",
                assign.len(),
                power.len()
            )));
        }
        let mut seen = vec![false; num_users];
        for (i, a) in assign.iter().enumerate() {
            if let Some(k) = *a {
                if k >= num_users {
                    return Err(Error::Invalid(format!("allocation: user index {k} out of range")));
                }
                if seen[k] {
                    return Err(Error::Invalid(format!(
                        "allocation: user {k} assigned to more than one (uav, subcarrier) slot"
                    )));
                }
                seen[k] = true;
            }
            if power[i] < 0.0 || !power[i].is_finite() {
                return Err(Error::Invalid(format!("allocation: invalid power {}", power[i])));
            }
        }
        let mut power_owned = power.to_vec();
        for m in 0..num_uavs {
            let row = &mut power_owned[m * num_subcarriers..(m + 1) * num_subcarriers];
            let total: f64 = row.iter().sum();
            if total > p_max * (1.0 + 1e-9) {
                return Err(Error::Invalid(format!(
                    "allocation: uav {m} power {total} W exceeds budget {p_max} W"
                )));
            }
            for (n, p) in row.iter_mut().enumerate() {
                if assign[m * num_subcarriers + n].is_none() {
                    *p = 0.0;
                }
            }
        }
        Ok(AllocationDecision {
            num_uavs,
            num_subcarriers,
            num_users,
            assign: assign.to_vec(),
            power: power_owned,
        })
    }

    pub fn num_uavs(&self) -> usize {
        self.num_uavs
    }

    pub fn num_subcarriers(&self) -> usize {
        self.num_subcarriers
    }

    /// The user served by UAV `m` on subcarrier `n`, if any.
    pub fn user_at(&self, m: usize, n: usize) -> Option<usize> {
        self.assign[m * self.num_subcarriers + n]
    }

    /// Transmit power of UAV `m` on subcarrier `n`, watts.
    pub fn power(&self, m: usize, n: usize) -> f64 {
        self.power[m * self.num_subcarriers + n]
    }

    /// Boolean assignment-indicator view.
    pub fn phi(&self, k: usize, m: usize, n: usize) -> bool {
        debug_assert!(k < self.num_users);
        self.user_at(m, n) == Some(k)
    }
}

/// SINR at user `k` listening to UAV `m` on subcarrier `n`: the serving power
/// times the link gain over noise plus co-channel power from every other UAV,
/// whatever those UAVs' assignments (their unassigned subcarriers carry zero
/// power by construction).
pub fn sinr(
    alloc: &AllocationDecision,
    gains: &[Vec<LinkGain>],
    k: usize,
    m: usize,
    n: usize,
    noise_w: f64,
) -> f64 {
    let signal = alloc.power(m, n) * gains[m][k].gain;
    let mut interference = 0.0;
    for j in 0..alloc.num_uavs() {
        if j != m {
            interference += alloc.power(j, n) * gains[j][k].gain;
        }
    }
    signal / (interference + noise_w)
}

/// One slot's rate outcome.
#[derive(Clone, Debug)]
pub struct RateReport {
    /// Achieved rate per user this slot, bits/s.
    pub per_user: Vec<f64>,
    /// Sum rate this slot, bits/s.
    pub total: f64,
    /// Cumulative-rate ratios f_k (1/K each when nothing has been sent yet).
    pub ratios: Vec<f64>,
    /// Jain fairness index of the ratios, in [1/K, 1].
    pub fairness: f64,
    /// Fairness-weighted sum rate, bits/s.
    pub fair_rate: f64,
}

/// Jain's fairness index (Σx)² / (n·Σx²); 1 for an empty or all-zero input
/// (perfect equality by convention).
pub fn jain(xs: &[f64]) -> f64 {
    let sum: f64 = xs.iter().sum();
    let sum_sq: f64 = xs.iter().map(|x| x * x).sum();
    if sum_sq <= 0.0 || xs.is_empty() {
        return 1.0;
    }
    sum * sum / (xs.len() as f64 * sum_sq)
}

/// Evaluates this slot's per-user and total rates from the allocation and
/// link gains, folds them into the world's cumulative accumulators, and
/// derives the fairness index and fairness-weighted rate from the updated
/// cumulative ratios.
pub fn rates_and_fairness(
    alloc: &AllocationDecision,
    gains: &[Vec<LinkGain>],
    world: &mut WorldState,
    bandwidth_hz: f64,
    noise_w: f64,
) -> RateReport {
    let num_users = world.users.len();
    let mut per_user = vec![0.0; num_users];
    for m in 0..alloc.num_uavs() {
        for n in 0..alloc.num_subcarriers() {
            if let Some(k) = alloc.user_at(m, n) {
                let gamma = sinr(alloc, gains, k, m, n, noise_w);
                per_user[k] += bandwidth_hz * (1.0 + gamma).log2();
            }
        }
    }
    let total: f64 = per_user.iter().sum();
    world.accumulate_rates(&per_user);

    let ratios: Vec<f64> = if world.cumulative_total_rate > 0.0 {
        world
            .cumulative_user_rate
            .iter()
            .map(|r| r / world.cumulative_total_rate)
            .collect()
    } else {
        vec![1.0 / num_users as f64; num_users]
    };
    let fairness = jain(&ratios);
    RateReport { fair_rate: fairness * total, per_user, total, ratios, fairness }
}
