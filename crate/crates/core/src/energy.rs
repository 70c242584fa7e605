//! Rotor-craft propulsion model: thrust from kinematics, per-slot propulsion
//! energy decomposed into blade-profile, climb, induced, and parasite terms,
//! swarm totals, and the energy-efficiency objective.

use crate::vec3::Vec3;
use crate::{Error, Result};

/// Aerodynamic and mass parameters of one UAV.
#[derive(Clone, Copy, Debug)]
pub struct AeroParams {
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
    /// Mass, kg.
    pub mass: f64,
    /// Gravitational acceleration, m/s².
    pub g_mag: f64,
}

impl Default for AeroParams {
    fn default() -> Self {
        AeroParams {
            rho: 1.225,
            disc_area: 0.79,
            delta: 0.012,
            rotor_solidity: 0.1,
            plate_area: 0.01,
            thrust_coeff: 0.3,
            induced_corr: 0.13,
            mass: 2.0,
            g_mag: 9.8,
        }
    }
}

/// Thrust magnitude required for velocity `v` and acceleration `a`:
/// ‖m·a + ½ρ·S_FP·‖v‖·v − m·g⃗‖ with gravity pointing down.
pub fn thrust(v: Vec3, a: Vec3, aero: &AeroParams) -> f64 {
    let gravity = Vec3::new(0.0, 0.0, -aero.g_mag);
    let drag = v * (0.5 * aero.rho * aero.plate_area * v.norm());
    (a * aero.mass + drag - gravity * aero.mass).norm()
}

/// Propulsion energy for one slot of duration `ts`, evaluated term by term:
///
/// - blade profile: (δ/8)(F/(c_T ρ A) + 3v²)·√(ρ c_S² A F / c_T)
/// - climb: m g v · max(sin τ_c, 0) with sin τ_c = v_z/‖v‖ — climbing spends
///   power on potential energy; descent does not refund it (a rotor has no
///   regenerative braking), hence the floor at zero
/// - induced: (1 + c_f) F · √(√(F²/(4ρ²A²) + v⁴/4) − v²/2)
/// - parasite: ½ ρ S_FP v³
pub fn propulsion_energy(v: Vec3, a: Vec3, aero: &AeroParams, ts: f64) -> f64 {
    let speed = v.norm();
    let f = thrust(v, a, aero);

    let blade = (aero.delta / 8.0)
        * (f / (aero.thrust_coeff * aero.rho * aero.disc_area) + 3.0 * speed * speed)
        * (aero.rho * aero.rotor_solidity * aero.rotor_solidity * aero.disc_area * f
            / aero.thrust_coeff)
            .sqrt();

    let sin_climb = if speed > 0.0 { v.z / speed } else { 0.0 };
    let climb = aero.mass * aero.g_mag * speed * sin_climb.max(0.0);

    let rotor_loading = f / (2.0 * aero.rho * aero.disc_area);
    let induced_inner =
        (rotor_loading * rotor_loading + speed.powi(4) / 4.0).sqrt() - speed * speed / 2.0;
    let induced = (1.0 + aero.induced_corr) * f * induced_inner.max(0.0).sqrt();

    let parasite = 0.5 * aero.rho * aero.plate_area * speed.powi(3);

    let energy = (blade + climb + induced + parasite) * ts;
    debug_assert!(energy >= 0.0, "propulsion energy must be nonnegative, got {energy}");
    energy
}

/// Total propulsion energy of the swarm: the sum of per-UAV energies.
pub fn swarm_energy(per_uav: impl IntoIterator<Item = f64>) -> f64 {
    per_uav.into_iter().sum()
}

/// Energy efficiency: fairness-weighted bits delivered during the slot per
/// joule spent, f̂ · R_c · Ts / E.
pub fn energy_efficiency(fairness: f64, total_rate: f64, energy_j: f64, ts: f64) -> Result<f64> {
    if energy_j <= 0.0 {
        return Err(Error::Numerical(format!(
            "energy efficiency undefined for nonpositive energy {energy_j} J"
        )));
    }
    Ok(fairness * total_rate * ts / energy_j)
}
