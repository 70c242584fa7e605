//! Simulation and training stack for energy-efficient, fair downlink service
//! from a small UAV swarm to ground users over shared OFDMA subcarriers.
//!
//! The crate is organized bottom-up:
//!
//! - [`world`] — scenario configuration, geometry, ground-user mobility,
//!   obstructed regions, and the seeded randomness contract.
//! - [`channel`] — air-to-ground path loss, LoS probability, SINR, per-user
//!   rates, and the Jain-fairness-weighted rate objective.
//! - [`energy`] — rotor-craft thrust and propulsion power, swarm energy, and
//!   the energy-efficiency objective.
//! - [`masking`] — dynamic valid-action-space construction for user–channel
//!   assignment and masked categorical sampling.
//! - [`policy`] — hand-rolled actor/critic networks, hybrid-distribution
//!   sampling and log-probabilities, analytic gradients, checkpoints.
//! - [`env`] — the decision process: state assembly, hybrid action
//!   application, constraint enforcement, reward.
//! - [`trainer`] — clipped-surrogate multi-agent training with a shared
//!   critic, plus the shared-actor and no-update baselines.
//! - [`metrics`] — run metrics, smoothing, summaries, CDFs, file export.
//! - [`cli`] — operator commands: train / eval / baseline / sweep-t / verify.

pub mod channel;
pub mod cli;
pub mod energy;
pub mod env;
pub mod masking;
pub mod metrics;
pub mod policy;
pub mod trainer;
pub mod vec3;
pub mod world;

use thiserror::Error;

/// Crate-wide error type. Variants map onto process exit codes in the CLI.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration; names the offending field. Exit code 2.
    #[error("configuration error: {0}")]
    Config(String),

    /// Numerical fault (non-finite value, degenerate denominator). Exit code 3.
    #[error("numerical fault: {0}")]
    Numerical(String),

    /// Malformed runtime data (invalid action, corrupted buffer). Exit code 3.
    #[error("invalid data: {0}")]
    Invalid(String),

    /// Unreadable, truncated, or incompatible checkpoint. Exit code 4.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Implementation disagrees with committed reference vectors. Exit code 5.
    #[error("verification mismatch: {0}")]
    Verify(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Numerical(_) | Error::Invalid(_) => 3,
            Error::Checkpoint(_) => 4,
            Error::Verify(_) => 5,
            Error::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
