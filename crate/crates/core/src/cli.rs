//! Command-line interface: training, baselines, evaluation, horizon sweeps,
//! and verification of the committed reference vectors.

use crate::metrics::{run_summary, RunWriter};
use crate::policy::PolicySet;
use crate::trainer::{eval_seed, evaluate_policy, Method, TrainConfig, Trainer};
use crate::world::ScenarioConfig;
use crate::{channel, energy, trainer, Error, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// Root configuration: the physical scenario and the training setup.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
}

impl AppConfig {
    /// Loads TOML or JSON depending on the file extension.
    pub fn load(path: &Path) -> Result<AppConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        match ext {
            "toml" => toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display()))),
            "json" => serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display()))),
            other => Err(Error::Config(format!(
                "unsupported config extension '{other}' (expected .toml or .json)"
            ))),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "swarmlink",
    version,
    about = "Multi-UAV downlink simulator: fairness-aware energy-efficient trajectory, \
             subcarrier, and power control"
)]
pub struct Cli {
    /// TOML or JSON configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the base RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root directory (defaults to $SWARMLINK_OUT or "runs").
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the full per-agent method and write run artifacts.
    Train {
        /// Override the number of training episodes.
        #[arg(long)]
        episodes: Option<usize>,
        /// Override the number of collection workers.
        #[arg(long)]
        workers: Option<usize>,
        /// Compute advantages by the explicit double-sum formulation.
        #[arg(long)]
        gae_double_sum: bool,
        /// Also write a step-level trace of one greedy episode.
        #[arg(long)]
        trace: bool,
    },
    /// Evaluate a saved checkpoint on fresh episodes.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        /// Sample actions instead of acting greedily.
        #[arg(long = "stochastic-eval")]
        stochastic: bool,
        /// Also write a step-level trace of one episode.
        #[arg(long)]
        trace: bool,
    },
    /// Train a comparison variant under the identical loop.
    Baseline {
        #[arg(value_enum)]
        name: BaselineName,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Train and evaluate across several episode horizons, tabulating the
    /// achieved efficiency.
    SweepT {
        /// Comma-separated horizons (slots per episode).
        #[arg(long, value_delimiter = ',', default_values_t = vec![40, 50, 60, 70, 80])]
        values: Vec<usize>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 20)]
        eval_episodes: usize,
    },
    /// Recompute the committed reference vectors and compare.
    Verify {
        /// Directory holding channel.csv, energy.csv, and gae.jsonl.
        #[arg(long, default_value = "vectors")]
        vectors: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BaselineName {
    Hppo,
    Exploration,
}

/// Entry point for the binary: parses arguments, runs, and maps errors to
/// process exit codes.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = Some(seed);
    }
    let out_root = cli
        .out
        .or_else(|| std::env::var_os("SWARMLINK_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));

    match cli.command {
        Command::Train { episodes, workers, gae_double_sum, trace } => {
            if let Some(e) = episodes {
                cfg.train.episodes = e;
            }
            if let Some(w) = workers {
                cfg.train.workers = w;
            }
            if gae_double_sum {
                cfg.train.gae_double_sum = true;
            }
            cmd_train(cfg, &out_root, Method::Mahppo, trace)
        }
        Command::Eval { checkpoint, episodes, stochastic, trace } => {
            cmd_eval(cfg, &out_root, &checkpoint, episodes, stochastic, trace)
        }
        Command::Baseline { name, episodes, workers } => {
            if let Some(e) = episodes {
                cfg.train.episodes = e;
            }
            if let Some(w) = workers {
                cfg.train.workers = w;
            }
            let method = match name {
                BaselineName::Hppo => Method::Hppo,
                BaselineName::Exploration => Method::Exploration,
            };
            cmd_train(cfg, &out_root, method, false)
        }
        Command::SweepT { values, episodes, eval_episodes } => {
            cmd_sweep_t(cfg, &out_root, &values, episodes, eval_episodes)
        }
        Command::Verify { vectors } => cmd_verify(&vectors),
    }
}

// ---------------------------------------------------------------------------
// train / baseline
// ---------------------------------------------------------------------------

fn cmd_train(cfg: AppConfig, out_root: &Path, method: Method, trace: bool) -> Result<()> {
    let mut tr = Trainer::new(cfg.scenario.clone(), cfg.train.clone(), method)?;
    let run_dir = out_root.join(method.as_str()).join(format!("seed{}", tr.base_seed()));
    let writer = RunWriter::create(&run_dir)?;
    writer.write_config(&cfg)?;
    tr.train(Some(&writer))?;

    let summary = run_summary(method.as_str(), &tr.records);
    writer.write_summary(&summary)?;
    let returns: Vec<f64> = tr.records.iter().map(|r| r.discounted_return).collect();
    let etas: Vec<f64> = tr.records.iter().map(|r| r.eta_episode).collect();
    writer.write_cdf("discounted_return", &returns)?;
    writer.write_cdf("eta_episode", &etas)?;

    // A single greedy episode for the trajectory plot (and, on request, a
    // step-level trace).
    let (rows, trajectories) = trace_episode(&tr.policy, &cfg, eval_seed(tr.base_seed()))?;
    writer.write_trajectories(&trajectories)?;
    if trace {
        writer.write_jsonl("trace.jsonl", &rows)?;
    }

    println!(
        "{}: {} episodes, {} updates; mean return {:.4}, mean episode efficiency {:.4} kbits/J",
        method.as_str(),
        summary.episodes,
        tr.update_stats.len(),
        summary.mean_discounted_return,
        summary.mean_eta_episode
    );
    println!("artifacts in {}", writer.dir().display());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn cmd_eval(
    cfg: AppConfig,
    out_root: &Path,
    checkpoint: &Path,
    episodes: usize,
    stochastic: bool,
    trace: bool,
) -> Result<()> {
    cfg.scenario.validate()?;
    let policy = PolicySet::load(checkpoint)?;
    if policy.base_state_dim != cfg.scenario.state_dim()
        || policy.num_agents != cfg.scenario.num_uavs
        || policy.num_users != cfg.scenario.num_users
        || policy.num_subcarriers != cfg.scenario.num_subcarriers
    {
        return Err(Error::Config(format!(
            "checkpoint was trained for a different scenario \
             (state {}, {} agents, {} users, {} subcarriers)",
            policy.base_state_dim, policy.num_agents, policy.num_users, policy.num_subcarriers
        )));
    }
    let seed = cfg.train.seed.unwrap_or(cfg.scenario.seed);
    let outcome = evaluate_policy(
        &policy,
        &cfg.scenario,
        cfg.train.env_options(),
        eval_seed(seed),
        episodes,
        stochastic,
        cfg.train.gamma,
    )?;
    let writer = RunWriter::create(&out_root.join("eval"))?;
    writer.write_config(&cfg)?;
    writer.write_metrics(&outcome.records)?;
    let summary = run_summary("eval", &outcome.records);
    writer.write_summary(&summary)?;
    let etas: Vec<f64> = outcome.records.iter().map(|r| r.eta_episode).collect();
    let fair: Vec<f64> = outcome.records.iter().map(|r| r.final_fairness).collect();
    writer.write_cdf("eta_episode", &etas)?;
    writer.write_cdf("final_fairness", &fair)?;
    writer.write_trajectories(&outcome.trajectories)?;
    if trace {
        let (rows, _) = trace_episode(&policy, &cfg, eval_seed(seed))?;
        writer.write_jsonl("trace.jsonl", &rows)?;
    }
    println!(
        "eval: {} episodes; mean return {:.4}, mean fairness {:.4}, mean energy {:.1} J, \
         mean episode efficiency {:.4} kbits/J",
        summary.episodes,
        summary.mean_discounted_return,
        summary.mean_final_fairness,
        summary.mean_energy_j,
        summary.mean_eta_episode
    );
    println!("artifacts in {}", writer.dir().display());
    Ok(())
}

/// One greedy episode with step-level rows, for traces and trajectories.
#[derive(Serialize)]
struct TraceRow {
    slot: usize,
    reward: f64,
    efficiency: f64,
    fairness: f64,
    fair_rate: f64,
    total_rate: f64,
    energy_j: f64,
    violations: usize,
}

fn trace_episode(
    policy: &PolicySet,
    cfg: &AppConfig,
    seed: u64,
) -> Result<(Vec<TraceRow>, Vec<Vec<[f64; 3]>>)> {
    let mut env =
        crate::env::Env::new(cfg.scenario.clone(), cfg.train.env_options(), seed)?;
    let mut state = env.reset()?;
    let mut trajectories: Vec<Vec<[f64; 3]>> = vec![Vec::new(); cfg.scenario.num_uavs];
    let push = |world: &crate::world::WorldState, tr: &mut Vec<Vec<[f64; 3]>>| {
        for (uav, t) in world.uavs.iter().zip(tr.iter_mut()) {
            t.push([uav.position.x, uav.position.y, uav.position.z]);
        }
    };
    push(env.world()?, &mut trajectories);
    let mut rows = Vec::with_capacity(cfg.scenario.horizon);
    for slot in 0..cfg.scenario.horizon {
        let act = policy.act_greedy(&state.normalized);
        let out = env.step(&act.actions)?;
        rows.push(TraceRow {
            slot,
            reward: out.reward,
            efficiency: out.efficiency,
            fairness: out.report.fairness,
            fair_rate: out.report.fair_rate,
            total_rate: out.report.total,
            energy_j: out.energy_j,
            violations: out.violations,
        });
        push(env.world()?, &mut trajectories);
        state = out.next_state;
        if out.done {
            break;
        }
    }
    Ok((rows, trajectories))
}

// ---------------------------------------------------------------------------
// sweep-t
// ---------------------------------------------------------------------------

fn cmd_sweep_t(
    cfg: AppConfig,
    out_root: &Path,
    values: &[usize],
    episodes: Option<usize>,
    eval_episodes: usize,
) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Config("sweep-t: no horizon values given".into()));
    }
    let mut csv = String::from("horizon,eta_mean_kbits_per_j,eta_episode_kbits_per_j,mean_return\n");
    println!(
        "{:>8} {:>16} {:>20} {:>14}",
        "horizon", "eta_mean[kb/J]", "eta_episode[kb/J]", "mean_return"
    );
    for &t in values {
        let mut scenario = cfg.scenario.clone();
        scenario.horizon = t;
        let mut train_cfg = cfg.train.clone();
        if let Some(e) = episodes {
            train_cfg.episodes = e;
        }
        let mut tr = Trainer::new(scenario.clone(), train_cfg.clone(), Method::Mahppo)?;
        tr.train(None)?;
        let outcome = evaluate_policy(
            &tr.policy,
            &scenario,
            train_cfg.env_options(),
            eval_seed(tr.base_seed()),
            eval_episodes,
            false,
            train_cfg.gamma,
        )?;
        let n = outcome.records.len().max(1) as f64;
        let eta_mean = outcome.records.iter().map(|r| r.eta_mean).sum::<f64>() / n;
        let eta_episode = outcome.records.iter().map(|r| r.eta_episode).sum::<f64>() / n;
        let mean_return =
            outcome.records.iter().map(|r| r.discounted_return).sum::<f64>() / n;
        println!("{t:>8} {eta_mean:>16.5} {eta_episode:>20.5} {mean_return:>14.5}");
        let _ = writeln!(csv, "{t},{eta_mean},{eta_episode},{mean_return}");
    }
    let dir = out_root.join("sweep_t");
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("sweep.csv"), csv)?;
    println!("table written to {}", dir.join("sweep.csv").display());
    Ok(())
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

fn rel_close(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol * want.abs().max(1.0)
}

fn read_vector_file(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn parse_csv(text: &str, expected_header: &str, name: &str) -> Result<Vec<Vec<f64>>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{name}: file is empty")))?;
    if header != expected_header {
        return Err(Error::Config(format!(
            "{name}: unexpected header '{header}', wanted '{expected_header}'"
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::Config(format!("{name}: row {}: '{f}': {e}", i + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Config(format!("{name}: no data rows")));
    }
    Ok(rows)
}

#[derive(Deserialize)]
struct GaeRow {
    rewards: Vec<f64>,
    values: Vec<f64>,
    dones: Vec<bool>,
    bootstrap: f64,
    gamma: f64,
    #[serde(rename = "lambda")]
    lam: f64,
    advantages: Vec<f64>,
}

fn cmd_verify(vectors: &Path) -> Result<()> {
    const REL_TOL: f64 = 1e-9;
    const GAE_ABS_TOL: f64 = 1e-10;

    // Channel suite: LoS/NLoS path loss, LoS probability, probabilistic mean.
    let text = read_vector_file(vectors, "channel.csv")?;
    let rows = parse_csv(&text, "h,d,fc_ghz,l_los_db,l_nlos_db,p_los,l_mean_db", "channel.csv")?;
    for (i, row) in rows.iter().enumerate() {
        let [h, d, fc, want_los, want_nlos, want_p, want_mean] = row[..] else {
            return Err(Error::Config(format!("channel.csv: row {i}: wrong field count")));
        };
        let checks = [
            ("l_los_db", channel::pathloss(h, d, fc, true)?, want_los),
            ("l_nlos_db", channel::pathloss(h, d, fc, false)?, want_nlos),
            ("p_los", channel::los_probability(h, d)?, want_p),
            ("l_mean_db", channel::mean_pathloss(h, d, fc)?, want_mean),
        ];
        for (field, got, want) in checks {
            if !rel_close(got, want, REL_TOL) {
                return Err(Error::Verify(format!(
                    "channel: row {i} field {field}: got {got:.17e}, want {want:.17e}"
                )));
            }
        }
    }
    println!("channel: {} vectors ok", rows.len());

    // Energy suite: thrust magnitude and per-slot propulsion energy.
    let text = read_vector_file(vectors, "energy.csv")?;
    let rows = parse_csv(&text, "vx,vy,vz,ax,ay,az,ts,thrust_n,energy_j", "energy.csv")?;
    let aero = energy::AeroParams::default();
    for (i, row) in rows.iter().enumerate() {
        let [vx, vy, vz, ax, ay, az, ts, want_thrust, want_energy] = row[..] else {
            return Err(Error::Config(format!("energy.csv: row {i}: wrong field count")));
        };
        let v = crate::vec3::Vec3::new(vx, vy, vz);
        let a = crate::vec3::Vec3::new(ax, ay, az);
        let checks = [
            ("thrust_n", energy::thrust(v, a, &aero), want_thrust),
            ("energy_j", energy::propulsion_energy(v, a, &aero, ts), want_energy),
        ];
        for (field, got, want) in checks {
            if !rel_close(got, want, REL_TOL) {
                return Err(Error::Verify(format!(
                    "energy: row {i} field {field}: got {got:.17e}, want {want:.17e}"
                )));
            }
        }
    }
    println!("energy: {} vectors ok", rows.len());

    // Advantage suite: recursion versus the frozen double-sum values.
    let text = read_vector_file(vectors, "gae.jsonl")?;
    let mut count = 0;
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let row: GaeRow = serde_json::from_str(line)
            .map_err(|e| Error::Config(format!("gae.jsonl: row {i}: {e}")))?;
        let got = trainer::compute_gae(
            &row.rewards,
            &row.values,
            &row.dones,
            row.bootstrap,
            row.gamma,
            row.lam,
        );
        if got.len() != row.advantages.len() {
            return Err(Error::Verify(format!("gae: row {i}: length mismatch")));
        }
        for (t, (g, w)) in got.iter().zip(&row.advantages).enumerate() {
            if (g - w).abs() > GAE_ABS_TOL {
                return Err(Error::Verify(format!(
                    "gae: row {i} step {t}: got {g:.17e}, want {w:.17e}"
                )));
            }
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Config("gae.jsonl: no data rows".into()));
    }
    println!("gae: {count} vectors ok");
    Ok(())
}
