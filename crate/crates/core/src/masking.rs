//! Dynamic valid-action-space construction for user–channel assignment and
//! masked categorical sampling.
//!
//! A joint assignment is built as a sequence of categorical picks: UAVs in
//! ascending index order, and each UAV's subcarriers in ascending order. For
//! every (UAV m, subcarrier n) slot the candidate set is the users still
//! valid for (k, m, n) under the four constraints below, plus an explicit
//! NONE option (leave the slot idle), whose logit is the last entry of the
//! UAV's table. After each pick the mask is updated, so every sampled
//! assignment satisfies the hard constraints by construction.
//!
//! Validity of a triple (k, m, n) requires all of:
//! 1. user k is not assigned anywhere in the swarm;
//! 2. subcarrier n is used by fewer than M UAVs swarm-wide;
//! 3. UAV m does not already serve user k on any subcarrier;
//! 4. UAV m's subcarrier n is free.

use crate::{Error, Result};
use rand::Rng;

/// Incremental summary of a partial assignment, one boolean family per
/// constraint conjunct.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskState {
    num_uavs: usize,
    num_users: usize,
    num_subcarriers: usize,
    /// Per user: assigned anywhere in the swarm.
    assigned_users: Vec<bool>,
    /// Per (m, k): UAV m already serves user k.
    uav_user: Vec<bool>,
    /// Per (m, n): the slot is taken.
    used_channels: Vec<bool>,
    /// Per n: how many UAVs transmit on subcarrier n.
    channel_load: Vec<usize>,
}

impl MaskState {
    pub fn new(num_uavs: usize, num_users: usize, num_subcarriers: usize) -> Self {
        MaskState {
            num_uavs,
            num_users,
            num_subcarriers,
            assigned_users: vec![false; num_users],
            uav_user: vec![false; num_uavs * num_users],
            used_channels: vec![false; num_uavs * num_subcarriers],
            channel_load: vec![0; num_subcarriers],
        }
    }

    /// Rebuilds the mask from a complete per-slot assignment list (indexed
    /// m·N + n). Used to cross-check incremental updates.
    pub fn from_picks(
        num_uavs: usize,
        num_users: usize,
        num_subcarriers: usize,
        picks: &[Option<usize>],
    ) -> Self {
        let mut mask = MaskState::new(num_uavs, num_users, num_subcarriers);
        for (slot, pick) in picks.iter().enumerate() {
            if let Some(k) = *pick {
                let m = slot / num_subcarriers;
                let n = slot % num_subcarriers;
                mask.apply(k, m, n);
            }
        }
        mask
    }

    /// All four validity conjuncts for assigning user `k` to UAV `m` on
    /// subcarrier `n`.
    pub fn is_valid(&self, k: usize, m: usize, n: usize) -> bool {
        !self.assigned_users[k]
            && self.channel_load[n] < self.num_uavs
            && !self.uav_user[m * self.num_users + k]
            && !self.used_channels[m * self.num_subcarriers + n]
    }

    /// Records the pick (k, m, n), updating every conjunct.
    pub fn apply(&mut self, k: usize, m: usize, n: usize) {
        debug_assert!(self.is_valid(k, m, n), "applying invalid pick ({k}, {m}, {n})");
        self.assigned_users[k] = true;
        self.uav_user[m * self.num_users + k] = true;
        self.used_channels[m * self.num_subcarriers + n] = true;
        self.channel_load[n] += 1;
    }

    /// Enumerates every currently valid (k, m, n) triple.
    pub fn valid_triples(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for k in 0..self.num_users {
            for m in 0..self.num_uavs {
                for n in 0..self.num_subcarriers {
                    if self.is_valid(k, m, n) {
                        out.push((k, m, n));
                    }
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Logit table layout
// ---------------------------------------------------------------------------

/// Index of user `k` on subcarrier `n` within a UAV's logit table.
pub fn logit_index(k: usize, n: usize, num_subcarriers: usize) -> usize {
    k * num_subcarriers + n
}

/// Index of the NONE logit (shared across a UAV's subcarrier picks).
pub fn none_index(num_users: usize, num_subcarriers: usize) -> usize {
    num_users * num_subcarriers
}

/// Length of one UAV's assignment logit table.
pub fn table_len(num_users: usize, num_subcarriers: usize) -> usize {
    num_users * num_subcarriers + 1
}

// ---------------------------------------------------------------------------
// Masked probabilities
// ---------------------------------------------------------------------------

/// Softmax restricted to `candidates`: entries outside the candidate set are
/// exactly zero. Returns `None` when the candidate set is empty (saturated).
pub fn masked_probabilities(logits: &[f64], candidates: &[usize]) -> Option<Vec<f64>> {
    if candidates.is_empty() {
        return None;
    }
    let max = candidates.iter().map(|&i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
    let mut probs = vec![0.0; logits.len()];
    let mut z = 0.0;
    for &i in candidates {
        let e = (logits[i] - max).exp();
        probs[i] = e;
        z += e;
    }
    for &i in candidates {
        probs[i] /= z;
    }
    Some(probs)
}

/// One evaluated pick: the chosen logit index, the full masked probability
/// table, the candidate indices, and the pick's log-probability and entropy.
#[derive(Clone, Debug)]
pub struct PickEval {
    pub chosen: usize,
    pub probs: Vec<f64>,
    pub candidates: Vec<usize>,
    pub logp: f64,
    pub entropy: f64,
}

fn entropy_of(probs: &[f64], candidates: &[usize]) -> f64 {
    -candidates
        .iter()
        .map(|&i| {
            let p = probs[i];
            if p > 0.0 {
                p * p.ln()
            } else {
                0.0
            }
        })
        .sum::<f64>()
}

/// Builds the candidate logit indices for UAV `m`, subcarrier `n`: every
/// valid user plus NONE.
fn candidates_for(mask: &MaskState, m: usize, n: usize, num_users: usize, num_sub: usize) -> Vec<usize> {
    let mut cands = Vec::with_capacity(num_users + 1);
    for k in 0..num_users {
        if mask.is_valid(k, m, n) {
            cands.push(logit_index(k, n, num_sub));
        }
    }
    cands.push(none_index(num_users, num_sub));
    cands
}

fn eval_pick(logits: &[f64], candidates: Vec<usize>, chosen: usize) -> PickEval {
    let probs = masked_probabilities(logits, &candidates)
        .expect("candidate set always contains NONE");
    // Floor the log to keep downstream ratios finite even if a probability
    // underflows to zero under extreme logits.
    let logp = probs[chosen].ln().max(-700.0);
    let entropy = entropy_of(&probs, &candidates);
    PickEval { chosen, probs, candidates, logp, entropy }
}

/// A complete sampled joint assignment.
#[derive(Clone, Debug)]
pub struct AssignmentSample {
    /// Per UAV, per subcarrier: the chosen user (or NONE).
    pub picks: Vec<Vec<Option<usize>>>,
    /// Per UAV: sum of its picks' log-probabilities.
    pub logp: Vec<f64>,
    /// Per UAV: sum of its picks' entropies.
    pub entropy: Vec<f64>,
}

/// Samples a joint assignment from per-UAV logit tables, masking as it goes.
/// UAVs are visited in ascending index order, subcarriers likewise; the
/// returned assignment satisfies the hard constraints by construction.
pub fn sample_assignment<R: Rng + ?Sized>(
    logits: &[&[f64]],
    num_users: usize,
    num_subcarriers: usize,
    rng: &mut R,
) -> AssignmentSample {
    let num_uavs = logits.len();
    let mut mask = MaskState::new(num_uavs, num_users, num_subcarriers);
    let none = none_index(num_users, num_subcarriers);
    let mut picks = vec![vec![None; num_subcarriers]; num_uavs];
    let mut logp = vec![0.0; num_uavs];
    let mut entropy = vec![0.0; num_uavs];
    for m in 0..num_uavs {
        for n in 0..num_subcarriers {
            let cands = candidates_for(&mask, m, n, num_users, num_subcarriers);
            let probs = masked_probabilities(logits[m], &cands)
                .expect("candidate set always contains NONE");
            let chosen = sample_categorical(&probs, &cands, rng);
            let eval = eval_pick(logits[m], cands, chosen);
            logp[m] += eval.logp;
            entropy[m] += eval.entropy;
            if chosen != none {
                let k = chosen / num_subcarriers;
                mask.apply(k, m, n);
                picks[m][n] = Some(k);
            }
        }
    }
    AssignmentSample { picks, logp, entropy }
}

/// Deterministic argmax variant of [`sample_assignment`] for greedy
/// evaluation: each pick takes the highest-logit candidate.
pub fn greedy_assignment(
    logits: &[&[f64]],
    num_users: usize,
    num_subcarriers: usize,
) -> Vec<Vec<Option<usize>>> {
    let num_uavs = logits.len();
    let mut mask = MaskState::new(num_uavs, num_users, num_subcarriers);
    let none = none_index(num_users, num_subcarriers);
    let mut picks = vec![vec![None; num_subcarriers]; num_uavs];
    for m in 0..num_uavs {
        for n in 0..num_subcarriers {
            let cands = candidates_for(&mask, m, n, num_users, num_subcarriers);
            let chosen = cands
                .iter()
                .copied()
                .max_by(|&a, &b| {
                    logits[m][a]
                        .partial_cmp(&logits[m][b])
                        .unwrap_or(std::cmp::Ordering::Equal)
                        // Break exact ties toward the lower index for
                        // determinism.
                        .then(b.cmp(&a))
                })
                .expect("candidate set always contains NONE");
            if chosen != none {
                let k = chosen / num_subcarriers;
                mask.apply(k, m, n);
                picks[m][n] = Some(k);
            }
        }
    }
    picks
}

/// Re-evaluates a stored assignment under (possibly different) logits,
/// replaying the same pick order with a fresh mask. Errors when a stored
/// pick is not in the replayed candidate set, which indicates corrupted
/// rollout data.
pub fn evaluate_assignment(
    logits: &[&[f64]],
    picks: &[Vec<Option<usize>>],
    num_users: usize,
    num_subcarriers: usize,
) -> Result<Vec<Vec<PickEval>>> {
    let num_uavs = logits.len();
    if picks.len() != num_uavs {
        return Err(Error::Invalid(format!(
            "assignment replay: expected {num_uavs} UAVs, got {}",
            picks.len()
        )));
    }
    let mut mask = MaskState::new(num_uavs, num_users, num_subcarriers);
    let none = none_index(num_users, num_subcarriers);
    let mut evals = Vec::with_capacity(num_uavs);
    for m in 0..num_uavs {
        let mut uav_evals = Vec::with_capacity(num_subcarriers);
        for n in 0..num_subcarriers {
            let cands = candidates_for(&mask, m, n, num_users, num_subcarriers);
            let chosen = match picks[m][n] {
                Some(k) => {
                    if k >= num_users || !mask.is_valid(k, m, n) {
                        return Err(Error::Invalid(format!(
                            "assignment replay: stored pick ({k}, {m}, {n}) violates the mask"
                        )));
                    }
                    logit_index(k, n, num_subcarriers)
                }
                None => none,
            };
            let eval = eval_pick(logits[m], cands, chosen);
            if chosen != none {
                mask.apply(chosen / num_subcarriers, m, n);
            }
            uav_evals.push(eval);
        }
        evals.push(uav_evals);
    }
    Ok(evals)
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], candidates: &[usize], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for &i in candidates {
        cum += probs[i];
        if u < cum {
            return i;
        }
    }
    *candidates.last().expect("nonempty candidate set")
}
