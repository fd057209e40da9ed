//! Offline dataset collection and empirical behavior statistics.
//!
//! Collection owns a seeded RNG per call; statistics are pure counting.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::mdp::{PolicyTable, TabularMdp};
use crate::{Error, Result};

/// One `(s, a, s', r)` record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub r: f64,
}

/// A static offline dataset plus the provenance needed to reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub transitions: Vec<Transition>,
    pub mdp_id: String,
    pub seed: u64,
}

impl OfflineDataset {
    /// Multiset of current states, one entry per transition. This is the
    /// weighting the value-gap metric and d-beta estimates use.
    pub fn state_multiset(&self) -> Vec<usize> {
        self.transitions.iter().map(|t| t.s).collect()
    }
}

pub(crate) fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Rolls out `n_episodes` of the behavior policy, starting uniformly from
/// `starts`, truncating at `max_steps` or on entering a terminal state.
/// Fully reproducible from `seed`.
pub fn collect_dataset(
    mdp: &TabularMdp,
    behavior: &PolicyTable,
    starts: &[usize],
    n_episodes: usize,
    max_steps: usize,
    seed: u64,
    mdp_id: &str,
) -> Result<OfflineDataset> {
    if behavior.n_states() != mdp.n_states() || behavior.n_actions() != mdp.n_actions() {
        return Err(Error::ShapeMismatch {
            what: "behavior policy",
            expected: mdp.n_states() * mdp.n_actions(),
            got: behavior.n_states() * behavior.n_actions(),
        });
    }
    assert!(n_episodes >= 1, "need at least one episode");
    assert!(!starts.is_empty(), "need at least one start state");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = Vec::new();
    for _ in 0..n_episodes {
        let mut s = starts[rng.random_range(0..starts.len())];
        for _ in 0..max_steps {
            if mdp.is_terminal(s) {
                break;
            }
            let a = sample_index(behavior.row(s), &mut rng);
            let s_next = sample_index(mdp.transition_row(s, a), &mut rng);
            transitions.push(Transition {
                s,
                a,
                s_next,
                r: mdp.reward(s, a),
            });
            s = s_next;
        }
    }
    Ok(OfflineDataset {
        transitions,
        mdp_id: String::from(mdp_id),
        seed,
    })
}

/// Empirical statistics of a dataset: visit counts, the smoothed behavior
/// policy estimate, the state marginal, and the support mask.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorStats {
    n_states: usize,
    n_actions: usize,
    count_sa: Vec<u64>,
    count_sas: Vec<u64>,
    pi_beta_hat: PolicyTable,
    d_beta_hat: Vec<f64>,
    support: Vec<bool>,
    /// Mean observed reward per visited pair, used by the empirical model.
    reward_sum: Vec<f64>,
    p_min: f64,
}

impl BehaviorStats {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn count(&self, s: usize, a: usize) -> u64 {
        self.count_sa[s * self.n_actions + a]
    }

    pub fn count_next(&self, s: usize, a: usize, s_next: usize) -> u64 {
        self.count_sas[(s * self.n_actions + a) * self.n_states + s_next]
    }

    pub fn state_count(&self, s: usize) -> u64 {
        (0..self.n_actions).map(|a| self.count(s, a)).sum()
    }

    pub fn pi_beta_hat(&self) -> &PolicyTable {
        &self.pi_beta_hat
    }

    pub fn d_beta_hat(&self) -> &[f64] {
        &self.d_beta_hat
    }

    pub fn in_support(&self, s: usize, a: usize) -> bool {
        self.support[s * self.n_actions + a]
    }

    pub fn state_in_support(&self, s: usize) -> bool {
        (0..self.n_actions).any(|a| self.in_support(s, a))
    }

    pub fn p_min(&self) -> f64 {
        self.p_min
    }

    /// Mean observed reward at a visited pair.
    pub fn mean_reward(&self, s: usize, a: usize) -> Result<f64> {
        let n = self.count(s, a);
        if n == 0 {
            return Err(Error::OutOfSupport { state: s, action: a });
        }
        Ok(self.reward_sum[s * self.n_actions + a] / n as f64)
    }

    /// Maximum-likelihood MDP fitted to the counts. Unvisited pairs become
    /// zero-reward self-loops, so fitted iteration stays well defined while
    /// adding no fictitious value off support.
    pub fn empirical_mdp(&self, gamma: f64) -> Result<TabularMdp> {
        let (ns, na) = (self.n_states, self.n_actions);
        let mut transition = vec![0.0; ns * na * ns];
        let mut reward = vec![0.0; ns * na];
        for s in 0..ns {
            for a in 0..na {
                let n = self.count(s, a);
                let row = &mut transition[(s * na + a) * ns..][..ns];
                if n == 0 {
                    row[s] = 1.0;
                } else {
                    for sn in 0..ns {
                        row[sn] = self.count_next(s, a, sn) as f64 / n as f64;
                    }
                    // renormalize away the float division residue
                    let sum: f64 = row.iter().sum();
                    for p in row.iter_mut() {
                        *p /= sum;
                    }
                    reward[s * na + a] = self.reward_sum[s * na + a] / n as f64;
                }
            }
        }
        TabularMdp::new(ns, na, transition, reward, gamma, vec![false; ns])
    }
}

/// Counts a dataset into [`BehaviorStats`].
///
/// The behavior policy estimate is floored: on visited states
/// `pi_beta_hat(a|s) = max(N(s,a), p_min * N(s)) / normalizer`, and unvisited
/// states fall back to the uniform row (flagged off-support so theory checks
/// can skip them).
pub fn dataset_stats(
    dataset: &OfflineDataset,
    n_states: usize,
    n_actions: usize,
    p_min: f64,
) -> Result<BehaviorStats> {
    if dataset.transitions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut count_sa = vec![0u64; n_states * n_actions];
    let mut count_sas = vec![0u64; n_states * n_actions * n_states];
    let mut reward_sum = vec![0.0; n_states * n_actions];
    for t in &dataset.transitions {
        if t.s >= n_states || t.s_next >= n_states || t.a >= n_actions {
            return Err(Error::ShapeMismatch {
                what: "transition index",
                expected: n_states,
                got: t.s.max(t.s_next),
            });
        }
        count_sa[t.s * n_actions + t.a] += 1;
        count_sas[(t.s * n_actions + t.a) * n_states + t.s_next] += 1;
        reward_sum[t.s * n_actions + t.a] += t.r;
    }
    let total = dataset.transitions.len() as f64;
    let mut probs = vec![0.0; n_states * n_actions];
    let mut d_beta_hat = vec![0.0; n_states];
    for s in 0..n_states {
        let n_s: u64 = (0..n_actions).map(|a| count_sa[s * n_actions + a]).sum();
        d_beta_hat[s] = n_s as f64 / total;
        let row = &mut probs[s * n_actions..][..n_actions];
        if n_s == 0 {
            row.fill(1.0 / n_actions as f64);
            continue;
        }
        let floor = p_min * n_s as f64;
        let mut norm = 0.0;
        for a in 0..n_actions {
            row[a] = (count_sa[s * n_actions + a] as f64).max(floor);
            norm += row[a];
        }
        for p in row.iter_mut() {
            *p /= norm;
        }
    }
    let support = count_sa.iter().map(|&n| n > 0).collect();
    Ok(BehaviorStats {
        n_states,
        n_actions,
        count_sa,
        count_sas,
        pi_beta_hat: PolicyTable::new(n_states, n_actions, probs)?,
        d_beta_hat,
        support,
        reward_sum,
        p_min,
    })
}
