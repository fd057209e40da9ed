//! Exact finite MDP representation and brute-force dynamic-programming
//! oracles. Everything here is pure and safe to share across threads.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Transition;
use crate::math;
use crate::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

/// A finite MDP held as dense tables: transition tensor `P[s][a][s']`,
/// reward table `r[s][a]`, discount, and a terminal mask. Terminal states
/// are absorbing with zero reward.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    gamma: f64,
    terminal: Vec<bool>,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        let mut violations: Vec<String> = Vec::new();
        if n_states == 0 {
            violations.push("n_states must be positive".into());
        }
        if n_actions == 0 {
            violations.push("n_actions must be positive".into());
        }
        if !(0.0..1.0).contains(&gamma) {
            violations.push(format!("gamma {gamma} not in [0, 1)"));
        }
        if transition.len() != n_states * n_actions * n_states {
            violations.push(format!(
                "transition tensor has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            ));
        }
        if reward.len() != n_states * n_actions {
            violations.push(format!(
                "reward table has {} entries, expected {}",
                reward.len(),
                n_states * n_actions
            ));
        }
        if terminal.len() != n_states {
            violations.push(format!(
                "terminal mask has {} entries, expected {}",
                terminal.len(),
                n_states
            ));
        }
        if !violations.is_empty() {
            return Err(Error::Invalid(violations));
        }
        for (i, &p) in transition.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                violations.push(format!("transition entry {i} = {p} outside [0, 1]"));
            }
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &transition[(s * n_actions + a) * n_states..][..n_states];
                let sum: f64 = row.iter().sum();
                if math::abs(sum - 1.0) > ROW_SUM_TOL {
                    violations.push(format!("P[{s}][{a}] sums to {sum}, not 1"));
                }
            }
        }
        if reward.iter().any(|r| !r.is_finite()) {
            violations.push("rewards must be finite".into());
        }
        for s in 0..n_states {
            if !terminal[s] {
                continue;
            }
            for a in 0..n_actions {
                let self_loop = transition[(s * n_actions + a) * n_states + s];
                if math::abs(self_loop - 1.0) > ROW_SUM_TOL {
                    violations.push(format!("terminal state {s} does not self-loop at action {a}"));
                }
                if reward[s * n_actions + a] != 0.0 {
                    violations.push(format!("terminal state {s} has nonzero reward at action {a}"));
                }
            }
        }
        if !violations.is_empty() {
            return Err(Error::Invalid(violations));
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
            terminal,
        })
    }

    /// Random dense MDP, reproducible from the seed. `sparsity` in [0, 1)
    /// zeroes out roughly that fraction of next-state candidates per row.
    pub fn random(
        n_states: usize,
        n_actions: usize,
        sparsity: f64,
        gamma: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut transition = vec![0.0; n_states * n_actions * n_states];
        let mut reward = vec![0.0; n_states * n_actions];
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &mut transition[(s * n_actions + a) * n_states..][..n_states];
                loop {
                    let mut total = 0.0;
                    for p in row.iter_mut() {
                        let keep = rng.random::<f64>() >= sparsity;
                        *p = if keep { -math::ln(rng.random::<f64>().max(1e-12)) } else { 0.0 };
                        total += *p;
                    }
                    if total > 0.0 {
                        for p in row.iter_mut() {
                            *p /= total;
                        }
                        break;
                    }
                }
                reward[s * n_actions + a] = rng.random_range(-1.0..1.0);
            }
        }
        Self::new(
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
            vec![false; n_states],
        )
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminal_mask(&self) -> &[bool] {
        &self.terminal
    }

    pub fn probability(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + s_next]
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        &self.transition[(s * self.n_actions + a) * self.n_states..][..self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn transition_table(&self) -> &[f64] {
        &self.transition
    }

    pub fn reward_table(&self) -> &[f64] {
        &self.reward
    }

    /// Largest absolute reward, used by divergence guards and the sampling
    /// error bound.
    pub fn r_max(&self) -> f64 {
        math::sup_norm(&self.reward)
    }

    fn check_q(&self, q: &QTable) -> Result<()> {
        if q.n_states != self.n_states || q.n_actions != self.n_actions {
            return Err(Error::ShapeMismatch {
                what: "Q-table",
                expected: self.n_states * self.n_actions,
                got: q.values.len(),
            });
        }
        Ok(())
    }

    fn check_policy(&self, policy: &PolicyTable) -> Result<()> {
        if policy.n_states != self.n_states || policy.n_actions != self.n_actions {
            return Err(Error::ShapeMismatch {
                what: "policy table",
                expected: self.n_states * self.n_actions,
                got: policy.probs.len(),
            });
        }
        Ok(())
    }
}

/// Dense state-action value table.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn from_values(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::ShapeMismatch {
                what: "Q-table values",
                expected: n_states * n_actions,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { term: "Q-table" });
        }
        Ok(Self {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn sup_norm(&self) -> f64 {
        math::sup_norm(&self.values)
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        math::sup_norm_diff(&self.values, &other.values)
    }

    /// State values under a policy: V(s) = sum_a pi(a|s) Q(s, a).
    pub fn expectation_under(&self, policy: &PolicyTable) -> VTable {
        let values = (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| policy.prob(s, a) * self.get(s, a))
                    .sum()
            })
            .collect();
        VTable { values }
    }
}

/// Dense state value table.
#[derive(Debug, Clone, PartialEq)]
pub struct VTable {
    values: Vec<f64>,
}

impl VTable {
    pub fn zeros(n_states: usize) -> Self {
        Self {
            values: vec![0.0; n_states],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { term: "V-table" });
        }
        Ok(Self { values })
    }

    pub fn n_states(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, s: usize) -> f64 {
        self.values[s]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_distance(&self, other: &VTable) -> f64 {
        math::sup_norm_diff(&self.values, &other.values)
    }
}

/// Row-stochastic policy over the finite state-action space.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl PolicyTable {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::ShapeMismatch {
                what: "policy probabilities",
                expected: n_states * n_actions,
                got: probs.len(),
            });
        }
        let mut violations: Vec<String> = Vec::new();
        for s in 0..n_states {
            let row = &probs[s * n_actions..][..n_actions];
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                violations.push(format!("policy row {s} has a negative or non-finite entry"));
            }
            let sum: f64 = row.iter().sum();
            if math::abs(sum - 1.0) > ROW_SUM_TOL {
                violations.push(format!("policy row {s} sums to {sum}, not 1"));
            }
        }
        if !violations.is_empty() {
            return Err(Error::Invalid(violations));
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Deterministic policy from one action index per state.
    pub fn deterministic(n_states: usize, n_actions: usize, actions: &[usize]) -> Result<Self> {
        if actions.len() != n_states {
            return Err(Error::ShapeMismatch {
                what: "action list",
                expected: n_states,
                got: actions.len(),
            });
        }
        let mut probs = vec![0.0; n_states * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * n_actions + a] = 1.0;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    /// Random fully-supported policy (each row a normalized exponential draw).
    pub fn random(n_states: usize, n_actions: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut probs = vec![0.0; n_states * n_actions];
        for s in 0..n_states {
            let row = &mut probs[s * n_actions..][..n_actions];
            let mut total = 0.0;
            for p in row.iter_mut() {
                *p = -math::ln(rng.random::<f64>().max(1e-12));
                total += *p;
            }
            for p in row.iter_mut() {
                *p /= total;
            }
        }
        Self {
            n_states,
            n_actions,
            probs,
        }
    }

    /// Mixes this policy with the uniform policy: with probability `epsilon`
    /// an action is drawn uniformly.
    pub fn epsilon_greedy(&self, epsilon: f64) -> Self {
        let u = epsilon / self.n_actions as f64;
        let probs = self
            .probs
            .iter()
            .map(|&p| (1.0 - epsilon) * p + u)
            .collect();
        Self {
            n_states: self.n_states,
            n_actions: self.n_actions,
            probs,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..][..self.n_actions]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// One exact Bellman backup of a Q-table under a policy:
/// `out[s][a] = r[s][a] + gamma * sum_{s'} P[s][a][s'] * sum_{a'} pi(a'|s') q[s'][a']`.
pub fn exact_bellman_backup(q: &QTable, mdp: &TabularMdp, policy: &PolicyTable) -> Result<QTable> {
    mdp.check_q(q)?;
    mdp.check_policy(policy)?;
    let v = q.expectation_under(policy);
    let mut out = QTable::zeros(mdp.n_states, mdp.n_actions);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let row = mdp.transition_row(s, a);
            let cont: f64 = row
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(sn, &p)| p * v.get(sn))
                .sum();
            out.set(s, a, mdp.reward(s, a) + mdp.gamma * cont);
        }
    }
    Ok(out)
}

/// Exact Bellman backup on a state value table:
/// `out(s) = sum_a pi(a|s) [r(s,a) + gamma * sum_{s'} P(s,a,s') v(s')]`.
pub fn bellman_v_backup(v: &VTable, mdp: &TabularMdp, policy: &PolicyTable) -> Result<VTable> {
    mdp.check_policy(policy)?;
    if v.n_states() != mdp.n_states {
        return Err(Error::ShapeMismatch {
            what: "V-table",
            expected: mdp.n_states,
            got: v.n_states(),
        });
    }
    let values = (0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|a| {
                    let cont: f64 = mdp
                        .transition_row(s, a)
                        .iter()
                        .enumerate()
                        .map(|(sn, &p)| p * v.get(sn))
                        .sum();
                    policy.prob(s, a) * (mdp.reward(s, a) + mdp.gamma * cont)
                })
                .sum()
        })
        .collect();
    Ok(VTable { values })
}

/// Per-transition empirical Bellman targets:
/// `target_i = r_i + gamma * sum_{a'} pi(a'|s'_i) q[s'_i][a']`.
///
/// An empty batch yields an empty list.
pub fn empirical_bellman_targets(
    q: &QTable,
    batch: &[Transition],
    policy: &PolicyTable,
    gamma: f64,
) -> Result<Vec<f64>> {
    if policy.n_states != q.n_states || policy.n_actions != q.n_actions {
        return Err(Error::ShapeMismatch {
            what: "policy table",
            expected: q.values.len(),
            got: policy.probs.len(),
        });
    }
    let v = q.expectation_under(policy);
    batch
        .iter()
        .map(|t| {
            if t.s >= q.n_states || t.s_next >= q.n_states || t.a >= q.n_actions {
                return Err(Error::ShapeMismatch {
                    what: "transition index",
                    expected: q.n_states,
                    got: t.s.max(t.s_next),
                });
            }
            Ok(t.r + gamma * v.get(t.s_next))
        })
        .collect()
}

/// Iteration cap for a fixed-point loop contracting at rate `gamma`.
fn iteration_cap(gamma: f64, tol: f64) -> usize {
    if gamma == 0.0 {
        return 8;
    }
    let steps = math::ln(tol * (1.0 - gamma) / 2.0) / math::ln(gamma);
    (steps as usize).saturating_add(64)
}

/// Fixed point of exact policy evaluation, by iterating the backup until the
/// sup-norm residual drops below `tol`.
pub fn exact_policy_value(mdp: &TabularMdp, policy: &PolicyTable, tol: f64) -> Result<VTable> {
    mdp.check_policy(policy)?;
    assert!(tol > 0.0, "tolerance must be positive");
    let mut v = VTable::zeros(mdp.n_states);
    let cap = iteration_cap(mdp.gamma, tol);
    for _ in 0..cap {
        let next = bellman_v_backup(&v, mdp, policy)?;
        let residual = v.sup_distance(&next);
        v = next;
        if residual <= tol {
            return Ok(v);
        }
    }
    Err(Error::NoConvergence {
        iterations: cap,
        residual: tol,
    })
}

/// Policy value by direct linear solve of `(I - gamma P^pi) v = r^pi`.
///
/// Second algebraic route to `exact_policy_value`; the two must agree within
/// 1e-8 and the test suites hold them to that.
pub fn policy_value_linear_solve(mdp: &TabularMdp, policy: &PolicyTable) -> Result<VTable> {
    mdp.check_policy(policy)?;
    let n = mdp.n_states;
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n];
    for s in 0..n {
        a[s * n + s] = 1.0;
        for act in 0..mdp.n_actions {
            let pi = policy.prob(s, act);
            b[s] += pi * mdp.reward(s, act);
            if pi == 0.0 {
                continue;
            }
            for (sn, &p) in mdp.transition_row(s, act).iter().enumerate() {
                a[s * n + sn] -= mdp.gamma * pi * p;
            }
        }
    }
    let values = math::solve_linear(&a, &b, n).ok_or(Error::NoConvergence {
        iterations: 0,
        residual: f64::INFINITY,
    })?;
    VTable::from_values(values)
}

/// Deterministic greedy policy; ties break toward the lowest action index.
pub fn greedy_policy(q: &QTable) -> PolicyTable {
    let actions: Vec<usize> = (0..q.n_states)
        .map(|s| {
            let mut best = 0;
            for a in 1..q.n_actions {
                if q.get(s, a) > q.get(s, best) {
                    best = a;
                }
            }
            best
        })
        .collect();
    PolicyTable::deterministic(q.n_states, q.n_actions, &actions).expect("shapes match")
}

/// Optimal Q-function by value iteration to tolerance `tol`.
pub fn optimal_q(mdp: &TabularMdp, tol: f64) -> Result<QTable> {
    let mut q = QTable::zeros(mdp.n_states, mdp.n_actions);
    let cap = iteration_cap(mdp.gamma, tol);
    for _ in 0..cap {
        let next = exact_bellman_backup(&q, mdp, &greedy_policy(&q))?;
        let residual = q.sup_distance(&next);
        q = next;
        if residual <= tol {
            return Ok(q);
        }
    }
    Err(Error::NoConvergence {
        iterations: cap,
        residual: tol,
    })
}
