//! The training engine: conservative policy-evaluation variants, the
//! closed-form tabular update, the Lagrangian ε controller, and the outer
//! loop tying them to greedy policy improvement.
//!
//! Variant semantics:
//! - `Standard`: plain fitted Q iteration on the dataset.
//! - `Cql`: adds the action-level conservatism cost weighted by α.
//! - `PessOrl`: adds the ε-weighted state regularizer with ζ from ensemble
//!   disagreement.
//! - `PessOrlUniform`: same but ζ uniform.
//! - `PessOrlUnc` / `PessOrlOpiq`: CQL evaluation, but policy improvement
//!   runs on a corrected Q with a per-pair uncertainty or pseudo-count term
//!   subtracted.

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{dataset_stats, BehaviorStats, OfflineDataset, Transition};
use crate::ensemble::{dphi_distribution, zeta_distribution, DynamicsEnsemble};
use crate::eval::evaluate_policy;
use crate::math;
use crate::mdp::{
    empirical_bellman_targets, exact_bellman_backup, exact_policy_value, greedy_policy,
    PolicyTable, QTable, TabularMdp,
};
use crate::theory::delta_gap;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantKind {
    Standard,
    Cql,
    PessOrl,
    PessOrlUniform,
    PessOrlUnc,
    PessOrlOpiq,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonMode {
    Fixed(f64),
    /// Dual ascent on ε with budget `tau` and step size `lr`.
    Lagrangian { tau: f64, lr: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariantConfig {
    pub kind: VariantKind,
    pub alpha: f64,
    pub epsilon_mode: EpsilonMode,
    /// Trade-off for the per-pair disagreement correction (Unc variant).
    pub beta_unc: f64,
    /// Pseudo-count correction scale and exponent (OPIQ variant).
    pub c_action: f64,
    pub m_exp: f64,
}

impl VariantConfig {
    pub fn standard() -> Self {
        Self {
            kind: VariantKind::Standard,
            alpha: 0.0,
            epsilon_mode: EpsilonMode::Fixed(0.0),
            beta_unc: 0.0,
            c_action: 0.0,
            m_exp: 1.0,
        }
    }

    pub fn cql(alpha: f64) -> Self {
        Self {
            kind: VariantKind::Cql,
            alpha,
            ..Self::standard()
        }
    }

    pub fn pessorl(alpha: f64, epsilon_mode: EpsilonMode) -> Self {
        Self {
            kind: VariantKind::PessOrl,
            alpha,
            epsilon_mode,
            ..Self::standard()
        }
    }

    pub fn pessorl_uniform(alpha: f64, epsilon_mode: EpsilonMode) -> Self {
        Self {
            kind: VariantKind::PessOrlUniform,
            alpha,
            epsilon_mode,
            ..Self::standard()
        }
    }

    pub fn pessorl_unc(alpha: f64, beta_unc: f64) -> Self {
        Self {
            kind: VariantKind::PessOrlUnc,
            alpha,
            beta_unc,
            ..Self::standard()
        }
    }

    pub fn pessorl_opiq(alpha: f64, c_action: f64, m_exp: f64) -> Self {
        Self {
            kind: VariantKind::PessOrlOpiq,
            alpha,
            c_action,
            m_exp,
            ..Self::standard()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.alpha >= 0.0) {
            problems.push(alloc::format!("alpha must be >= 0, got {}", self.alpha));
        }
        match self.epsilon_mode {
            EpsilonMode::Fixed(e) if !(e >= 0.0) => {
                problems.push(alloc::format!("fixed epsilon must be >= 0, got {e}"));
            }
            EpsilonMode::Lagrangian { tau, lr } => {
                if !tau.is_finite() {
                    problems.push(alloc::format!("tau must be finite, got {tau}"));
                }
                if !(lr > 0.0) {
                    problems.push(alloc::format!("epsilon step size must be > 0, got {lr}"));
                }
            }
            _ => {}
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(problems))
        }
    }

    /// Whether the state regularizer is active for this variant.
    fn uses_state_reg(&self) -> bool {
        matches!(self.kind, VariantKind::PessOrl | VariantKind::PessOrlUniform)
    }

    /// α as seen by the evaluation step (Standard drops it).
    fn effective_alpha(&self) -> f64 {
        if self.kind == VariantKind::Standard {
            0.0
        } else {
            self.alpha
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub variant: VariantConfig,
    /// Gradient step size; unused in closed-form mode.
    pub lr_q: f64,
    pub n_steps: usize,
    /// ζ and the penalty distribution are recomputed every this many steps.
    pub ensemble_refresh: usize,
    pub seed: u64,
    pub use_closed_form: bool,
    pub eval_every: usize,
    /// Backups use the true MDP instead of the dataset's empirical estimate.
    pub use_exact_backup: bool,
    /// Behavior-policy probability floor.
    pub p_min: f64,
    /// State-density floor for the regularizer's denominator.
    pub d_min: f64,
    pub eval_rollouts: usize,
    pub eval_max_steps: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            variant: VariantConfig::standard(),
            lr_q: 0.5,
            n_steps: 400,
            ensemble_refresh: 100,
            seed: 0,
            use_closed_form: true,
            eval_every: 50,
            use_exact_backup: false,
            p_min: 1e-3,
            d_min: 1e-6,
            eval_rollouts: 100,
            eval_max_steps: 100,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        self.variant.validate()?;
        let mut problems = Vec::new();
        if !self.use_closed_form && !(self.lr_q > 0.0) {
            problems.push(alloc::format!(
                "lr_q must be > 0 in gradient mode, got {}",
                self.lr_q
            ));
        }
        if self.n_steps == 0 {
            problems.push(alloc::format!("n_steps must be >= 1"));
        }
        if self.ensemble_refresh == 0 {
            problems.push(alloc::format!("ensemble_refresh must be >= 1"));
        }
        if self.eval_every == 0 {
            problems.push(alloc::format!("eval_every must be >= 1"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(problems))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub delta_k: f64,
    pub epsilon: f64,
    pub mean_return: f64,
    pub lb_violations: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub q_final: QTable,
    pub policy_final: PolicyTable,
    pub epsilon_final: f64,
    pub trace: Vec<TraceRecord>,
}

/// The action-level conservatism cost
/// `α · (E_{s~d̂β, a~π}[Q] − E_{s~d̂β, a~π̂β}[Q])`, evaluated exactly.
pub fn cql_cost(q: &QTable, stats: &BehaviorStats, policy: &PolicyTable, alpha: f64) -> f64 {
    if alpha == 0.0 {
        return 0.0;
    }
    let pi_beta = stats.pi_beta_hat();
    let mut acc = 0.0;
    for s in 0..q.n_states() {
        let w = stats.d_beta_hat()[s];
        if w == 0.0 {
            continue;
        }
        for a in 0..q.n_actions() {
            acc += w * (policy.prob(s, a) - pi_beta.prob(s, a)) * q.get(s, a);
        }
    }
    alpha * acc
}

/// `log Σ_s ζ(s) e^{V(s)} − E_{d̂β}[V]` for `V(s) = Σ_a π(a|s) q(s,a)`.
/// This is the quantity the Lagrangian ε controller drives toward its budget.
pub fn state_value_gap(
    q: &QTable,
    policy: &PolicyTable,
    zeta: &[f64],
    d_beta: &[f64],
) -> Result<f64> {
    let v = q.expectation_under(policy);
    let terms: Vec<f64> = zeta
        .iter()
        .zip(v.values())
        .filter(|(&z, _)| z > 0.0)
        .map(|(&z, &val)| math::ln(z) + val)
        .collect();
    let lse = math::logsumexp(&terms);
    let mean: f64 = d_beta.iter().zip(v.values()).map(|(&d, &val)| d * val).sum();
    let gap = lse - mean;
    if gap.is_finite() {
        Ok(gap)
    } else {
        Err(Error::NonFinite {
            term: "state-regularizer logsumexp",
        })
    }
}

/// The full training objective and its exact gradient with respect to the
/// Q-table:
/// `J = ε (log Σ ζ e^V − E_{d̂β}[V]) + (1/2M) Σ_i (q(s_i,a_i) − t_i)² + C(q)`.
///
/// `Standard` drops ε and C, `Cql` drops ε, `PessOrlUniform` forces ζ
/// uniform. Targets are treated as constants (semi-gradient, as in fitted Q
/// iteration).
#[allow(clippy::too_many_arguments)]
pub fn pessorl_objective(
    q: &QTable,
    stats: &BehaviorStats,
    policy: &PolicyTable,
    zeta: Option<&[f64]>,
    batch: &[Transition],
    targets: &[f64],
    variant: &VariantConfig,
    epsilon: f64,
) -> Result<(f64, QTable)> {
    if batch.len() != targets.len() {
        return Err(Error::ShapeMismatch {
            what: "bellman targets",
            expected: batch.len(),
            got: targets.len(),
        });
    }
    let (n, m) = (q.n_states(), q.n_actions());
    let mut grad = QTable::zeros(n, m);
    let mut j = 0.0;

    // half mean-squared Bellman error over the batch
    if !batch.is_empty() {
        let inv = 1.0 / batch.len() as f64;
        let mut mse = 0.0;
        for (t, &target) in batch.iter().zip(targets) {
            let diff = q.get(t.s, t.a) - target;
            mse += 0.5 * diff * diff;
            grad.set(t.s, t.a, grad.get(t.s, t.a) + diff * inv);
        }
        j += mse * inv;
        if !j.is_finite() {
            return Err(Error::NonFinite { term: "bellman error" });
        }
    }

    let alpha = variant.effective_alpha();
    if alpha > 0.0 {
        let cost = cql_cost(q, stats, policy, alpha);
        if !cost.is_finite() {
            return Err(Error::NonFinite { term: "policy cost" });
        }
        j += cost;
        let pi_beta = stats.pi_beta_hat();
        for s in 0..n {
            let w = stats.d_beta_hat()[s];
            for a in 0..m {
                grad.set(
                    s,
                    a,
                    grad.get(s, a) + alpha * w * (policy.prob(s, a) - pi_beta.prob(s, a)),
                );
            }
        }
    }

    if variant.uses_state_reg() && epsilon != 0.0 {
        let uniform = vec![1.0 / n as f64; n];
        let zeta = match variant.kind {
            VariantKind::PessOrlUniform => &uniform[..],
            _ => zeta.ok_or(Error::MissingInput("zeta"))?,
        };
        let gap = state_value_gap(q, policy, zeta, stats.d_beta_hat())?;
        j += epsilon * gap;
        // the softmax weights are exactly the penalty distribution
        let v = q.expectation_under(policy);
        let d_phi = dphi_distribution(zeta, &v)?;
        for s in 0..n {
            let w = epsilon * (d_phi[s] - stats.d_beta_hat()[s]);
            for a in 0..m {
                grad.set(s, a, grad.get(s, a) + w * policy.prob(s, a));
            }
        }
    }

    if !j.is_finite() {
        return Err(Error::NonFinite { term: "objective" });
    }
    Ok((j, grad))
}

/// Which model the Bellman backup runs on.
#[derive(Debug, Clone, Copy)]
pub enum BackupModel<'a> {
    /// True dynamics and rewards.
    Exact(&'a TabularMdp),
    /// Maximum-likelihood estimate built from the dataset.
    Empirical(&'a TabularMdp),
}

impl<'a> BackupModel<'a> {
    fn mdp(&self) -> &'a TabularMdp {
        match self {
            BackupModel::Exact(m) | BackupModel::Empirical(m) => m,
        }
    }
}

/// One exact minimizer step of the evaluation objective:
/// `Q'(s,a) = B^π Q(s,a) − ε (d^φ(s) − d̂β(s)) π(a|s) / (d̂β(s) π̂β(a|s))
///            − α (π(a|s)/π̂β(a|s) − 1)`.
///
/// States with zero data density need `d_min` whenever ε ≠ 0; without a
/// floor the update is undefined there and an error points at the state.
#[allow(clippy::too_many_arguments)]
pub fn closed_form_update(
    q: &QTable,
    backup: BackupModel<'_>,
    policy: &PolicyTable,
    pi_beta: &PolicyTable,
    d_phi: &[f64],
    d_beta: &[f64],
    epsilon: f64,
    alpha: f64,
    d_min: Option<f64>,
) -> Result<QTable> {
    let mdp = backup.mdp();
    let mut next = exact_bellman_backup(q, mdp, policy)?;
    if epsilon == 0.0 && alpha == 0.0 {
        return Ok(next);
    }
    let (n, m) = (q.n_states(), q.n_actions());
    if epsilon != 0.0 && (d_phi.len() != n || d_beta.len() != n) {
        return Err(Error::ShapeMismatch {
            what: "state distributions",
            expected: n,
            got: d_phi.len().min(d_beta.len()),
        });
    }
    for s in 0..n {
        let state_shift = if epsilon != 0.0 {
            let db = match (d_beta[s] > 0.0, d_min) {
                (true, _) => d_beta[s],
                (false, Some(floor)) => floor,
                (false, None) => return Err(Error::DensityFloor { state: s }),
            };
            epsilon * (d_phi[s] - d_beta[s]) / db
        } else {
            0.0
        };
        for a in 0..m {
            let ratio = policy.prob(s, a) / pi_beta.prob(s, a);
            let mut penalty = 0.0;
            if epsilon != 0.0 {
                penalty += state_shift * ratio;
            }
            if alpha != 0.0 {
                penalty += alpha * (ratio - 1.0);
            }
            next.set(s, a, next.get(s, a) - penalty);
        }
    }
    Ok(next)
}

/// Variant-specific correction subtracted from Q before policy improvement.
#[derive(Debug, Clone, Copy)]
pub enum Correction<'a> {
    /// `Q − β · (1/n) Σ_i ||f_i(s,a) − f̄(s,a)||²` (per-pair disagreement).
    Disagreement {
        ensemble: &'a DynamicsEnsemble,
        beta: f64,
    },
    /// `Q − C / (N(s,a) + 1)^M` (pessimistic pseudo-count term).
    PseudoCount {
        counts: &'a BehaviorStats,
        c_action: f64,
        m_exp: f64,
    },
}

/// Applies the chosen conservative correction entrywise.
pub fn pessimistic_q(q: &QTable, correction: Correction<'_>) -> QTable {
    let mut out = q.clone();
    for s in 0..q.n_states() {
        for a in 0..q.n_actions() {
            let c = match correction {
                Correction::Disagreement { ensemble, beta } => {
                    if beta == 0.0 {
                        0.0
                    } else {
                        beta * ensemble.pair_disagreement(s, a)
                    }
                }
                Correction::PseudoCount {
                    counts,
                    c_action,
                    m_exp,
                } => c_action / math::powf(counts.count(s, a) as f64 + 1.0, m_exp),
            };
            out.set(s, a, out.get(s, a) - c);
        }
    }
    out
}

/// One projected dual-ascent step on ε: `ε' = max(0, ε + lr (gap − τ))`.
pub fn lagrangian_epsilon_step(epsilon: f64, gap: f64, tau: f64, lr: f64) -> f64 {
    (epsilon + lr * (gap - tau)).max(0.0)
}

fn penalty_sup(
    policy: &PolicyTable,
    pi_beta: &PolicyTable,
    d_phi: &[f64],
    d_beta: &[f64],
    epsilon: f64,
    alpha: f64,
    d_min: f64,
) -> f64 {
    let mut sup = 0.0f64;
    for s in 0..policy.n_states() {
        let shift = if epsilon != 0.0 {
            epsilon * (d_phi[s] - d_beta[s]) / d_beta[s].max(d_min)
        } else {
            0.0
        };
        for a in 0..policy.n_actions() {
            let ratio = policy.prob(s, a) / pi_beta.prob(s, a);
            sup = sup.max(math::abs(shift * ratio + alpha * (ratio - 1.0)));
        }
    }
    sup
}

/// The Algorithm-1-style outer loop: greedy improvement, periodic ζ and
/// penalty-distribution refresh, one evaluation-step minimizer (closed-form
/// or gradient) per iteration, Lagrangian ε adjustment, and periodic trace
/// records.
///
/// `ensemble` is required for the variants that score OOD-ness
/// (`PessOrl`, `PessOrlUnc`).
pub fn train(
    config: &TrainerConfig,
    dataset: &OfflineDataset,
    mdp: &TabularMdp,
    ensemble: Option<&DynamicsEnsemble>,
) -> Result<TrainResult> {
    config.validate()?;
    let variant = &config.variant;
    if matches!(variant.kind, VariantKind::PessOrl | VariantKind::PessOrlUnc)
        && ensemble.is_none()
    {
        return Err(Error::MissingInput("dynamics ensemble"));
    }
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let stats = dataset_stats(dataset, n, m, config.p_min)?;
    let empirical = stats.empirical_mdp(mdp.gamma())?;
    let backup = if config.use_exact_backup {
        BackupModel::Exact(mdp)
    } else {
        BackupModel::Empirical(&empirical)
    };
    let pi_beta = stats.pi_beta_hat().clone();
    let d_beta = stats.d_beta_hat().to_vec();
    let multiset = dataset.state_multiset();
    let starts: Vec<usize> = (0..n).filter(|&s| !mdp.is_terminal(s)).collect();
    let alpha = variant.effective_alpha();
    let mut epsilon = match variant.epsilon_mode {
        EpsilonMode::Fixed(e) if variant.uses_state_reg() => e,
        _ => 0.0,
    };

    let improved_policy = |q: &QTable| -> PolicyTable {
        match variant.kind {
            VariantKind::PessOrlUnc => greedy_policy(&pessimistic_q(
                q,
                Correction::Disagreement {
                    ensemble: ensemble.expect("checked above"),
                    beta: variant.beta_unc,
                },
            )),
            VariantKind::PessOrlOpiq => greedy_policy(&pessimistic_q(
                q,
                Correction::PseudoCount {
                    counts: &stats,
                    c_action: variant.c_action,
                    m_exp: variant.m_exp,
                },
            )),
            _ => greedy_policy(q),
        }
    };

    let mut q = QTable::zeros(n, m);
    let mut zeta = vec![1.0 / n as f64; n];
    let mut d_phi = d_beta.clone();
    let mut trace = Vec::new();
    for step in 0..config.n_steps {
        let policy = improved_policy(&q);
        if variant.uses_state_reg() && step % config.ensemble_refresh == 0 {
            zeta = match variant.kind {
                VariantKind::PessOrl => {
                    zeta_distribution(ensemble.expect("checked above"), &policy)
                }
                _ => vec![1.0 / n as f64; n],
            };
            let v = q.expectation_under(&policy);
            d_phi = dphi_distribution(&zeta, &v)?;
        }
        if config.use_closed_form {
            q = closed_form_update(
                &q,
                backup,
                &policy,
                &pi_beta,
                &d_phi,
                &d_beta,
                epsilon,
                alpha,
                Some(config.d_min),
            )?;
        } else {
            let targets =
                empirical_bellman_targets(&q, &dataset.transitions, &policy, mdp.gamma())?;
            let (_, grad) = pessorl_objective(
                &q,
                &stats,
                &policy,
                Some(&zeta),
                &dataset.transitions,
                &targets,
                variant,
                epsilon,
            )?;
            for (qi, gi) in q.values_mut().iter_mut().zip(grad.values()) {
                *qi -= config.lr_q * gi;
            }
        }
        if let EpsilonMode::Lagrangian { tau, lr } = variant.epsilon_mode {
            if variant.uses_state_reg() {
                let gap = state_value_gap(&q, &improved_policy(&q), &zeta, &d_beta)?;
                epsilon = lagrangian_epsilon_step(epsilon, gap, tau, lr);
            }
        }
        // divergence guard: the fixed point is bounded by the reward scale
        // plus the current penalty scale; a tenfold excess means runaway
        let pen = penalty_sup(&policy, &pi_beta, &d_phi, &d_beta, epsilon, alpha, config.d_min);
        let limit = 10.0 * (mdp.r_max() + pen) / (1.0 - mdp.gamma());
        let norm = q.sup_norm();
        if !norm.is_finite() || norm > limit {
            return Err(Error::Diverged { norm, limit });
        }
        if step % config.eval_every == 0 || step + 1 == config.n_steps {
            let policy_now = improved_policy(&q);
            let v = q.expectation_under(&policy_now);
            let v_true = exact_policy_value(mdp, &policy_now, 1e-10)?;
            let lb_violations = (0..n)
                .filter(|&s| v.get(s) > v_true.get(s) + 1e-8)
                .count();
            let eval = evaluate_policy(
                mdp,
                &policy_now,
                &starts,
                config.eval_rollouts,
                config.eval_max_steps,
                config.seed.wrapping_add(step as u64),
            );
            let targets =
                empirical_bellman_targets(&q, &dataset.transitions, &policy_now, mdp.gamma())?;
            let (objective, _) = pessorl_objective(
                &q,
                &stats,
                &policy_now,
                Some(&zeta),
                &dataset.transitions,
                &targets,
                variant,
                epsilon,
            )?;
            trace.push(TraceRecord {
                step,
                delta_k: delta_gap(&v, &multiset),
                epsilon,
                mean_return: eval.mean_return,
                lb_violations,
                objective,
            });
        }
    }
    let policy_final = improved_policy(&q);
    Ok(TrainResult {
        q_final: q,
        policy_final,
        epsilon_final: epsilon,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::collect_dataset;
    use crate::ensemble::{DynamicsEnsemble, DynamicsMember, StateEmbedding};
    use crate::mdp::optimal_q;
    use alloc::string::String;

    fn two_action_stats() -> BehaviorStats {
        // every transition starts at s0 with both actions equally often:
        // d-beta = [1, 0], behavior uniform at s0
        let transitions = vec![
            Transition { s: 0, a: 0, s_next: 1, r: 0.0 },
            Transition { s: 0, a: 1, s_next: 1, r: 0.0 },
        ];
        let ds = OfflineDataset {
            transitions,
            mdp_id: String::from("two"),
            seed: 0,
        };
        dataset_stats(&ds, 2, 2, 1e-9).unwrap()
    }

    #[test]
    fn cql_cost_hand_example() {
        let stats = two_action_stats();
        let q = QTable::from_values(2, 2, vec![2.0, 0.0, 0.0, 0.0]).unwrap();
        let greedy = PolicyTable::deterministic(2, 2, &[0, 0]).unwrap();
        let alpha = 0.7;
        assert!((cql_cost(&q, &stats, &greedy, alpha) - alpha).abs() < 1e-12);
        assert_eq!(cql_cost(&q, &stats, stats.pi_beta_hat(), alpha), 0.0);
        assert_eq!(cql_cost(&q, &stats, &greedy, 0.0), 0.0);
    }

    #[test]
    fn objective_reduces_to_bellman_mse_when_switched_off() {
        let stats = two_action_stats();
        let q = QTable::from_values(2, 2, vec![1.0, -1.0, 0.5, 0.0]).unwrap();
        let pi = PolicyTable::uniform(2, 2);
        let batch = [
            Transition { s: 0, a: 0, s_next: 1, r: 0.0 },
            Transition { s: 0, a: 1, s_next: 1, r: 0.0 },
        ];
        let targets = [0.2, -0.4];
        let variant = VariantConfig::standard();
        let (j, grad) =
            pessorl_objective(&q, &stats, &pi, None, &batch, &targets, &variant, 0.0).unwrap();
        let expected = 0.5 * ((1.0f64 - 0.2).powi(2) + (-1.0f64 + 0.4).powi(2)) / 2.0;
        assert!((j - expected).abs() < 1e-12);
        assert!((grad.get(0, 0) - (1.0 - 0.2) / 2.0).abs() < 1e-12);
        assert!((grad.get(0, 1) - (-1.0 + 0.4) / 2.0).abs() < 1e-12);
        assert_eq!(grad.get(1, 0), 0.0);
    }

    #[test]
    fn point_mass_zeta_reduces_logsumexp_to_single_value() {
        let q = QTable::from_values(2, 2, vec![0.3, 0.9, -2.0, 0.1]).unwrap();
        let pi = PolicyTable::deterministic(2, 2, &[1, 1]).unwrap();
        let zeta = [0.0, 1.0];
        let d_beta = [0.5, 0.5];
        let gap = state_value_gap(&q, &pi, &zeta, &d_beta).unwrap();
        let v1 = q.get(1, 1);
        let mean = 0.5 * q.get(0, 1) + 0.5 * v1;
        assert!((gap - (v1 - mean)).abs() < 1e-12);
    }

    fn finite_difference_check(variant: VariantConfig, epsilon: f64) {
        let mdp = TabularMdp::random(4, 2, 0.0, 0.9, 31).unwrap();
        let beta = PolicyTable::uniform(4, 2);
        let ds = collect_dataset(&mdp, &beta, &[0, 1, 2, 3], 60, 15, 3, "fd").unwrap();
        let stats = dataset_stats(&ds, 4, 2, 1e-3).unwrap();
        let q = QTable::from_values(
            4,
            2,
            vec![0.3, -0.7, 1.1, 0.2, -0.4, 0.9, 0.0, -1.3],
        )
        .unwrap();
        let pi = PolicyTable::random(4, 2, 8);
        let zeta = [0.4, 0.1, 0.3, 0.2];
        let targets =
            empirical_bellman_targets(&q, &ds.transitions, &pi, mdp.gamma()).unwrap();
        let (_, grad) = pessorl_objective(
            &q, &stats, &pi, Some(&zeta), &ds.transitions, &targets, &variant, epsilon,
        )
        .unwrap();
        let h = 1e-5;
        for idx in 0..8 {
            let mut plus = q.clone();
            plus.values_mut()[idx] += h;
            let mut minus = q.clone();
            minus.values_mut()[idx] -= h;
            let (jp, _) = pessorl_objective(
                &plus, &stats, &pi, Some(&zeta), &ds.transitions, &targets, &variant, epsilon,
            )
            .unwrap();
            let (jm, _) = pessorl_objective(
                &minus, &stats, &pi, Some(&zeta), &ds.transitions, &targets, &variant, epsilon,
            )
            .unwrap();
            let fd = (jp - jm) / (2.0 * h);
            let g = grad.values()[idx];
            let denom = fd.abs().max(g.abs()).max(1e-8);
            assert!(
                (fd - g).abs() / denom < 1e-6,
                "entry {idx}: fd {fd} vs analytic {g}"
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences_per_variant() {
        finite_difference_check(VariantConfig::standard(), 0.0);
        finite_difference_check(VariantConfig::cql(0.8), 0.0);
        finite_difference_check(
            VariantConfig::pessorl(0.8, EpsilonMode::Fixed(0.5)),
            0.5,
        );
        finite_difference_check(
            VariantConfig::pessorl_uniform(0.8, EpsilonMode::Fixed(0.5)),
            0.5,
        );
    }

    #[test]
    fn closed_form_reduces_to_backup_when_switched_off() {
        let mdp = TabularMdp::random(4, 3, 0.0, 0.9, 5).unwrap();
        let pi = PolicyTable::random(4, 3, 6);
        let beta = PolicyTable::random(4, 3, 7).epsilon_greedy(0.2);
        let q = QTable::from_values(4, 3, (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
        let d = [0.25; 4];
        let plain = exact_bellman_backup(&q, &mdp, &pi).unwrap();
        let off = closed_form_update(
            &q, BackupModel::Exact(&mdp), &pi, &beta, &d, &d, 0.0, 0.0, None,
        )
        .unwrap();
        assert_eq!(plain, off);
        // on-distribution cancellation: matched policies and distributions
        let on = closed_form_update(
            &q, BackupModel::Exact(&mdp), &beta, &beta, &d, &d, 0.3, 0.7, None,
        )
        .unwrap();
        assert!(plain_vs(&exact_bellman_backup(&q, &mdp, &beta).unwrap(), &on) < 1e-12);
    }

    fn plain_vs(a: &QTable, b: &QTable) -> f64 {
        a.sup_distance(b)
    }

    #[test]
    fn closed_form_hand_example() {
        // two states, two actions, everything moves to the terminal state
        // with reward 1, so the backup at s0 is exactly 1
        let transition = vec![
            // s0 a0, s0 a1, s1 a0, s1 a1; rows over next states
            0.0, 1.0, 0.0, 1.0, //
            0.0, 1.0, 0.0, 1.0,
        ];
        let reward = vec![1.0, 1.0, 0.0, 0.0];
        let mdp =
            TabularMdp::new(2, 2, transition, reward, 0.9, vec![false, true]).unwrap();
        let pi = PolicyTable::deterministic(2, 2, &[0, 0]).unwrap();
        let beta = PolicyTable::uniform(2, 2);
        let d_phi = [0.8, 0.2];
        let d_beta = [0.4, 0.6];
        let q = QTable::zeros(2, 2);
        let next = closed_form_update(
            &q, BackupModel::Exact(&mdp), &pi, &beta, &d_phi, &d_beta, 0.1, 0.2, None,
        )
        .unwrap();
        assert!((next.get(0, 0) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn closed_form_errors_without_density_floor() {
        let mdp = TabularMdp::random(3, 2, 0.0, 0.9, 9).unwrap();
        let pi = PolicyTable::uniform(3, 2);
        let d_phi = [0.5, 0.5, 0.0];
        let d_beta = [0.5, 0.5, 0.0];
        let q = QTable::zeros(3, 2);
        let err = closed_form_update(
            &q, BackupModel::Empirical(&mdp), &pi, &pi, &d_phi, &d_beta, 0.1, 0.0, None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::DensityFloor { state: 2 }));
        closed_form_update(
            &q, BackupModel::Empirical(&mdp), &pi, &pi, &d_phi, &d_beta, 0.1, 0.0, Some(1e-6),
        )
        .unwrap();
    }

    #[test]
    fn closed_form_is_gamma_contraction() {
        use rand::Rng;
        use rand::SeedableRng;
        let mdp = TabularMdp::random(5, 3, 0.2, 0.9, 12).unwrap();
        let pi = PolicyTable::random(5, 3, 13);
        let beta = PolicyTable::random(5, 3, 14).epsilon_greedy(0.3);
        let d_phi = [0.4, 0.1, 0.2, 0.2, 0.1];
        let d_beta = [0.1, 0.3, 0.2, 0.2, 0.2];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let q1 = QTable::from_values(
                5, 3,
                (0..15).map(|_| rng.random_range(-5.0..5.0)).collect(),
            )
            .unwrap();
            let q2 = QTable::from_values(
                5, 3,
                (0..15).map(|_| rng.random_range(-5.0..5.0)).collect(),
            )
            .unwrap();
            let u1 = closed_form_update(
                &q1, BackupModel::Exact(&mdp), &pi, &beta, &d_phi, &d_beta, 0.4, 0.8, None,
            )
            .unwrap();
            let u2 = closed_form_update(
                &q2, BackupModel::Exact(&mdp), &pi, &beta, &d_phi, &d_beta, 0.4, 0.8, None,
            )
            .unwrap();
            assert!(u1.sup_distance(&u2) <= mdp.gamma() * q1.sup_distance(&q2) + 1e-12);
        }
    }

    #[test]
    fn gradient_descent_converges_to_closed_form() {
        // fixed policy and distributions: the objective is a diagonal
        // quadratic whose minimizer is the closed-form update
        let mdp = TabularMdp::random(4, 2, 0.0, 0.9, 17).unwrap();
        let beta = PolicyTable::uniform(4, 2);
        let ds = collect_dataset(&mdp, &beta, &[0, 1, 2, 3], 400, 25, 1, "cf").unwrap();
        let stats = dataset_stats(&ds, 4, 2, 1e-3).unwrap();
        let hat = stats.empirical_mdp(mdp.gamma()).unwrap();
        let pi = PolicyTable::random(4, 2, 18);
        let q0 = QTable::from_values(4, 2, vec![0.5, -0.2, 0.1, 0.9, -1.0, 0.3, 0.0, 0.4])
            .unwrap();
        let (eps, alpha) = (0.2, 0.5);
        let v = q0.expectation_under(&pi);
        let zeta = [0.25; 4];
        let d_phi = dphi_distribution(&zeta, &v).unwrap();
        let closed = closed_form_update(
            &q0,
            BackupModel::Empirical(&hat),
            &pi,
            stats.pi_beta_hat(),
            &d_phi,
            stats.d_beta_hat(),
            eps,
            alpha,
            Some(1e-6),
        )
        .unwrap();
        // descend the quadratic whose stationary point is `closed`:
        // weights d-beta(s)·pi-beta(a|s) on the squared error toward the
        // backup, plus the two linear penalty terms
        let targets = exact_bellman_backup(&q0, &hat, &pi).unwrap();
        let mut q = QTable::zeros(4, 2);
        for _ in 0..200_000 {
            let mut step_sup = 0.0f64;
            for s in 0..4 {
                for a in 0..2 {
                    let w = stats.d_beta_hat()[s] * stats.pi_beta_hat().prob(s, a);
                    if w == 0.0 {
                        continue;
                    }
                    let lin = eps * (d_phi[s] - stats.d_beta_hat()[s]) * pi.prob(s, a)
                        + alpha * stats.d_beta_hat()[s]
                            * (pi.prob(s, a) - stats.pi_beta_hat().prob(s, a));
                    let g = w * (q.get(s, a) - targets.get(s, a)) + lin;
                    let step = 0.5 / w.max(1e-3) * g;
                    q.set(s, a, q.get(s, a) - step);
                    step_sup = step_sup.max(step.abs());
                }
            }
            if step_sup < 1e-12 {
                break;
            }
        }
        for s in 0..4 {
            for a in 0..2 {
                if stats.in_support(s, a) {
                    assert!(
                        (q.get(s, a) - closed.get(s, a)).abs() < 1e-6,
                        "({s},{a}): {} vs {}",
                        q.get(s, a),
                        closed.get(s, a)
                    );
                }
            }
        }
    }

    #[test]
    fn pessimistic_q_corrections() {
        let q = QTable::from_values(2, 1, vec![1.0, 2.0]).unwrap();
        let emb = StateEmbedding::line(2);
        let fd = 1 + 1 + 1;
        let m0 = DynamicsMember::from_parts(vec![0.0; fd], vec![1e-3]);
        let mut w1 = vec![0.0; fd];
        w1[fd - 1] = 0.6;
        let m1 = DynamicsMember::from_parts(w1, vec![1e-3]);
        let ens = DynamicsEnsemble::from_parts(vec![m0, m1], emb, 1, 1e-6, 0);
        // beta = 0 is the identity
        let same = pessimistic_q(&q, Correction::Disagreement { ensemble: &ens, beta: 0.0 });
        assert_eq!(same, q);
        let corrected =
            pessimistic_q(&q, Correction::Disagreement { ensemble: &ens, beta: 2.0 });
        assert!((corrected.get(0, 0) - (1.0 - 2.0 * 0.09)).abs() < 1e-12);

        let stats = two_action_stats();
        let q = QTable::zeros(2, 2);
        let opiq = pessimistic_q(
            &q,
            Correction::PseudoCount { counts: &stats, c_action: 1.0, m_exp: 1.0 },
        );
        // unvisited pairs have pseudo-count 0, so the correction is 1
        assert!((opiq.get(1, 0) - (-1.0)).abs() < 1e-12);
        // visited pair at s0 has one sample: correction 1/2
        assert!((opiq.get(0, 0) - (-0.5)).abs() < 1e-12);
    }

    #[test]
    fn lagrangian_step_cases() {
        assert!((lagrangian_epsilon_step(0.0, 2.0, 0.0, 0.1) - 0.2).abs() < 1e-15);
        assert_eq!(lagrangian_epsilon_step(0.5, 1.0, 1.0, 0.1), 0.5);
        let mut eps = 1.0;
        for _ in 0..200 {
            eps = lagrangian_epsilon_step(eps, -1.0, 0.0, 0.1);
        }
        assert_eq!(eps, 0.0);
    }

    fn maze_fixture() -> (TabularMdp, OfflineDataset) {
        let spec = crate::maze::MazeSpec::hard();
        let mdp = spec.build().unwrap();
        let behavior = greedy_policy(&optimal_q(&mdp, 1e-10).unwrap()).epsilon_greedy(0.1);
        let ds = collect_dataset(&mdp, &behavior, &spec.start_states(), 120, 60, 7, "hard")
            .unwrap();
        (mdp, ds)
    }

    #[test]
    fn standard_exact_closed_form_recovers_optimal_q() {
        let (mdp, ds) = maze_fixture();
        let config = TrainerConfig {
            n_steps: 600,
            use_exact_backup: true,
            eval_every: 200,
            eval_rollouts: 10,
            ..TrainerConfig::default()
        };
        let result = train(&config, &ds, &mdp, None).unwrap();
        let qstar = optimal_q(&mdp, 1e-12).unwrap();
        assert!(result.q_final.sup_distance(&qstar) < 1e-6);
    }

    #[test]
    fn switch_off_reductions_are_bitwise() {
        let (mdp, ds) = maze_fixture();
        let base = TrainerConfig {
            n_steps: 120,
            eval_every: 40,
            eval_rollouts: 10,
            ..TrainerConfig::default()
        };
        let spec = crate::maze::MazeSpec::hard();
        let ens = crate::ensemble::fit_ensemble(&ds, &spec.embedding(), 4, 3, 1e-4, 5).unwrap();

        let pessorl_off = train(
            &TrainerConfig {
                variant: VariantConfig::pessorl(0.4, EpsilonMode::Fixed(0.0)),
                ..base.clone()
            },
            &ds,
            &mdp,
            Some(&ens),
        )
        .unwrap();
        let cql = train(
            &TrainerConfig { variant: VariantConfig::cql(0.4), ..base.clone() },
            &ds,
            &mdp,
            None,
        )
        .unwrap();
        assert_eq!(pessorl_off.q_final, cql.q_final);

        let cql_off = train(
            &TrainerConfig { variant: VariantConfig::cql(0.0), ..base.clone() },
            &ds,
            &mdp,
            None,
        )
        .unwrap();
        let standard = train(
            &TrainerConfig { variant: VariantConfig::standard(), ..base },
            &ds,
            &mdp,
            None,
        )
        .unwrap();
        assert_eq!(cql_off.q_final, standard.q_final);
    }

    #[test]
    fn trace_is_recorded_and_monotone_in_step() {
        let (mdp, ds) = maze_fixture();
        let config = TrainerConfig {
            variant: VariantConfig::cql(0.5),
            n_steps: 90,
            eval_every: 25,
            eval_rollouts: 10,
            ..TrainerConfig::default()
        };
        let result = train(&config, &ds, &mdp, None).unwrap();
        assert!(!result.trace.is_empty());
        for pair in result.trace.windows(2) {
            assert!(pair[0].step < pair[1].step);
        }
        assert!(result.trace.iter().all(|r| r.delta_k.is_finite()));
        assert!(result.q_final.values().iter().all(|v| v.is_finite()));
    }
}
