//! Monte-Carlo policy evaluation by seeded rollouts on the true MDP.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::sample_index;
use crate::mdp::{PolicyTable, TabularMdp};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    /// Mean discounted return over all rollouts.
    pub mean_return: f64,
    /// Fraction of rollouts that reached a terminal state within the step
    /// budget.
    pub success_rate: f64,
}

/// Rolls the policy out `n_rollouts` times from uniformly sampled start
/// states and reports the mean discounted return and termination rate.
pub fn evaluate_policy(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    starts: &[usize],
    n_rollouts: usize,
    max_steps: usize,
    seed: u64,
) -> EvalResult {
    assert!(!starts.is_empty(), "need at least one start state");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total_return = 0.0;
    let mut successes = 0usize;
    for _ in 0..n_rollouts {
        let mut s = starts[rng.random_range(0..starts.len())];
        let mut discount = 1.0;
        for _ in 0..max_steps {
            if mdp.is_terminal(s) {
                break;
            }
            let a = sample_index(policy.row(s), &mut rng);
            total_return += discount * mdp.reward(s, a);
            discount *= mdp.gamma();
            s = sample_index(mdp.transition_row(s, a), &mut rng);
        }
        if mdp.is_terminal(s) {
            successes += 1;
        }
    }
    EvalResult {
        mean_return: total_return / n_rollouts.max(1) as f64,
        success_rate: successes as f64 / n_rollouts.max(1) as f64,
    }
}
