//! Bootstrapped dynamics ensemble and the out-of-distribution state scores
//! derived from its disagreement.
//!
//! Each member is a linear ridge regressor from the feature vector
//! `[coords(s), one-hot(a), 1]` to the next-state delta in embedding space,
//! fit on an independent bootstrap resample of the dataset. Disagreement
//! between members is the OOD score.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::OfflineDataset;
use crate::math;
use crate::mdp::{PolicyTable, VTable};
use crate::{Error, Result};

const SIGMA_FLOOR: f64 = 1e-6;

/// Geometric coordinates for every state, row-major `[n_states x dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEmbedding {
    dim: usize,
    coords: Vec<f64>,
}

impl StateEmbedding {
    pub fn new(dim: usize, coords: Vec<f64>) -> Self {
        assert!(dim > 0 && coords.len() % dim == 0);
        assert!(coords.iter().all(|c| c.is_finite()));
        Self { dim, coords }
    }

    /// 1-D embedding for abstract state spaces: state index scaled to [0, 1].
    pub fn line(n_states: usize) -> Self {
        let denom = (n_states.max(2) - 1) as f64;
        Self {
            dim: 1,
            coords: (0..n_states).map(|s| s as f64 / denom).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_states(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn coords(&self, s: usize) -> &[f64] {
        &self.coords[s * self.dim..][..self.dim]
    }
}

/// One Gaussian dynamics model: a linear map from features to the predicted
/// next-state delta, with a per-dimension residual standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsMember {
    /// Row-major `[out_dim x feat_dim]`.
    weights: Vec<f64>,
    sigma: Vec<f64>,
}

impl DynamicsMember {
    pub fn from_parts(weights: Vec<f64>, sigma: Vec<f64>) -> Self {
        Self { weights, sigma }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }
}

/// A bag of bootstrapped dynamics members over a shared embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsEnsemble {
    members: Vec<DynamicsMember>,
    embedding: StateEmbedding,
    n_actions: usize,
    ridge: f64,
    seed: u64,
}

fn feature(embedding: &StateEmbedding, n_actions: usize, s: usize, a: usize, out: &mut [f64]) {
    let d = embedding.dim();
    out[..d].copy_from_slice(embedding.coords(s));
    out[d..d + n_actions].fill(0.0);
    out[d + a] = 1.0;
    out[d + n_actions] = 1.0;
}

impl DynamicsEnsemble {
    pub fn members(&self) -> &[DynamicsMember] {
        &self.members
    }

    pub fn embedding(&self) -> &StateEmbedding {
        &self.embedding
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_states(&self) -> usize {
        self.embedding.n_states()
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Rebuilds an ensemble from serialized parts.
    pub fn from_parts(
        members: Vec<DynamicsMember>,
        embedding: StateEmbedding,
        n_actions: usize,
        ridge: f64,
        seed: u64,
    ) -> Self {
        Self {
            members,
            embedding,
            n_actions,
            ridge,
            seed,
        }
    }

    fn feat_dim(&self) -> usize {
        self.embedding.dim() + self.n_actions + 1
    }

    /// Predicted next-state delta of one member at `(s, a)`.
    pub fn predict(&self, member: usize, s: usize, a: usize) -> Vec<f64> {
        let d = self.embedding.dim();
        let fd = self.feat_dim();
        let mut phi = vec![0.0; fd];
        feature(&self.embedding, self.n_actions, s, a, &mut phi);
        let w = &self.members[member].weights;
        (0..d)
            .map(|o| (0..fd).map(|j| w[o * fd + j] * phi[j]).sum())
            .collect()
    }

    /// Mean squared disagreement of the members at `(s, a)`:
    /// `(1/n) sum_i ||f_i(s,a) - f_bar(s,a)||^2`.
    pub fn pair_disagreement(&self, s: usize, a: usize) -> f64 {
        let n = self.members.len();
        if n < 2 {
            return 0.0;
        }
        let d = self.embedding.dim();
        let preds: Vec<Vec<f64>> = (0..n).map(|i| self.predict(i, s, a)).collect();
        let mean: Vec<f64> = (0..d)
            .map(|o| preds.iter().map(|p| p[o]).sum::<f64>() / n as f64)
            .collect();
        preds
            .iter()
            .map(|p| {
                (0..d)
                    .map(|o| (p[o] - mean[o]) * (p[o] - mean[o]))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n as f64
    }
}

/// Fits an `n_models`-member ensemble by ridge regression of next-state
/// deltas on `[coords(s), one-hot(a), 1]`, each member on an independent
/// bootstrap resample (with replacement, same size as the dataset).
pub fn fit_ensemble(
    dataset: &OfflineDataset,
    embedding: &StateEmbedding,
    n_actions: usize,
    n_models: usize,
    ridge: f64,
    seed: u64,
) -> Result<DynamicsEnsemble> {
    if dataset.transitions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    assert!(n_models >= 1, "need at least one member");
    assert!(ridge > 0.0, "ridge must be positive");
    let d = embedding.dim();
    let fd = d + n_actions + 1;
    let m = dataset.transitions.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut members = Vec::with_capacity(n_models);
    let mut phi = vec![0.0; fd];
    for _ in 0..n_models {
        // normal equations (X^T X + ridge I) W^T = X^T Y on the resample
        let mut xtx = vec![0.0; fd * fd];
        let mut xty = vec![0.0; fd * d];
        let sample: Vec<usize> = (0..m).map(|_| rng.random_range(0..m)).collect();
        for &idx in &sample {
            let t = dataset.transitions[idx];
            feature(embedding, n_actions, t.s, t.a, &mut phi);
            let cs = embedding.coords(t.s);
            let cn = embedding.coords(t.s_next);
            for j in 0..fd {
                if phi[j] == 0.0 {
                    continue;
                }
                for k in 0..fd {
                    xtx[j * fd + k] += phi[j] * phi[k];
                }
                for o in 0..d {
                    xty[j * d + o] += phi[j] * (cn[o] - cs[o]);
                }
            }
        }
        for j in 0..fd {
            xtx[j * fd + j] += ridge;
        }
        let mut weights = vec![0.0; d * fd];
        for o in 0..d {
            let b: Vec<f64> = (0..fd).map(|j| xty[j * d + o]).collect();
            let w = math::solve_linear(&xtx, &b, fd).ok_or(Error::NonFinite {
                term: "ridge normal equations",
            })?;
            weights[o * fd..][..fd].copy_from_slice(&w);
        }
        // residual std per output dimension on the resample
        let mut sq = vec![0.0; d];
        for &idx in &sample {
            let t = dataset.transitions[idx];
            feature(embedding, n_actions, t.s, t.a, &mut phi);
            let cs = embedding.coords(t.s);
            let cn = embedding.coords(t.s_next);
            for o in 0..d {
                let pred: f64 = (0..fd).map(|j| weights[o * fd + j] * phi[j]).sum();
                let r = (cn[o] - cs[o]) - pred;
                sq[o] += r * r;
            }
        }
        let sigma = sq
            .iter()
            .map(|&v| math::sqrt(v / m as f64).max(SIGMA_FLOOR))
            .collect();
        members.push(DynamicsMember { weights, sigma });
    }
    Ok(DynamicsEnsemble {
        members,
        embedding: embedding.clone(),
        n_actions,
        ridge,
        seed,
    })
}

/// Policy-weighted ensemble disagreement at one state:
/// `u_pi(s) = sum_a pi(a|s) * (1/n) sum_i ||f_i(s,a) - f_bar(s,a)||^2`.
///
/// The action expectation is exact since actions are finite. A single-member
/// ensemble has zero disagreement everywhere.
pub fn state_uncertainty(ensemble: &DynamicsEnsemble, s: usize, policy: &PolicyTable) -> f64 {
    (0..ensemble.n_actions)
        .map(|a| {
            let p = policy.prob(s, a);
            if p == 0.0 {
                0.0
            } else {
                p * ensemble.pair_disagreement(s, a)
            }
        })
        .sum()
}

/// Normalizes per-state uncertainty into a distribution over the full state
/// space; uniform fallback when every score is zero.
pub fn zeta_distribution(ensemble: &DynamicsEnsemble, policy: &PolicyTable) -> Vec<f64> {
    let u: Vec<f64> = (0..ensemble.n_states())
        .map(|s| state_uncertainty(ensemble, s, policy))
        .collect();
    math::normalize_or_uniform(&u)
}

/// The penalty distribution `d_phi(s) ∝ zeta(s) * exp(V(s))`, max-shifted
/// for stability. States with zero zeta get zero mass.
pub fn dphi_distribution(zeta: &[f64], v: &VTable) -> Result<Vec<f64>> {
    if zeta.len() != v.n_states() {
        return Err(Error::ShapeMismatch {
            what: "zeta vector",
            expected: v.n_states(),
            got: zeta.len(),
        });
    }
    let shift = zeta
        .iter()
        .zip(v.values())
        .filter(|(&z, _)| z > 0.0)
        .map(|(_, &val)| val)
        .fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        // zeta is all-zero; zeta_distribution never produces this, but a
        // caller-supplied vector might
        return Ok(math::normalize_or_uniform(zeta));
    }
    let unnorm: Vec<f64> = zeta
        .iter()
        .zip(v.values())
        .map(|(&z, &val)| if z > 0.0 { z * math::exp(val - shift) } else { 0.0 })
        .collect();
    Ok(math::normalize_or_uniform(&unnorm))
}
