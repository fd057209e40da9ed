//! Small numeric helpers shared across the crate.
//!
//! Float intrinsics go through `libm` so the crate stays `no_std`.

use alloc::vec;
use alloc::vec::Vec;

pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub(crate) fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

pub(crate) fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

/// Numerically stable log(sum(exp(x_i))) with the max shifted out.
///
/// Returns negative infinity for an empty slice (the empty sum).
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let sum: f64 = xs.iter().map(|&x| exp(x - m)).sum();
    m + ln(sum)
}

/// Sup-norm distance between two equal-length slices.
pub fn sup_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| abs(x - y))
        .fold(0.0, f64::max)
}

/// Largest absolute entry.
pub fn sup_norm(a: &[f64]) -> f64 {
    a.iter().map(|&x| abs(x)).fold(0.0, f64::max)
}

/// Solves the dense linear system `A x = b` in place by Gaussian elimination
/// with partial pivoting. `a` is row-major `n x n`.
///
/// The systems solved here are tiny (policy evaluation over at most a few
/// hundred states, ridge normal equations over a handful of features), so a
/// dense textbook solve is plenty.
pub fn solve_linear(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| abs(m[i * n + col]).total_cmp(&abs(m[j * n + col])))
            .unwrap();
        if abs(m[pivot_row * n + col]) < 1e-300 {
            return None;
        }
        if pivot_row != col {
            for k in 0..n {
                m.swap(col * n + k, pivot_row * n + k);
            }
            x.swap(col, pivot_row);
        }
        let pivot = m[col * n + col];
        for row in (col + 1)..n {
            let factor = m[row * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                m[row * n + k] -= factor * m[col * n + k];
            }
            x[row] -= factor * x[col];
        }
    }
    let mut out = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = x[row];
        for k in (row + 1)..n {
            acc -= m[row * n + k] * out[k];
        }
        out[row] = acc / m[row * n + row];
    }
    Some(out)
}

/// Normalizes a non-negative vector into a distribution.
///
/// Falls back to the uniform distribution when the total mass is zero.
pub fn normalize_or_uniform(xs: &[f64]) -> Vec<f64> {
    let total: f64 = xs.iter().sum();
    if total > 0.0 {
        xs.iter().map(|&x| x / total).collect()
    } else {
        vec![1.0 / xs.len() as f64; xs.len()]
    }
}
