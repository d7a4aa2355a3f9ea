//! Forward filtering, backward sampling and Viterbi decoding over a dense
//! `n × m` matrix of log emissions (row `t`, column = local state).
//!
//! The forward pass rescales each step by the emission maximum and the
//! filtered mass, accumulating both in log space, so arbitrarily long
//! sequences never underflow.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::math::{exp, ln};

/// Log marginal likelihood `log p(y_{1:n})`; optionally keeps the normalized
/// filtered distributions (row-major `n × m`) for backward sampling.
pub fn forward(
    log_emit: &[f64],
    m: usize,
    trans: &[f64],
    init: &[f64],
    mut filtered: Option<&mut Vec<f64>>,
) -> f64 {
    assert!(m > 0 && log_emit.len().is_multiple_of(m));
    assert_eq!(trans.len(), m * m);
    assert_eq!(init.len(), m);
    let n = log_emit.len() / m;
    if let Some(f) = filtered.as_deref_mut() {
        f.clear();
        f.resize(n * m, 0.0);
    }
    let mut prev = vec![0.0; m];
    let mut cur = vec![0.0; m];
    let mut total = 0.0;
    for t in 0..n {
        let row = &log_emit[t * m..(t + 1) * m];
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if mx == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        if t == 0 {
            for j in 0..m {
                cur[j] = init[j] * exp(row[j] - mx);
            }
        } else {
            for j in 0..m {
                let mut acc = 0.0;
                for i in 0..m {
                    acc += prev[i] * trans[i * m + j];
                }
                cur[j] = acc * exp(row[j] - mx);
            }
        }
        let c: f64 = cur.iter().sum();
        if !(c > 0.0) {
            return f64::NEG_INFINITY;
        }
        for v in cur.iter_mut() {
            *v /= c;
        }
        total += mx + ln(c);
        if let Some(f) = filtered.as_deref_mut() {
            f[t * m..(t + 1) * m].copy_from_slice(&cur);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    total
}

/// Index drawn proportionally to nonnegative `weights`.
pub(crate) fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(weights.len() - 1)
}

/// Backward sampling from the filtered distributions of [`forward`].
pub fn backward_sample<R: Rng + ?Sized>(filtered: &[f64], m: usize, trans: &[f64], rng: &mut R) -> Vec<usize> {
    let n = filtered.len() / m;
    let mut z = vec![0; n];
    if n == 0 {
        return z;
    }
    z[n - 1] = sample_index(&filtered[(n - 1) * m..], rng);
    let mut w = vec![0.0; m];
    for t in (0..n - 1).rev() {
        let next = z[t + 1];
        for i in 0..m {
            w[i] = filtered[t * m + i] * trans[i * m + next];
        }
        z[t] = sample_index(&w, rng);
    }
    z
}

/// Most likely local state path (ties go to the lower index).
pub fn viterbi(log_emit: &[f64], m: usize, trans: &[f64], init: &[f64]) -> Vec<usize> {
    let n = log_emit.len() / m;
    if n == 0 {
        return Vec::new();
    }
    let log_trans: Vec<f64> = trans.iter().map(|&p| ln(p)).collect();
    let mut score: Vec<f64> = (0..m).map(|j| ln(init[j]) + log_emit[j]).collect();
    let mut back = vec![0usize; n * m];
    let mut next = vec![0.0; m];
    for t in 1..n {
        for j in 0..m {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for i in 0..m {
                let s = score[i] + log_trans[i * m + j];
                if s > best {
                    best = s;
                    arg = i;
                }
            }
            next[j] = best + log_emit[t * m + j];
            back[t * m + j] = arg;
        }
        core::mem::swap(&mut score, &mut next);
    }
    let mut z = vec![0; n];
    let mut best = f64::NEG_INFINITY;
    for (j, s) in score.iter().enumerate() {
        if *s > best {
            best = *s;
            z[n - 1] = j;
        }
    }
    for t in (1..n).rev() {
        z[t - 1] = back[t * m + z[t]];
    }
    z
}
