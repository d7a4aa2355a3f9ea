//! Distances between fitted per-series HMMs.
//!
//! A transition into a state the scoring HMM lacks gets probability `ε`
//! (its row renormalized); a transition out of such a state is uniform over
//! the union of states involved.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::embedding::stationary_distribution;
use crate::math::ln;
use crate::model::{ModelFit, SeriesHMM, StateId, StateSequence};
use crate::par::map_range;
use crate::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    Likelihood,
    Viterbi,
}

impl Measure {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Likelihood => "likelihood",
            Self::Viterbi => "viterbi",
        }
    }
}

/// `K` in the `(1/K)^L` length normalizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalizer {
    /// Global state count, shared by every pair.
    #[default]
    Global,
    /// Active state count of the scoring HMM.
    PerHmm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceOptions {
    pub epsilon: f64,
    pub normalizer: Normalizer,
}

impl Default for DistanceOptions {
    fn default() -> Self {
        Self { epsilon: DEFAULT_EPSILON, normalizer: Normalizer::Global }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub ids: Vec<String>,
    pub values: DMatrix<f64>,
    pub measure: Measure,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Symmetric within 1e-10, zero diagonal, finite and nonnegative.
    pub fn validate(&self) -> Result<()> {
        let n = self.ids.len();
        if self.values.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!("{n} ids for a {:?} matrix", self.values.shape())));
        }
        for i in 0..n {
            if self.values[(i, i)] != 0.0 {
                return Err(Error::Degenerate(format!("nonzero diagonal at `{}`", self.ids[i])));
            }
            for j in 0..n {
                let v = self.values[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Degenerate(format!("distance {v} between `{}` and `{}`", self.ids[i], self.ids[j])));
                }
                if (v - self.values[(j, i)]).abs() > 1e-10 {
                    return Err(Error::Degenerate(format!("asymmetric entry at `{}`, `{}`", self.ids[i], self.ids[j])));
                }
            }
        }
        Ok(())
    }
}

/// `P′(from → to)` of `hmm` with the missing-state smoothing; `extra` is the
/// number of states outside `hmm` that the comparison involves.
fn smoothed_prob(hmm: &SeriesHMM, from: StateId, to: StateId, extra: usize, eps: f64) -> f64 {
    let union = hmm.len() + extra;
    match (hmm.position(from), hmm.position(to)) {
        (Some(a), Some(b)) => hmm.trans()[(a, b)] / (1.0 + eps * extra as f64),
        (Some(_), None) => eps / (1.0 + eps * extra as f64),
        (None, _) => 1.0 / union as f64,
    }
}

fn count_outside(hmm: &SeriesHMM, states: impl IntoIterator<Item = StateId>) -> usize {
    let mut outside: Vec<StateId> = states.into_iter().filter(|&s| hmm.position(s).is_none()).collect();
    outside.sort_unstable();
    outside.dedup();
    outside.len()
}

/// `Σ_t log P′(z_{t−1} → z_t) + L log K`: how well `other` explains the
/// transitions of `seq`, relative to a uniform chain over `k` states.
pub fn sequence_score(seq: &StateSequence, other: &SeriesHMM, k: usize, eps: f64) -> f64 {
    let extra = count_outside(other, seq.z.iter().copied());
    let mut score = 0.0;
    for w in seq.z.windows(2) {
        score += ln(smoothed_prob(other, w[0], w[1], extra, eps));
    }
    score + seq.transitions() as f64 * ln(k as f64)
}

/// `−½ [score(S_a | λ_b) + score(S_b | λ_a)]`, before the matrix shift.
pub fn likelihood_distance(
    a: (&SeriesHMM, &StateSequence),
    b: (&SeriesHMM, &StateSequence),
    k: usize,
    opts: &DistanceOptions,
) -> f64 {
    let (ka, kb) = match opts.normalizer {
        Normalizer::Global => (k, k),
        Normalizer::PerHmm => (a.0.len(), b.0.len()),
    };
    -0.5 * (sequence_score(a.1, b.0, kb, opts.epsilon) + sequence_score(b.1, a.0, ka, opts.epsilon))
}

/// `Σ_{i,j} φ_λ(i) a_ij (log a′_ij − log a_ij)` over the states of `λ`;
/// `λ′` is smoothed where it lacks them. Never positive.
pub fn viterbi_directed(lambda: &SeriesHMM, other: &SeriesHMM, eps: f64) -> f64 {
    let phi = stationary_distribution(lambda);
    let extra = count_outside(other, lambda.active().iter().copied());
    let act = lambda.active();
    let mut total = 0.0;
    for (i, &si) in act.iter().enumerate() {
        let mut row = 0.0;
        for (j, &sj) in act.iter().enumerate() {
            let a = lambda.trans()[(i, j)];
            if a > 0.0 {
                row += a * (ln(smoothed_prob(other, si, sj, extra, eps)) - ln(a));
            }
        }
        total += phi[i] * row;
    }
    total
}

/// `−½ [d(λ, λ′) + d(λ′, λ)]`.
pub fn viterbi_distance(a: &SeriesHMM, b: &SeriesHMM, eps: f64) -> f64 {
    -0.5 * (viterbi_directed(a, b, eps) + viterbi_directed(b, a, eps))
}

/// All pairwise distances of a (pruned) fit.
///
/// Likelihood distances are shifted so the smallest off-diagonal entry is
/// zero; the diagonal is zero for both measures.
pub fn distance_matrix(fit: &ModelFit, measure: Measure, opts: &DistanceOptions) -> Result<DistanceMatrix> {
    let n = fit.num_series();
    if n < 2 {
        return Err(Error::Degenerate(format!("distances need at least 2 series, got {n}")));
    }
    if !(opts.epsilon > 0.0 && opts.epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!("smoothing epsilon {} must lie in (0, 1)", opts.epsilon)));
    }
    let k = fit.num_states();
    let rows = map_range(n, |i| {
        (0..n)
            .map(|j| {
                if j <= i {
                    return 0.0;
                }
                match measure {
                    Measure::Likelihood => likelihood_distance(
                        (&fit.hmms[i], &fit.sequences[i]),
                        (&fit.hmms[j], &fit.sequences[j]),
                        k,
                        opts,
                    ),
                    Measure::Viterbi => viterbi_distance(&fit.hmms[i], &fit.hmms[j], opts.epsilon),
                }
            })
            .collect::<Vec<f64>>()
    });
    let mut values = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            values[(i, j)] = rows[i][j];
            values[(j, i)] = rows[i][j];
        }
    }
    if measure == Measure::Likelihood {
        let mut lo = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                lo = lo.min(values[(i, j)]);
            }
        }
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    values[(i, j)] -= lo;
                }
            }
        }
    } else {
        // directed values are ≤ 0 only up to rounding
        values.apply(|v| *v = v.max(0.0));
    }
    let dm = DistanceMatrix { ids: fit.ids(), values, measure };
    dm.validate()?;
    Ok(dm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn hmm(active: Vec<StateId>, rows: &[f64]) -> SeriesHMM {
        let m = active.len();
        SeriesHMM::new("h", active, DMatrix::from_row_slice(m, m, rows)).unwrap()
    }

    fn seq(z: Vec<StateId>) -> StateSequence {
        StateSequence { id: "s".into(), z }
    }

    #[test]
    fn constant_sequence_under_absorbing_state() {
        let h = hmm(vec![2, 5], &[1.0, 0.0, 0.3, 0.7]);
        let s = seq(vec![2; 11]);
        assert!((sequence_score(&s, &h, 4, 1e-6) - 10.0 * ln(4.0)).abs() < 1e-12);
    }

    #[test]
    fn three_transition_hand_sum() {
        let h = hmm(vec![0, 1], &[0.7, 0.3, 0.4, 0.6]);
        let s = seq(vec![0, 0, 1, 0]);
        let want = ln(0.7) + ln(0.3) + ln(0.4) + 3.0 * ln(2.0);
        assert!((sequence_score(&s, &h, 2, 1e-6) - want).abs() < 1e-12);
    }

    #[test]
    fn missing_state_costs_epsilon() {
        let h = hmm(vec![0, 1], &[0.7, 0.3, 0.4, 0.6]);
        let s = seq(vec![0, 3]);
        let got = sequence_score(&s, &h, 3, 1e-6);
        let want = ln(1e-6 / (1.0 + 1e-6)) + ln(3.0);
        assert!(got.is_finite() && (got - want).abs() < 1e-12);
    }

    #[test]
    fn likelihood_distance_hand_case() {
        let ha = hmm(vec![0, 1], &[0.8, 0.2, 0.3, 0.7]);
        let hb = hmm(vec![0, 1], &[0.5, 0.5, 0.1, 0.9]);
        let sa = seq(vec![0, 0, 1, 1, 0]);
        let sb = seq(vec![1, 1, 1, 0, 1]);
        let a_under_b = ln(0.5) + ln(0.5) + ln(0.9) + ln(0.1) + 4.0 * ln(2.0);
        let b_under_a = ln(0.7) + ln(0.7) + ln(0.3) + ln(0.2) + 4.0 * ln(2.0);
        let want = -0.5 * (a_under_b + b_under_a);
        let opts = DistanceOptions::default();
        let d1 = likelihood_distance((&ha, &sa), (&hb, &sb), 2, &opts);
        let d2 = likelihood_distance((&hb, &sb), (&ha, &sa), 2, &opts);
        assert!((d1 - want).abs() < 1e-12);
        assert_eq!(d1, d2);
    }

    #[test]
    fn viterbi_hand_value() {
        let l = hmm(vec![0, 1], &[0.9, 0.1, 0.5, 0.5]);
        let u = hmm(vec![0, 1], &[0.5, 0.5, 0.5, 0.5]);
        let want = 5.0 / 6.0 * (0.9 * ln(0.5 / 0.9) + 0.1 * ln(0.5 / 0.1));
        assert!((viterbi_directed(&l, &u, 1e-6) - want).abs() < 1e-10);
        assert_eq!(viterbi_directed(&l, &l, 1e-6), 0.0);
        assert_eq!(viterbi_distance(&l, &u, 1e-6), viterbi_distance(&u, &l, 1e-6));
    }

    #[test]
    fn viterbi_over_disjoint_states_is_finite() {
        let a = hmm(vec![0, 1], &[0.9, 0.1, 0.2, 0.8]);
        let b = hmm(vec![1, 2], &[0.6, 0.4, 0.3, 0.7]);
        let d = viterbi_distance(&a, &b, 1e-6);
        assert!(d.is_finite() && d > 0.0);
    }

    #[test]
    fn smoothing_is_exact_when_states_are_shared() {
        let a = hmm(vec![0, 1], &[0.9, 0.1, 0.2, 0.8]);
        let b = hmm(vec![0, 1], &[0.6, 0.4, 0.3, 0.7]);
        let base = viterbi_directed(&a, &b, 1e-6);
        for eps in [1e-9, 1e-12] {
            assert_eq!(viterbi_directed(&a, &b, eps), base);
        }
    }
}
