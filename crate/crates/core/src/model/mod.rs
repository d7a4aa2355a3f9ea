//! Beta-process autoregressive HMM: global VAR states, the binary feature
//! matrix that assigns states to series, per-series sticky transition
//! matrices, and the MCMC sampler that fits them.

mod ar;
pub mod hmm;
mod ibp;
mod prune;
mod sampler;
mod transitions;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix};

use crate::math::{ln, LN_2PI};
use crate::{Error, Result};

pub use ar::{ar_loglik, mniw_log_density, sample_ar_params, sample_prior_state, ArStats, MniwPosterior};
pub use ibp::sample_ibp_prior;
pub use prune::{prune_rare_states, PruneReport};
pub use sampler::{fit, joint_log_likelihood, resample_features, sample_state_sequence, birth_log_acceptance};
pub use transitions::sample_transitions;

/// Index of a global state: its position in [`ModelFit::states`].
pub type StateId = usize;

/// A vector-autoregressive emission regime: `y_t ~ N(A x_t, Σ)` where `x_t`
/// stacks the `r` previous frames oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ARState {
    a: DMatrix<f64>,
    sigma: DMatrix<f64>,
    // L^{-1} and L^{-1} A, row-major, where Σ = L Lᵀ
    whiten: Vec<f64>,
    whitened_a: Vec<f64>,
    log_norm: f64,
}

impl ARState {
    /// `a` is `D × D·r`, `sigma` is `D × D` and must be symmetric positive definite.
    pub fn new(a: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let d = sigma.nrows();
        if d == 0 || sigma.ncols() != d {
            return Err(Error::DimensionMismatch(format!("sigma is {}x{}", sigma.nrows(), sigma.ncols())));
        }
        if a.nrows() != d || !a.ncols().is_multiple_of(d) {
            return Err(Error::DimensionMismatch(format!("A is {}x{} for D = {d}", a.nrows(), a.ncols())));
        }
        if a.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite("non-finite entries".into()));
        }
        let scale = sigma.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        for i in 0..d {
            for j in 0..i {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-9 * scale {
                    return Err(Error::NotPositiveDefinite("sigma is not symmetric".into()));
                }
            }
        }
        let chol = Cholesky::new(sigma.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?;
        let l = chol.l();
        let log_det: f64 = 2.0 * (0..d).map(|i| ln(l[(i, i)])).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::NotPositiveDefinite("singular covariance".into()));
        }
        let l_inv = l
            .solve_lower_triangular(&DMatrix::identity(d, d))
            .ok_or_else(|| Error::NotPositiveDefinite("singular Cholesky factor".into()))?;
        let la = &l_inv * &a;
        Ok(Self {
            whiten: row_major(&l_inv),
            whitened_a: row_major(&la),
            log_norm: -0.5 * (d as f64 * LN_2PI + log_det),
            a,
            sigma,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn lag(&self) -> usize {
        self.a.ncols() / self.dim()
    }

    /// Log density of `y` given the stacked history `x` (lengths unchecked).
    #[inline]
    pub(crate) fn log_density(&self, y: &[f64], x: &[f64]) -> f64 {
        let d = y.len();
        let w = x.len();
        let mut quad = 0.0;
        for i in 0..d {
            let mut v = 0.0;
            let wr = &self.whiten[i * d..i * d + i + 1];
            for (j, c) in wr.iter().enumerate() {
                v += c * y[j];
            }
            let ar = &self.whitened_a[i * w..(i + 1) * w];
            for (c, xv) in ar.iter().zip(x) {
                v -= c * xv;
            }
            quad += v * v;
        }
        self.log_norm - 0.5 * quad
    }
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Binary `N × K` matrix; entry `(i, k)` marks that series `i` exhibits state `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl FeatureMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, bits: vec![false; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged feature rows".into()));
        }
        Ok(Self { rows: rows.len(), cols, bits: rows.concat() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, k: usize) -> bool {
        self.bits[i * self.cols + k]
    }

    pub fn set(&mut self, i: usize, k: usize, on: bool) {
        self.bits[i * self.cols + k] = on;
    }

    /// Column sums `m_k`.
    pub fn counts(&self) -> Vec<usize> {
        (0..self.cols).map(|k| self.count(k)).collect()
    }

    pub fn count(&self, k: usize) -> usize {
        (0..self.rows).filter(|&i| self.get(i, k)).count()
    }

    /// Active columns of row `i`, ascending.
    pub fn row_active(&self, i: usize) -> Vec<StateId> {
        (0..self.cols).filter(|&k| self.get(i, k)).collect()
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.cols..(i + 1) * self.cols]
    }

    /// Appends an all-zero column and returns its index.
    pub fn push_column(&mut self) -> usize {
        let mut bits = Vec::with_capacity(self.rows * (self.cols + 1));
        for i in 0..self.rows {
            bits.extend_from_slice(self.row(i));
            bits.push(false);
        }
        self.bits = bits;
        self.cols += 1;
        self.cols - 1
    }

    /// Keeps the columns flagged in `keep`; returns old → new index map.
    pub fn retain_columns(&mut self, keep: &[bool]) -> Vec<Option<usize>> {
        let mut map = vec![None; self.cols];
        let mut next = 0;
        for (k, &kp) in keep.iter().enumerate() {
            if kp {
                map[k] = Some(next);
                next += 1;
            }
        }
        let mut bits = Vec::with_capacity(self.rows * next);
        for i in 0..self.rows {
            for k in 0..self.cols {
                if keep[k] {
                    bits.push(self.get(i, k));
                }
            }
        }
        self.bits = bits;
        self.cols = next;
        map
    }
}

/// One series' HMM over its active global states.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesHMM {
    pub id: String,
    active: Vec<StateId>,
    trans: DMatrix<f64>,
    // Unnormalized gamma weights; `trans` is their row normalization.
    weights: DMatrix<f64>,
}

/// Smallest transition probability kept after normalization.
pub(crate) const PROB_FLOOR: f64 = 1e-300;

impl SeriesHMM {
    /// `active` must be strictly ascending; `trans` rows must sum to 1 within
    /// 1e-9 and are renormalized exactly.
    pub fn new(id: impl Into<String>, active: Vec<StateId>, trans: DMatrix<f64>) -> Result<Self> {
        let id = id.into();
        let m = active.len();
        if m == 0 {
            return Err(Error::InvalidParameter(format!("series `{id}` has no active states")));
        }
        if active.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(format!("series `{id}`: active states must be strictly ascending")));
        }
        if trans.nrows() != m || trans.ncols() != m {
            return Err(Error::DimensionMismatch(format!(
                "series `{id}`: {m} active states but transition matrix is {}x{}",
                trans.nrows(),
                trans.ncols()
            )));
        }
        for i in 0..m {
            let row = trans.row(i);
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidParameter(format!("series `{id}`: negative or non-finite transition")));
            }
            if (row.sum() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!("series `{id}`: row {i} sums to {}", row.sum())));
            }
        }
        Ok(Self::from_weights(id, active, trans))
    }

    pub(crate) fn from_weights(id: String, active: Vec<StateId>, weights: DMatrix<f64>) -> Self {
        let m = active.len();
        let mut trans = weights.clone();
        for i in 0..m {
            let s: f64 = trans.row(i).sum();
            for j in 0..m {
                trans[(i, j)] = (trans[(i, j)] / s).max(PROB_FLOOR);
            }
            let s: f64 = trans.row(i).sum();
            for j in 0..m {
                trans[(i, j)] /= s;
            }
        }
        Self { id, active, trans, weights }
    }

    pub fn active(&self) -> &[StateId] {
        &self.active
    }

    pub fn trans(&self) -> &DMatrix<f64> {
        &self.trans
    }

    /// Unnormalized transition weights (the gamma draws behind `trans`).
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Rebuilds an HMM from stored weights; `trans` is their row
    /// normalization.
    pub fn with_weights(id: impl Into<String>, active: Vec<StateId>, weights: DMatrix<f64>) -> Result<Self> {
        let id = id.into();
        let m = active.len();
        if m == 0 || active.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(format!("series `{id}`: active states must be nonempty and ascending")));
        }
        if weights.shape() != (m, m) {
            return Err(Error::DimensionMismatch(format!("series `{id}`: {m} active states but {}x{} weights", weights.nrows(), weights.ncols())));
        }
        if weights.iter().any(|v| !v.is_finite() || *v < 0.0) || (0..m).any(|i| weights.row(i).sum() <= 0.0) {
            return Err(Error::InvalidParameter(format!("series `{id}`: transition weights must be nonnegative with positive row sums")));
        }
        Ok(Self::from_weights(id, active, weights))
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    /// Local position of a global state.
    pub fn position(&self, state: StateId) -> Option<usize> {
        self.active.binary_search(&state).ok()
    }

    /// `P(from → to)` for global ids, `None` if either is inactive.
    pub fn prob(&self, from: StateId, to: StateId) -> Option<f64> {
        Some(self.trans[(self.position(from)?, self.position(to)?)])
    }

    pub(crate) fn trans_row_major(&self) -> Vec<f64> {
        row_major(&self.trans)
    }

    /// Same HMM with global ids passed through `map` (must stay injective).
    pub(crate) fn remapped(&self, map: impl Fn(StateId) -> StateId) -> Self {
        let mut order: Vec<(StateId, usize)> = self.active.iter().enumerate().map(|(p, &s)| (map(s), p)).collect();
        order.sort_unstable();
        let m = order.len();
        let active: Vec<StateId> = order.iter().map(|&(s, _)| s).collect();
        let permute = |src: &DMatrix<f64>| DMatrix::from_fn(m, m, |i, j| src[(order[i].1, order[j].1)]);
        Self { id: self.id.clone(), active, trans: permute(&self.trans), weights: permute(&self.weights) }
    }
}

/// Decoded global state per modeled frame (frames `r..T`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSequence {
    pub id: String,
    pub z: Vec<StateId>,
}

impl StateSequence {
    /// Number of transitions `L`.
    pub fn transitions(&self) -> usize {
        self.z.len().saturating_sub(1)
    }
}

/// Matrix-normal inverse-Wishart prior on `(A, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MniwPrior {
    /// `M`, `D × D·r`.
    pub mean: DMatrix<f64>,
    /// `V`, `D·r × D·r` column covariance of `A`.
    pub col_scale: DMatrix<f64>,
    /// `S0`, `D × D`.
    pub scale: DMatrix<f64>,
    /// `n0 > D − 1`.
    pub dof: f64,
}

impl MniwPrior {
    /// `M = 0`, `V = I`, `S0 = I`, `n0 = D + 2`.
    pub fn weakly_informative(dim: usize, lag: usize) -> Self {
        Self {
            mean: DMatrix::zeros(dim, dim * lag),
            col_scale: DMatrix::identity(dim * lag, dim * lag),
            scale: DMatrix::identity(dim, dim),
            dof: dim as f64 + 2.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.scale.nrows()
    }

    pub fn validate(&self, dim: usize, lag: usize) -> Result<()> {
        let w = dim * lag;
        if self.mean.shape() != (dim, w) || self.col_scale.shape() != (w, w) || self.scale.shape() != (dim, dim) {
            return Err(Error::DimensionMismatch(format!("MNIW prior shapes do not match D = {dim}, r = {lag}")));
        }
        if !(self.dof > dim as f64 - 1.0) {
            return Err(Error::InvalidParameter(format!("prior dof {} must exceed D - 1 = {}", self.dof, dim - 1)));
        }
        if Cholesky::new(self.col_scale.clone()).is_none() || Cholesky::new(self.scale.clone()).is_none() {
            return Err(Error::NotPositiveDefinite("MNIW prior scale matrices".into()));
        }
        Ok(())
    }
}

/// How the birth move draws parameters for a new series-unique state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BirthProposal {
    /// Straight from the MNIW prior.
    Prior,
    /// From the MNIW posterior given one block of `window` frames of the
    /// series, chosen uniformly; the acceptance ratio carries the
    /// prior/proposal density correction.
    DataDriven { window: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McmcSettings {
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// IBP mass.
    pub alpha: f64,
    /// Autoregressive lag `r`.
    pub lag: usize,
    /// Dirichlet concentration on every transition entry.
    pub gamma: f64,
    /// Extra mass on self-transitions.
    pub kappa: f64,
    pub ar_prior: MniwPrior,
    pub birth: BirthProposal,
    pub mcmc: McmcSettings,
}

impl Hyperparams {
    /// Defaults for `dim` channels: α = 2, γ = 1, κ = 10, r = 1, weakly
    /// informative MNIW prior.
    pub fn new(dim: usize) -> Self {
        Self {
            alpha: 2.0,
            lag: 1,
            gamma: 1.0,
            kappa: 10.0,
            ar_prior: MniwPrior::weakly_informative(dim, 1),
            birth: BirthProposal::Prior,
            mcmc: McmcSettings { sweeps: 1000, burn_in: 500, seed: 0 },
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if self.lag == 0 {
            return Err(Error::InvalidParameter("lag must be at least 1".into()));
        }
        if let BirthProposal::DataDriven { window } = self.birth {
            if window < 2 {
                return Err(Error::InvalidParameter("birth window must be at least 2 frames".into()));
            }
        }
        if self.mcmc.burn_in > self.mcmc.sweeps {
            return Err(Error::InvalidParameter(format!(
                "burn-in {} exceeds sweep count {}",
                self.mcmc.burn_in, self.mcmc.sweeps
            )));
        }
        self.ar_prior.validate(dim, self.lag)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MoveStats {
    pub proposed: usize,
    pub accepted: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// Joint log-likelihood `log p(y, z | θ, π)` after each sweep.
    pub log_likelihood: Vec<f64>,
    /// Global state count after each sweep.
    pub num_states: Vec<usize>,
    pub births: MoveStats,
    pub deaths: MoveStats,
    pub burn_in: usize,
    pub pruning: Option<PruneReport>,
}

/// Final sample of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFit {
    pub states: Vec<ARState>,
    pub features: FeatureMatrix,
    pub hmms: Vec<SeriesHMM>,
    pub sequences: Vec<StateSequence>,
    pub hyper: Hyperparams,
    pub diagnostics: Diagnostics,
}

impl ModelFit {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_series(&self) -> usize {
        self.hmms.len()
    }

    pub fn ids(&self) -> Vec<String> {
        self.hmms.iter().map(|h| h.id.clone()).collect()
    }

    /// Checks the structural invariants every sweep must preserve.
    pub fn check_invariants(&self) -> Result<()> {
        let k = self.states.len();
        let n = self.hmms.len();
        if self.features.cols() != k || self.features.rows() != n || self.sequences.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "K = {k}, N = {n}, F is {}x{}, {} sequences",
                self.features.rows(),
                self.features.cols(),
                self.sequences.len()
            )));
        }
        for (i, (h, s)) in self.hmms.iter().zip(&self.sequences).enumerate() {
            if h.active != self.features.row_active(i) {
                return Err(Error::InvalidParameter(format!("series `{}`: active set disagrees with F", h.id)));
            }
            if h.active.is_empty() {
                return Err(Error::InvalidParameter(format!("series `{}` has an empty feature row", h.id)));
            }
            for r in 0..h.len() {
                let sum: f64 = h.trans.row(r).sum();
                if (sum - 1.0).abs() > 1e-12 || h.trans.row(r).iter().any(|v| *v < 0.0) {
                    return Err(Error::InvalidParameter(format!("series `{}`: row {r} sums to {sum}", h.id)));
                }
            }
            if s.id != h.id {
                return Err(Error::InvalidParameter(format!("sequence `{}` paired with HMM `{}`", s.id, h.id)));
            }
            if let Some(z) = s.z.iter().find(|z| h.position(**z).is_none()) {
                return Err(Error::InvalidParameter(format!("series `{}` visits inactive state {z}", h.id)));
            }
        }
        if let Some(kk) = (0..k).find(|&kk| self.features.count(kk) == 0) {
            return Err(Error::InvalidParameter(format!("state {kk} is used by no series")));
        }
        Ok(())
    }

    /// The same fit with global state `k` renamed to `perm[k]`.
    pub fn relabeled(&self, perm: &[StateId]) -> Result<ModelFit> {
        let k = self.states.len();
        let mut seen = vec![false; k];
        if perm.len() != k || perm.iter().any(|&p| p >= k || core::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidParameter("relabeling must be a permutation of the state ids".into()));
        }
        let mut states = self.states.clone();
        for (old, &new) in perm.iter().enumerate() {
            states[new] = self.states[old].clone();
        }
        let mut features = FeatureMatrix::zeros(self.features.rows(), k);
        for i in 0..self.features.rows() {
            for old in 0..k {
                features.set(i, perm[old], self.features.get(i, old));
            }
        }
        Ok(ModelFit {
            states,
            features,
            hmms: self.hmms.iter().map(|h| h.remapped(|s| perm[s])).collect(),
            sequences: self
                .sequences
                .iter()
                .map(|s| StateSequence { id: s.id.clone(), z: s.z.iter().map(|&z| perm[z]).collect() })
                .collect(),
            hyper: self.hyper.clone(),
            diagnostics: self.diagnostics.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn ar_state_rejects_non_spd() {
        let a = DMatrix::zeros(2, 2);
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(ARState::new(a.clone(), sigma), Err(Error::NotPositiveDefinite(_))));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(ARState::new(a, asym), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn feature_matrix_column_ops() {
        let mut f = FeatureMatrix::from_rows(&[vec![true, false], vec![true, true]]).unwrap();
        assert_eq!(f.counts(), vec![2, 1]);
        let k = f.push_column();
        f.set(0, k, true);
        assert_eq!(f.row_active(0), vec![0, 2]);
        let map = f.retain_columns(&[false, true, true]);
        assert_eq!(map, vec![None, Some(0), Some(1)]);
        assert_eq!(f.row_active(0), vec![1]);
        assert_eq!(f.row_active(1), vec![0]);
    }

    #[test]
    fn series_hmm_validation() {
        let t = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.2, 0.8]);
        assert!(SeriesHMM::new("a", vec![3, 1], t.clone()).is_err());
        assert!(SeriesHMM::new("a", vec![1], t.clone()).is_err());
        let bad = DMatrix::from_row_slice(2, 2, &[0.5, 0.6, 0.2, 0.8]);
        assert!(SeriesHMM::new("a", vec![1, 3], bad).is_err());
        let h = SeriesHMM::new("a", vec![1, 3], t).unwrap();
        assert_eq!(h.prob(3, 1), Some(0.2));
        assert_eq!(h.prob(2, 1), None);
    }

    #[test]
    fn remap_permutes_matrix_consistently() {
        let t = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.3, 0.7]);
        let h = SeriesHMM::new("a", vec![0, 1], t).unwrap();
        let r = h.remapped(|s| 1 - s);
        assert_eq!(r.active(), &[0, 1]);
        assert_eq!(r.prob(1, 0), Some(0.1));
        assert_eq!(r.prob(0, 1), Some(0.3));
    }

    #[test]
    fn hyperparams_validation() {
        let mut h = Hyperparams::new(3);
        assert!(h.validate(3).is_ok());
        h.ar_prior.dof = 1.5;
        assert!(h.validate(3).is_err());
        let mut h = Hyperparams::new(3);
        h.alpha = 0.0;
        assert!(h.validate(3).is_err());
    }
}
