//! MCMC over the beta-process AR-HMM.
//!
//! One sweep:
//! 1. features, series by series: Gibbs on every state shared with another
//!    series (sequence marginalized by the forward algorithm), then one
//!    birth or death proposal for the series' unique states;
//! 2. state sequences by forward filtering, backward sampling;
//! 3. compaction of states no series uses;
//! 4. AR parameters from their conjugate posterior;
//! 5. transition weights from their gamma posterior.
//!
//! Transition matrices are kept as unnormalized gamma weights `η`. Turning a
//! state on draws its new weights from the prior; turning it off drops them.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;

use super::ar::stacked_pairs;
use super::hmm::{backward_sample, forward};
use super::transitions::{sample_gamma, sample_transitions};
use super::{
    sample_prior_state, ARState, ArStats, BirthProposal, Diagnostics, FeatureMatrix, Hyperparams, MniwPosterior,
    ModelFit, SeriesHMM, StateId, StateSequence,
};
use crate::data::{Dataset, MultiSeries};
use crate::math::{exp, ln, log_sum_exp};
use crate::par::{map_items, map_range};
use crate::rng;
use crate::{Error, Result};

const STAGE_FEATURES: u64 = 0;
const STAGE_SEQUENCES: u64 = 1;
const STAGE_PARAMS: u64 = 2;
const STAGE_TRANSITIONS: u64 = 3;
const STAGE_INIT: u64 = u64::MAX;

/// Log MH acceptance of adding one unique state to a series that has
/// `unique_before` of them: the likelihood ratio, the Poisson(α/N) prior
/// ratio on the unique-state count, the `1 / (n + 1)` chance of picking the
/// same state in the reverse death, and `log p(θ) − log q(θ)` for the
/// parameter proposal (zero when proposing from the prior).
///
/// A death from `n + 1` to `n` uses the negation of the matching birth.
pub fn birth_log_acceptance(
    delta_loglik: f64,
    alpha: f64,
    num_series: usize,
    unique_before: usize,
    log_prior_over_proposal: f64,
) -> f64 {
    delta_loglik + ln(alpha / num_series as f64) - ln((unique_before + 1) as f64) + log_prior_over_proposal
}

/// Observations `y_t` and stacked histories `x_t` for `t = r..T`.
#[derive(Debug, Clone)]
struct Design {
    y: Vec<f64>,
    x: Vec<f64>,
    n: usize,
}

impl Design {
    fn new(series: &MultiSeries, lag: usize) -> Self {
        let d = series.dim();
        let n = series.len() - lag;
        let mut y = Vec::with_capacity(n * d);
        let mut x = Vec::with_capacity(n * d * lag);
        for t in lag..series.len() {
            y.extend_from_slice(series.row(t));
            x.extend_from_slice(series.history(t, lag));
        }
        Self { y, x, n }
    }

    fn frame(&self, t: usize) -> (&[f64], &[f64]) {
        let d = self.y.len() / self.n;
        let w = self.x.len() / self.n;
        (&self.y[t * d..(t + 1) * d], &self.x[t * w..(t + 1) * w])
    }

    fn emissions(&self, state: &ARState) -> Vec<f64> {
        (0..self.n)
            .map(|t| {
                let (y, x) = self.frame(t);
                state.log_density(y, x)
            })
            .collect()
    }
}

/// Per-series working data: design, lazily filled emission columns, and the
/// block posteriors behind the data-driven birth proposal.
struct SeriesWork {
    design: Design,
    cache: Vec<Option<Vec<f64>>>,
    blocks: Vec<MniwPosterior>,
}

impl SeriesWork {
    fn column(&mut self, k: StateId, states: &[ARState]) -> &[f64] {
        if self.cache.len() < states.len() {
            self.cache.resize(states.len(), None);
        }
        if self.cache[k].is_none() {
            self.cache[k] = Some(self.design.emissions(&states[k]));
        }
        self.cache[k].as_deref().unwrap()
    }

    /// Row-major `n × m` log emissions over `active`.
    fn log_emit(&mut self, active: &[StateId], states: &[ARState]) -> Vec<f64> {
        let n = self.design.n;
        let m = active.len();
        for &k in active {
            self.column(k, states);
        }
        let mut out = vec![0.0; n * m];
        for (j, &k) in active.iter().enumerate() {
            let col = self.cache[k].as_deref().unwrap();
            for t in 0..n {
                out[t * m + j] = col[t];
            }
        }
        out
    }

    fn marginal(&mut self, active: &[StateId], weights: &DMatrix<f64>, states: &[ARState]) -> f64 {
        let log_emit = self.log_emit(active, states);
        let hmm = SeriesHMM::from_weights(String::new(), active.to_vec(), weights.clone());
        let m = active.len();
        forward(&log_emit, m, &hmm.trans_row_major(), &vec![1.0 / m as f64; m], None)
    }

    fn ffbs<R: Rng + ?Sized>(&mut self, hmm: &SeriesHMM, states: &[ARState], rng: &mut R) -> Vec<StateId> {
        let m = hmm.len();
        let log_emit = self.log_emit(hmm.active(), states);
        let trans = hmm.trans_row_major();
        let mut filtered = Vec::new();
        forward(&log_emit, m, &trans, &vec![1.0 / m as f64; m], Some(&mut filtered));
        backward_sample(&filtered, m, &trans, rng).into_iter().map(|j| hmm.active()[j]).collect()
    }

    fn invalidate(&mut self) {
        self.cache.clear();
    }
}

fn block_posteriors(design: &Design, hyper: &Hyperparams, dim: usize) -> Vec<MniwPosterior> {
    let BirthProposal::DataDriven { window } = hyper.birth else {
        return Vec::new();
    };
    let w = dim * hyper.lag;
    let blocks = (design.n / window).max(1);
    let len = if design.n < window { design.n } else { window };
    (0..blocks)
        .map(|b| {
            let ys = &design.y[b * len * dim..(b + 1) * len * dim];
            let xs = &design.x[b * len * w..(b + 1) * len * w];
            let stats = ArStats::from_pairs(dim, hyper.lag, stacked_pairs(ys, xs, dim, w));
            MniwPosterior::update(&hyper.ar_prior, &stats)
        })
        .collect()
}

fn check_series(dataset: &Dataset, lag: usize) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for s in &dataset.series {
        if s.len() < lag + 2 {
            return Err(Error::InsufficientData { id: s.id.clone(), len: s.len(), lag, need: lag + 2 });
        }
    }
    Ok(())
}

fn check_alignment(fit: &ModelFit, dataset: &Dataset) -> Result<()> {
    if fit.num_series() != dataset.len() || fit.hmms.iter().zip(&dataset.series).any(|(h, s)| h.id != s.id) {
        return Err(Error::InvalidParameter("fit and dataset list different series".into()));
    }
    let d = dataset.schema.len();
    if fit.states.iter().any(|s| s.dim() != d || s.lag() != fit.hyper.lag) {
        return Err(Error::DimensionMismatch(format!("fit states do not match D = {d}, r = {}", fit.hyper.lag)));
    }
    Ok(())
}

struct Chain<'h> {
    hyper: &'h Hyperparams,
    dim: usize,
    work: Vec<SeriesWork>,
    states: Vec<ARState>,
    features: FeatureMatrix,
    hmms: Vec<SeriesHMM>,
    sequences: Vec<StateSequence>,
    diagnostics: Diagnostics,
}

impl<'h> Chain<'h> {
    fn work_for(dataset: &Dataset, hyper: &Hyperparams) -> Vec<SeriesWork> {
        let dim = dataset.schema.len();
        dataset
            .series
            .iter()
            .map(|s| {
                let design = Design::new(s, hyper.lag);
                let blocks = block_posteriors(&design, hyper, dim);
                SeriesWork { design, cache: Vec::new(), blocks }
            })
            .collect()
    }

    /// One prior-drawn state shared by every series, all frames assigned to it.
    fn init(dataset: &Dataset, hyper: &'h Hyperparams) -> Result<Self> {
        let dim = dataset.schema.len();
        let mut rng = rng::derived(hyper.mcmc.seed, &[STAGE_INIT]);
        let state = sample_prior_state(&hyper.ar_prior, &mut rng);
        let work = Self::work_for(dataset, hyper);
        let n = dataset.len();
        let features = FeatureMatrix::from_rows(&vec![vec![true]; n])?;
        let sequences: Vec<StateSequence> = work
            .iter()
            .zip(&dataset.series)
            .map(|(w, s)| StateSequence { id: s.id.clone(), z: vec![0; w.design.n] })
            .collect();
        let hmms = sequences
            .iter()
            .map(|s| sample_transitions(s, &[0], hyper.gamma, hyper.kappa, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            hyper,
            dim,
            work,
            states: vec![state],
            features,
            hmms,
            sequences,
            diagnostics: Diagnostics { burn_in: hyper.mcmc.burn_in, ..Diagnostics::default() },
        })
    }

    fn from_fit(fit: &ModelFit, dataset: &Dataset, hyper: &'h Hyperparams) -> Self {
        Self {
            hyper,
            dim: dataset.schema.len(),
            work: Self::work_for(dataset, hyper),
            states: fit.states.clone(),
            features: fit.features.clone(),
            hmms: fit.hmms.clone(),
            sequences: fit.sequences.clone(),
            diagnostics: fit.diagnostics.clone(),
        }
    }

    fn into_fit(self) -> ModelFit {
        ModelFit {
            states: self.states,
            features: self.features,
            hmms: self.hmms,
            sequences: self.sequences,
            hyper: self.hyper.clone(),
            diagnostics: self.diagnostics,
        }
    }

    fn set_hmm(&mut self, i: usize, active: Vec<StateId>, weights: DMatrix<f64>) {
        let id = core::mem::take(&mut self.hmms[i].id);
        self.hmms[i] = SeriesHMM::from_weights(id, active, weights);
    }

    /// Log density of `θ` under the prior minus under the birth proposal.
    fn log_prior_over_proposal(&self, i: usize, state: &ARState) -> f64 {
        match self.hyper.birth {
            BirthProposal::Prior => 0.0,
            BirthProposal::DataDriven { .. } => {
                let prior = MniwPosterior::from_prior(&self.hyper.ar_prior).log_density(state.a(), state.sigma());
                let blocks = &self.work[i].blocks;
                let terms: Vec<f64> = blocks.iter().map(|b| b.log_density(state.a(), state.sigma())).collect();
                prior - (log_sum_exp(&terms) - ln(blocks.len() as f64))
            }
        }
    }

    fn propose_state<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> ARState {
        match self.hyper.birth {
            BirthProposal::Prior => sample_prior_state(&self.hyper.ar_prior, rng),
            BirthProposal::DataDriven { .. } => {
                let blocks = &self.work[i].blocks;
                blocks[rng.random_range(0..blocks.len())].sample(rng)
            }
        }
    }

    /// Gibbs over shared states, then one birth or death move, for series `i`.
    fn update_features<R: Rng + ?Sized>(&mut self, i: usize, rng: &mut R) {
        let n_series = self.features.rows();
        let (gamma, kappa) = (self.hyper.gamma, self.hyper.kappa);
        let mut active = self.hmms[i].active().to_vec();
        let mut weights = self.hmms[i].weights().clone();
        let mut current = self.work[i].marginal(&active, &weights, &self.states);

        for k in 0..self.features.cols() {
            let on = self.features.get(i, k);
            let others = self.features.count(k) - usize::from(on);
            if others == 0 || (on && active.len() == 1) {
                continue;
            }
            let (alt_active, alt_weights) = if on {
                remove_state(&active, &weights, k)
            } else {
                insert_state(&active, &weights, k, gamma, kappa, rng)
            };
            let alt = self.work[i].marginal(&alt_active, &alt_weights, &self.states);
            let (ll_on, ll_off) = if on { (current, alt) } else { (alt, current) };
            let log_odds = ln(others as f64) + ll_on - ln((n_series - others) as f64) - ll_off;
            let p_on = 1.0 / (1.0 + exp(-log_odds));
            if p_on.is_nan() {
                continue;
            }
            let want_on = rng.random::<f64>() < p_on;
            if want_on != on {
                self.features.set(i, k, want_on);
                active = alt_active;
                weights = alt_weights;
                current = alt;
            }
        }

        let unique: Vec<StateId> =
            active.iter().copied().filter(|&k| self.features.count(k) == 1).collect();
        if rng.random::<bool>() {
            self.diagnostics.births.proposed += 1;
            let state = self.propose_state(i, rng);
            let correction = self.log_prior_over_proposal(i, &state);
            let k = self.states.len();
            let (alt_active, alt_weights) = insert_state(&active, &weights, k, gamma, kappa, rng);
            self.states.push(state);
            let alt = self.work[i].marginal(&alt_active, &alt_weights, &self.states);
            let log_a = birth_log_acceptance(alt - current, self.hyper.alpha, n_series, unique.len(), correction);
            if ln(rng.random::<f64>()) < log_a {
                self.diagnostics.births.accepted += 1;
                let col = self.features.push_column();
                self.features.set(i, col, true);
                active = alt_active;
                weights = alt_weights;
            } else {
                self.states.pop();
                if let Some(c) = self.work[i].cache.get_mut(k) {
                    *c = None;
                }
            }
        } else if !unique.is_empty() {
            self.diagnostics.deaths.proposed += 1;
            let k = unique[rng.random_range(0..unique.len())];
            if active.len() > 1 {
                let (alt_active, alt_weights) = remove_state(&active, &weights, k);
                let alt = self.work[i].marginal(&alt_active, &alt_weights, &self.states);
                let correction = self.log_prior_over_proposal(i, &self.states[k]);
                let log_a =
                    -birth_log_acceptance(current - alt, self.hyper.alpha, n_series, unique.len() - 1, correction);
                if ln(rng.random::<f64>()) < log_a {
                    self.diagnostics.deaths.accepted += 1;
                    self.features.set(i, k, false);
                    active = alt_active;
                    weights = alt_weights;
                }
            }
        }
        self.set_hmm(i, active, weights);
    }

    fn sample_sequences(&mut self, seed: u64, sweep: u64, only: Option<&[bool]>) {
        let states = &self.states;
        let hmms = &self.hmms;
        let draws = map_items(&mut self.work, |i, w| {
            if only.is_some_and(|o| !o[i]) {
                return None;
            }
            let mut rng = rng::derived(seed, &[sweep, STAGE_SEQUENCES, i as u64]);
            Some(w.ffbs(&hmms[i], states, &mut rng))
        });
        for (seq, z) in self.sequences.iter_mut().zip(draws) {
            if let Some(z) = z {
                seq.z = z;
            }
        }
    }

    /// Drops states no series uses and renumbers the rest in order.
    fn compact(&mut self) {
        let keep: Vec<bool> = self.features.counts().iter().map(|&m| m > 0).collect();
        if keep.iter().all(|&k| k) {
            return;
        }
        let map = self.features.retain_columns(&keep);
        let old = core::mem::take(&mut self.states);
        self.states = old.into_iter().zip(&keep).filter(|(_, k)| **k).map(|(s, _)| s).collect();
        let remap = |s: StateId| map[s].expect("active state survives compaction");
        for h in &mut self.hmms {
            *h = h.remapped(remap);
        }
        for s in &mut self.sequences {
            for z in &mut s.z {
                *z = remap(*z);
            }
        }
        for w in &mut self.work {
            w.invalidate();
        }
    }

    fn sample_params(&mut self, seed: u64, sweep: u64) {
        let k = self.states.len();
        let w = self.dim * self.hyper.lag;
        let mut stats = vec![ArStats::new(self.dim, self.hyper.lag); k];
        for (work, seq) in self.work.iter().zip(&self.sequences) {
            for (t, &z) in seq.z.iter().enumerate() {
                let (y, x) = work.design.frame(t);
                debug_assert_eq!(x.len(), w);
                stats[z].push(y, x);
            }
        }
        let prior = &self.hyper.ar_prior;
        self.states = map_range(k, |s| {
            let mut rng = rng::derived(seed, &[sweep, STAGE_PARAMS, s as u64]);
            MniwPosterior::update(prior, &stats[s]).sample(&mut rng)
        });
        for w in &mut self.work {
            w.invalidate();
        }
    }

    fn sample_transition_weights(&mut self, seed: u64, sweep: u64) -> Result<()> {
        let (gamma, kappa) = (self.hyper.gamma, self.hyper.kappa);
        let sequences = &self.sequences;
        let hmms = &self.hmms;
        let fresh = map_range(sequences.len(), |i| {
            let mut rng = rng::derived(seed, &[sweep, STAGE_TRANSITIONS, i as u64]);
            sample_transitions(&sequences[i], hmms[i].active(), gamma, kappa, &mut rng)
        });
        self.hmms = fresh.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(())
    }

    fn sweep(&mut self, sweep: u64) -> Result<()> {
        let seed = self.hyper.mcmc.seed;
        let mut rng = rng::derived(seed, &[sweep, STAGE_FEATURES]);
        for i in 0..self.hmms.len() {
            self.update_features(i, &mut rng);
        }
        self.sample_sequences(seed, sweep, None);
        self.compact();
        self.sample_params(seed, sweep);
        self.sample_transition_weights(seed, sweep)?;
        let ll = self.joint_log_likelihood();
        self.diagnostics.log_likelihood.push(ll);
        self.diagnostics.num_states.push(self.states.len());
        Ok(())
    }

    fn joint_log_likelihood(&self) -> f64 {
        let per_series = |i: usize| {
            let design = &self.work[i].design;
            let hmm = &self.hmms[i];
            let z = &self.sequences[i].z;
            let mut ll = -ln(hmm.len() as f64);
            for (t, &s) in z.iter().enumerate() {
                let (y, x) = design.frame(t);
                ll += self.states[s].log_density(y, x);
            }
            for w in z.windows(2) {
                ll += ln(hmm.prob(w[0], w[1]).expect("sequence stays in the active set"));
            }
            ll
        };
        (0..self.hmms.len()).map(per_series).sum()
    }
}

fn insert_state<R: Rng + ?Sized>(
    active: &[StateId],
    weights: &DMatrix<f64>,
    k: StateId,
    gamma: f64,
    kappa: f64,
    rng: &mut R,
) -> (Vec<StateId>, DMatrix<f64>) {
    let pos = active.binary_search(&k).expect_err("state already active");
    let mut out_active = active.to_vec();
    out_active.insert(pos, k);
    let m = out_active.len();
    let mut out = DMatrix::zeros(m, m);
    let old = |a: usize| if a < pos { a } else { a - 1 };
    for a in 0..m {
        for b in 0..m {
            out[(a, b)] = if a == pos || b == pos {
                sample_gamma(gamma + if a == b { kappa } else { 0.0 }, rng)
            } else {
                weights[(old(a), old(b))]
            };
        }
    }
    (out_active, out)
}

fn remove_state(active: &[StateId], weights: &DMatrix<f64>, k: StateId) -> (Vec<StateId>, DMatrix<f64>) {
    let pos = active.binary_search(&k).expect("state is active");
    let mut out_active = active.to_vec();
    out_active.remove(pos);
    (out_active, weights.clone().remove_row(pos).remove_column(pos))
}

/// Runs `hyper.mcmc.sweeps` sweeps from a single shared prior-drawn state and
/// returns the last sample. Identical inputs and seed give an identical fit.
pub fn fit(dataset: &Dataset, hyper: &Hyperparams) -> Result<ModelFit> {
    check_series(dataset, hyper.lag)?;
    hyper.validate(dataset.schema.len())?;
    let mut chain = Chain::init(dataset, hyper)?;
    for s in 0..hyper.mcmc.sweeps {
        chain.sweep(s as u64)?;
    }
    Ok(chain.into_fit())
}

/// `log p(y, z | θ, π)`: emissions and transitions along the current
/// sequences, plus a uniform initial state over each series' active set.
pub fn joint_log_likelihood(fit: &ModelFit, dataset: &Dataset) -> Result<f64> {
    check_series(dataset, fit.hyper.lag)?;
    check_alignment(fit, dataset)?;
    for (s, w) in fit.sequences.iter().zip(&dataset.series) {
        if s.z.len() != w.len() - fit.hyper.lag {
            return Err(Error::DimensionMismatch(format!("sequence `{}` does not cover its series", s.id)));
        }
    }
    Ok(Chain::from_fit(fit, dataset, &fit.hyper).joint_log_likelihood())
}

/// One pass of the feature moves over every series. Series whose active set
/// changed get a fresh state sequence; unused states are then dropped.
pub fn resample_features<R: Rng + ?Sized>(fit: &ModelFit, dataset: &Dataset, rng: &mut R) -> Result<ModelFit> {
    check_series(dataset, fit.hyper.lag)?;
    check_alignment(fit, dataset)?;
    let hyper = fit.hyper.clone();
    let mut chain = Chain::from_fit(fit, dataset, &hyper);
    for i in 0..chain.hmms.len() {
        chain.update_features(i, rng);
    }
    let changed: Vec<bool> = chain.hmms.iter().zip(&fit.hmms).map(|(a, b)| a.active() != b.active()).collect();
    chain.sample_sequences(rng.random(), 0, Some(&changed));
    chain.compact();
    Ok(chain.into_fit())
}

/// One posterior draw of the state path of `series` under `hmm`, restricted
/// to its active states.
pub fn sample_state_sequence<R: Rng + ?Sized>(
    series: &MultiSeries,
    hmm: &SeriesHMM,
    states: &[ARState],
    rng: &mut R,
) -> Result<StateSequence> {
    let first = states.first().ok_or_else(|| Error::InvalidParameter("no AR states given".into()))?;
    let lag = first.lag();
    if series.len() <= lag {
        return Err(Error::InsufficientData { id: series.id.clone(), len: series.len(), lag, need: lag + 1 });
    }
    if let Some(&bad) = hmm.active().iter().find(|&&k| k >= states.len()) {
        return Err(Error::InvalidParameter(format!("active state {bad} has no parameters")));
    }
    if states.iter().any(|s| s.dim() != series.dim() || s.lag() != lag) {
        return Err(Error::DimensionMismatch(format!("states do not match series `{}`", series.id)));
    }
    let mut work = SeriesWork { design: Design::new(series, lag), cache: Vec::new(), blocks: Vec::new() };
    Ok(StateSequence { id: series.id.clone(), z: work.ffbs(hmm, states, rng) })
}

pub(crate) fn decode_viterbi(series: &MultiSeries, hmm: &SeriesHMM, states: &[ARState]) -> Vec<StateId> {
    let lag = states[0].lag();
    let mut work = SeriesWork { design: Design::new(series, lag), cache: Vec::new(), blocks: Vec::new() };
    let m = hmm.len();
    let log_emit = work.log_emit(hmm.active(), states);
    super::hmm::viterbi(&log_emit, m, &hmm.trans_row_major(), &vec![1.0 / m as f64; m])
        .into_iter()
        .map(|j| hmm.active()[j])
        .collect()
}
