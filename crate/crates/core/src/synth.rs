//! Synthetic datasets drawn from a known beta-process AR-HMM, and scoring of
//! how well a fit recovers them.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::data::{ChannelSchema, ConstructTable, Dataset, MultiSeries};
use crate::embedding::stationary_distribution;
use crate::model::hmm::sample_index;
use crate::model::{
    sample_transitions, ARState, Diagnostics, FeatureMatrix, Hyperparams, ModelFit, SeriesHMM, StateSequence,
};
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lengths {
    Fixed(usize),
    /// Uniform on `min..=max`.
    Range(usize, usize),
}

/// `value = Σ_k weights[k] · φ(k) + N(0, noise_std²)`, with `φ` the series'
/// true stationary distribution over the global states.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConstruct {
    pub name: String,
    pub weights: Vec<f64>,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_series: usize,
    pub num_states: usize,
    pub dim: usize,
    pub lag: usize,
    pub lengths: Lengths,
    /// `N × K_true`; drawn at random (rows nonempty) when absent.
    pub features: Option<FeatureMatrix>,
    /// Chance that a series uses a state when `features` is drawn.
    pub feature_density: f64,
    /// Per-state AR parameters; diagonal defaults when absent.
    pub states: Option<Vec<ARState>>,
    /// Dirichlet concentration of the true transition rows.
    pub gamma: f64,
    pub kappa: f64,
    pub constructs: Vec<PlantedConstruct>,
    /// Categorical columns: name and one value per series.
    pub demographics: Vec<(String, Vec<String>)>,
    pub seed: u64,
}

impl SynthSpec {
    /// The recovery benchmark: 20 series, 3 channels, 4 true states,
    /// 500 frames, lag 1.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            num_series: 20,
            num_states: 4,
            dim: 3,
            lag: 1,
            lengths: Lengths::Fixed(500),
            features: None,
            feature_density: 0.6,
            states: None,
            gamma: 1.0,
            kappa: 50.0,
            constructs: vec![
                PlantedConstruct { name: "planted".into(), weights: vec![2.0, -1.0, 0.5, 0.0], noise_std: 0.02 },
                PlantedConstruct { name: "noise".into(), weights: vec![0.0; 4], noise_std: 1.0 },
            ],
            demographics: Vec::new(),
            seed,
        }
    }

    /// Two groups of `half` series: the first uses states {0, 1}, the second
    /// {2, 3}. A categorical `group` column records membership.
    pub fn two_groups(half: usize, seed: u64) -> Self {
        let n = 2 * half;
        let rows: Vec<Vec<bool>> =
            (0..n).map(|i| if i < half { vec![true, true, false, false] } else { vec![false, false, true, true] }).collect();
        let group = (0..n).map(|i| String::from(if i < half { "A" } else { "B" })).collect();
        Self {
            num_series: n,
            features: Some(FeatureMatrix::from_rows(&rows).expect("rectangular rows")),
            demographics: vec![("group".into(), group)],
            constructs: Vec::new(),
            ..Self::benchmark(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (n, k, d) = (self.num_series, self.num_states, self.dim);
        if n == 0 || k == 0 || d == 0 || self.lag == 0 {
            return Err(Error::InvalidParameter("series, states, channels and lag must all be positive".into()));
        }
        let min_len = match self.lengths {
            Lengths::Fixed(t) => t,
            Lengths::Range(a, b) if a <= b => a,
            Lengths::Range(a, b) => return Err(Error::InvalidParameter(format!("length range {a}..={b} is empty"))),
        };
        if min_len < self.lag + 2 {
            return Err(Error::InvalidParameter(format!("series length {min_len} is below lag + 2")));
        }
        if !(self.gamma > 0.0) || !(self.kappa >= 0.0) {
            return Err(Error::InvalidParameter("transition concentration must be positive".into()));
        }
        if let Some(f) = &self.features {
            if f.rows() != n || f.cols() != k {
                return Err(Error::DimensionMismatch(format!("true features are {}x{}, expected {n}x{k}", f.rows(), f.cols())));
            }
            if let Some(i) = (0..n).find(|&i| f.row_active(i).is_empty()) {
                return Err(Error::InvalidParameter(format!("true feature row {i} is empty")));
            }
        } else if !(self.feature_density > 0.0 && self.feature_density <= 1.0) {
            return Err(Error::InvalidParameter("feature density must lie in (0, 1]".into()));
        }
        if let Some(states) = &self.states {
            if states.len() != k {
                return Err(Error::DimensionMismatch(format!("{} AR states for K = {k}", states.len())));
            }
            for (s, st) in states.iter().enumerate() {
                if st.dim() != d || st.lag() != self.lag {
                    return Err(Error::DimensionMismatch(format!("state {s} does not match D = {d}, r = {}", self.lag)));
                }
                let radius = spectral_radius(st);
                if !(radius < 1.0) {
                    return Err(Error::UnstableState { state: s, radius });
                }
            }
        }
        for c in &self.constructs {
            if c.weights.len() != k || !(c.noise_std >= 0.0) {
                return Err(Error::InvalidParameter(format!("construct `{}` needs {k} weights and noise ≥ 0", c.name)));
            }
        }
        for (name, values) in &self.demographics {
            if values.len() != n {
                return Err(Error::DimensionMismatch(format!("demographic `{name}` has {} values", values.len())));
            }
        }
        Ok(())
    }
}

/// Spectral radius of the VAR companion matrix.
pub fn spectral_radius(state: &ARState) -> f64 {
    let d = state.dim();
    let r = state.lag();
    let w = d * r;
    // y_t = Σ_l A_l y_{t−l}; A's column blocks run oldest first
    let mut c = DMatrix::zeros(w, w);
    for l in 0..r {
        let block = state.a().columns((r - 1 - l) * d, d);
        c.view_mut((0, l * d), (d, d)).copy_from(&block);
    }
    for i in d..w {
        c[(i, i - d)] = 1.0;
    }
    c.complex_eigenvalues().iter().map(|z| crate::math::sqrt(z.re * z.re + z.im * z.im)).fold(0.0, f64::max)
}

/// Diagonal VAR(r) states with unit stationary variance per channel at lag 1.
/// Channel `j` of state `k` uses coefficient `P[(k + j) mod |P|]`.
pub fn default_states(num_states: usize, dim: usize, lag: usize) -> Vec<ARState> {
    let palette: Vec<f64> = if num_states <= 4 {
        vec![0.9, -0.6, 0.0, 0.6]
    } else {
        (0..num_states).map(|m| -0.9 + 1.8 * m as f64 / (num_states - 1) as f64).collect()
    };
    (0..num_states)
        .map(|k| {
            let mut a = DMatrix::zeros(dim, dim * lag);
            let mut sigma = DMatrix::zeros(dim, dim);
            for j in 0..dim {
                let c = palette[(k + j) % palette.len()];
                // the lag-1 block is the last one
                a[(j, (lag - 1) * dim + j)] = c;
                sigma[(j, j)] = 1.0 - c * c;
            }
            ARState::new(a, sigma).expect("diagonal covariance is positive")
        })
        .collect()
}

fn random_features<R: Rng + ?Sized>(n: usize, k: usize, density: f64, rng: &mut R) -> FeatureMatrix {
    loop {
        let rows: Vec<Vec<bool>> = (0..n)
            .map(|_| loop {
                let row: Vec<bool> = (0..k).map(|_| rng.random::<f64>() < density).collect();
                if row.iter().any(|&b| b) {
                    break row;
                }
            })
            .collect();
        let f = FeatureMatrix::from_rows(&rows).expect("rectangular rows");
        // every state must be shared by at least two series (one when N = 1)
        if f.counts().iter().all(|&m| m >= 2.min(n)) {
            return f;
        }
    }
}

/// Generating parameters and latent paths.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub states: Vec<ARState>,
    pub features: FeatureMatrix,
    pub hmms: Vec<SeriesHMM>,
    /// States of frames `r..T` of each series.
    pub sequences: Vec<StateSequence>,
    pub lag: usize,
}

impl GroundTruth {
    /// The truth as a fit, with default hyperparameters for its shape.
    pub fn to_fit(&self) -> ModelFit {
        let mut hyper = Hyperparams::new(self.states[0].dim());
        hyper.lag = self.lag;
        hyper.ar_prior = crate::model::MniwPrior::weakly_informative(self.states[0].dim(), self.lag);
        hyper.mcmc.sweeps = 0;
        hyper.mcmc.burn_in = 0;
        ModelFit {
            states: self.states.clone(),
            features: self.features.clone(),
            hmms: self.hmms.clone(),
            sequences: self.sequences.clone(),
            hyper,
            diagnostics: Diagnostics::default(),
        }
    }
}

/// Draws a dataset from `spec`. Series `i` uses its own derived stream.
pub fn generate(spec: &SynthSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let (n, k, d, lag) = (spec.num_series, spec.num_states, spec.dim, spec.lag);
    let mut root = rng::derived(spec.seed, &[0]);
    let features = match &spec.features {
        Some(f) => f.clone(),
        None => random_features(n, k, spec.feature_density, &mut root),
    };
    let states = spec.states.clone().unwrap_or_else(|| default_states(k, d, lag));

    let mut series = Vec::with_capacity(n);
    let mut hmms = Vec::with_capacity(n);
    let mut sequences = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = rng::derived(spec.seed, &[1, i as u64]);
        let id = format!("s{i:03}");
        let len = match spec.lengths {
            Lengths::Fixed(t) => t,
            Lengths::Range(a, b) => r.random_range(a..=b),
        };
        let active = features.row_active(i);
        let empty = StateSequence { id: id.clone(), z: vec![active[0]] };
        let hmm = sample_transitions(&empty, &active, spec.gamma, spec.kappa, &mut r)?;
        let hmm = SeriesHMM::new(id.clone(), hmm.active().to_vec(), hmm.trans().clone())?;
        let chols: Vec<DMatrix<f64>> =
            states.iter().map(|s| s.sigma().clone().cholesky().expect("validated covariance").l()).collect();

        let mut values: Vec<f64> = (0..lag * d).map(|_| StandardNormal.sample(&mut r)).collect();
        let mut z = Vec::with_capacity(len - lag);
        let mut local = r.random_range(0..active.len());
        for t in lag..len {
            if t > lag {
                let row: Vec<f64> = hmm.trans().row(local).iter().copied().collect();
                local = sample_index(&row, &mut r);
            }
            let s = active[local];
            z.push(s);
            let x = nalgebra::DVector::from_column_slice(&values[(t - lag) * d..t * d]);
            let noise = nalgebra::DVector::from_fn(d, |_, _| StandardNormal.sample(&mut r));
            let y = states[s].a() * x + &chols[s] * noise;
            values.extend(y.iter());
        }
        series.push(MultiSeries::new(id.clone(), values, d)?);
        sequences.push(StateSequence { id, z });
        hmms.push(hmm);
    }

    let ids: Vec<String> = series.iter().map(|s| s.id.clone()).collect();
    let constructs = if spec.constructs.is_empty() && spec.demographics.is_empty() {
        None
    } else {
        let mut noise_rng = rng::derived(spec.seed, &[2]);
        let numeric = spec
            .constructs
            .iter()
            .map(|c| {
                let normal = Normal::new(0.0, c.noise_std).expect("finite noise");
                let col = hmms
                    .iter()
                    .map(|h| {
                        let phi = stationary_distribution(h);
                        let clean: f64 = h.active().iter().zip(&phi).map(|(&s, p)| c.weights[s] * p).sum();
                        let noise = if c.noise_std > 0.0 { normal.sample(&mut noise_rng) } else { 0.0 };
                        Some(clean + noise)
                    })
                    .collect();
                (c.name.clone(), col)
            })
            .collect();
        let categorical = spec
            .demographics
            .iter()
            .map(|(name, v)| (name.clone(), v.iter().cloned().map(Some).collect()))
            .collect();
        Some(ConstructTable { ids: ids.clone(), numeric, categorical })
    };
    let names: Vec<String> = (0..d).map(|j| format!("ch{j}")).collect();
    let dataset = Dataset::new(ChannelSchema::from_names(&names)?, series, constructs)?;
    Ok((dataset, GroundTruth { states, features, hmms, sequences, lag }))
}

/// Minimum-cost perfect assignment on a square cost matrix (Kuhn–Munkres,
/// `O(n³)`); `result[row] = column`.
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(cost.ncols(), n, "assignment needs a square matrix");
    // potentials and matching over 1-based indices, column 0 is a sentinel
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    /// Fraction of frames whose fitted state maps to the true state.
    pub accuracy: f64,
    pub k_fit: usize,
    pub k_true: usize,
    /// `|K_fit − K_true|`.
    pub delta_k: usize,
    /// Agreement of `F` with `F_true` over `N × K_true`, fitted columns
    /// relabeled by the matching (unmatched true states count as absent).
    pub feature_agreement: f64,
    /// Fitted state → matched true state.
    pub matching: Vec<Option<usize>>,
}

/// Scores `fit` against `truth` after the state matching that maximizes
/// total frame overlap. Sequences are compared on their common trailing
/// frames.
pub fn score_recovery(fit: &ModelFit, truth: &GroundTruth) -> Result<Recovery> {
    if fit.num_series() != truth.hmms.len()
        || fit.sequences.iter().zip(&truth.sequences).any(|(a, b)| a.id != b.id)
    {
        return Err(Error::InvalidParameter("fit and truth describe different series".into()));
    }
    let kf = fit.num_states();
    let kt = truth.states.len();
    let mut overlap = DMatrix::<f64>::zeros(kf, kt);
    let mut frames = 0usize;
    for (a, b) in fit.sequences.iter().zip(&truth.sequences) {
        let len = a.z.len().min(b.z.len());
        for (x, y) in a.z[a.z.len() - len..].iter().zip(&b.z[b.z.len() - len..]) {
            overlap[(*x, *y)] += 1.0;
        }
        frames += len;
    }
    let size = kf.max(kt);
    let top = overlap.max();
    let cost = DMatrix::from_fn(size, size, |i, j| if i < kf && j < kt { top - overlap[(i, j)] } else { top });
    let assignment = hungarian(&cost);
    let matching: Vec<Option<usize>> = (0..kf).map(|i| Some(assignment[i]).filter(|&j| j < kt)).collect();
    let hits: f64 = matching.iter().enumerate().filter_map(|(i, j)| j.map(|j| overlap[(i, j)])).sum();
    let n = fit.num_series();
    let mut agree = 0usize;
    for i in 0..n {
        for j in 0..kt {
            let fitted = matching.iter().position(|&m| m == Some(j)).is_some_and(|kf_| fit.features.get(i, kf_));
            if fitted == truth.features.get(i, j) {
                agree += 1;
            }
        }
    }
    Ok(Recovery {
        accuracy: if frames == 0 { 0.0 } else { hits / frames as f64 },
        k_fit: kf,
        k_true: kt,
        delta_k: kf.abs_diff(kt),
        feature_agreement: agree as f64 / (n * kt) as f64,
        matching,
    })
}
