//! Per-series vectors: stationary distributions over the global states, and
//! spectral embeddings of a distance matrix.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::distance::{DistanceMatrix, Measure};
use crate::math::{exp, median, sqrt};
use crate::model::{ModelFit, SeriesHMM};
use crate::{Error, Result};

/// Mixing weight toward uniform applied to reducible chains.
pub const SMOOTHING: f64 = 1e-8;
const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITERS: usize = 100_000;
const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepresentationKind {
    Stationary,
    SpectralLikelihood,
    SpectralViterbi,
}

impl RepresentationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Stationary => "stationary",
            Self::SpectralLikelihood => "spectral-likelihood",
            Self::SpectralViterbi => "spectral-viterbi",
        }
    }

    pub fn spectral(measure: Measure) -> Self {
        match measure {
            Measure::Likelihood => Self::SpectralLikelihood,
            Measure::Viterbi => Self::SpectralViterbi,
        }
    }
}

/// Which graph the spectral embedding decomposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpectralMode {
    /// Laplacian of the distance matrix itself, largest eigenvectors.
    #[default]
    Distance,
    /// Laplacian of the Gaussian affinity `exp(−d² / 2σ²)` with σ the median
    /// off-diagonal distance, smallest eigenvectors.
    GaussianAffinity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    pub ids: Vec<String>,
    /// `N × d`, one row per series.
    pub vectors: DMatrix<f64>,
    pub kind: RepresentationKind,
    /// Set for spectral kinds.
    pub mode: Option<SpectralMode>,
}

impl Representation {
    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

/// Whether every state reaches every other along positive entries.
fn irreducible(p: &DMatrix<f64>) -> bool {
    let m = p.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; m];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..m {
                let w = if forward { p[(i, j)] } else { p[(j, i)] };
                if w > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

fn residual(p: &DMatrix<f64>, phi: &[f64]) -> f64 {
    let m = p.nrows();
    (0..m)
        .map(|j| ((0..m).map(|i| phi[i] * p[(i, j)]).sum::<f64>() - phi[j]).abs())
        .fold(0.0, f64::max)
}

fn solve_direct(p: &DMatrix<f64>) -> Option<Vec<f64>> {
    let m = p.nrows();
    let mut a = p.transpose() - DMatrix::identity(m, m);
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(m);
    b[m - 1] = 1.0;
    let x = a.lu().solve(&b)?;
    if x.iter().any(|v| !v.is_finite() || *v < -1e-12) {
        return None;
    }
    let clipped: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    let s: f64 = clipped.iter().sum();
    Some(clipped.into_iter().map(|v| v / s).collect())
}

fn power_iteration(p: &DMatrix<f64>) -> Vec<f64> {
    let m = p.nrows();
    let mut phi = vec![1.0 / m as f64; m];
    let mut next = vec![0.0; m];
    for _ in 0..POWER_MAX_ITERS {
        for j in 0..m {
            next[j] = (0..m).map(|i| phi[i] * p[(i, j)]).sum();
        }
        let s: f64 = next.iter().sum();
        let mut delta = 0.0_f64;
        for j in 0..m {
            next[j] /= s;
            delta = delta.max((next[j] - phi[j]).abs());
        }
        core::mem::swap(&mut phi, &mut next);
        if delta < POWER_TOL {
            break;
        }
    }
    phi
}

/// `φ` with `φ P = φ`, `φ ≥ 0`, `Σ φ = 1` for a row-stochastic `P`.
///
/// Irreducible chains are solved exactly; reducible ones are first mixed
/// with the uniform chain at weight [`SMOOTHING`]. Power iteration takes
/// over if the linear solve fails its residual check.
pub fn stationary_of_matrix(p: &DMatrix<f64>) -> Vec<f64> {
    let m = p.nrows();
    assert!(m > 0 && p.ncols() == m, "transition matrix must be square and nonempty");
    if m == 1 {
        return vec![1.0];
    }
    let smoothed;
    let p = if irreducible(p) {
        p
    } else {
        smoothed = p.map(|v| (1.0 - SMOOTHING) * v + SMOOTHING / m as f64);
        &smoothed
    };
    match solve_direct(p) {
        Some(phi) if residual(p, &phi) < RESIDUAL_TOL => phi,
        _ => power_iteration(p),
    }
}

/// Stationary distribution of one series' chain, over its active states.
pub fn stationary_distribution(hmm: &SeriesHMM) -> Vec<f64> {
    stationary_of_matrix(hmm.trans())
}

/// `N × K` matrix whose row `i` scatters series `i`'s stationary
/// distribution into the global state columns.
pub fn stationary_representation(fit: &ModelFit) -> Representation {
    let n = fit.num_series();
    let k = fit.num_states();
    let mut vectors = DMatrix::zeros(n, k);
    for (i, hmm) in fit.hmms.iter().enumerate() {
        for (&s, p) in hmm.active().iter().zip(stationary_distribution(hmm)) {
            vectors[(i, s)] = p;
        }
    }
    Representation { ids: fit.ids(), vectors, kind: RepresentationKind::Stationary, mode: None }
}

/// `I − D^{-1/2} W D^{-1/2}` with `D` the row sums of `w`.
pub fn normalized_laplacian(w: &DMatrix<f64>, ids: &[String]) -> Result<DMatrix<f64>> {
    let n = w.nrows();
    let mut scale = Vec::with_capacity(n);
    for i in 0..n {
        let d: f64 = w.row(i).sum();
        if !(d > 0.0) {
            return Err(Error::Degenerate(format!("series `{}` has zero total weight", ids[i])));
        }
        scale.push(1.0 / sqrt(d));
    }
    let mut l = DMatrix::from_fn(n, n, |i, j| -scale[i] * w[(i, j)] * scale[j]);
    for i in 0..n {
        l[(i, i)] += 1.0;
        for j in 0..i {
            let v = 0.5 * (l[(i, j)] + l[(j, i)]);
            l[(i, j)] = v;
            l[(j, i)] = v;
        }
    }
    Ok(l)
}

/// Gaussian affinities `exp(−d² / 2σ²)`, zero diagonal; σ is the median
/// off-diagonal distance (1 if that is zero).
pub fn gaussian_affinity(d: &DMatrix<f64>) -> DMatrix<f64> {
    let n = d.nrows();
    let off: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| d[(i, j)]).collect();
    let sigma = if off.is_empty() { 1.0 } else { median(&off) };
    let sigma = if sigma > 0.0 { sigma } else { 1.0 };
    DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { exp(-d[(i, j)] * d[(i, j)] / (2.0 * sigma * sigma)) })
}

/// Eigenpairs of a symmetric matrix sorted by eigenvalue, each eigenvector
/// sign-fixed so its largest-magnitude entry is positive.
pub fn sorted_eigenpairs(m: &DMatrix<f64>, descending: bool) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (eig.eigenvalues[a], eig.eigenvalues[b]);
        let o = x.partial_cmp(&y).expect("finite eigenvalues");
        if descending {
            o.reverse()
        } else {
            o
        }
    });
    let values = order.iter().map(|&c| eig.eigenvalues[c]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &c) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(c);
        let mut pivot = 0;
        for r in 1..n {
            if col[r].abs() > col[pivot].abs() {
                pivot = r;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[(r, dst)] = sign * col[r];
        }
    }
    (values, vectors)
}

/// The `k`-column spectral embedding of `dm`.
pub fn spectral_representation(dm: &DistanceMatrix, k: usize, mode: SpectralMode) -> Result<Representation> {
    let n = dm.len();
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("spectral dimension K = {k} must lie in 1..={n}")));
    }
    let w = match mode {
        SpectralMode::Distance => dm.values.clone(),
        SpectralMode::GaussianAffinity => gaussian_affinity(&dm.values),
    };
    let l = normalized_laplacian(&w, &dm.ids)?;
    let (_, vectors) = sorted_eigenpairs(&l, mode == SpectralMode::Distance);
    Ok(Representation {
        ids: dm.ids.clone(),
        vectors: vectors.columns(0, k).into_owned(),
        kind: RepresentationKind::spectral(dm.measure),
        mode: Some(mode),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn power_oracle(p: &DMatrix<f64>) -> Vec<f64> {
        let mut phi = DMatrix::from_element(1, p.nrows(), 1.0 / p.nrows() as f64);
        for _ in 0..20_000 {
            phi = &phi * p;
        }
        phi.iter().copied().collect()
    }

    #[test]
    fn uniform_chain() {
        let p = DMatrix::from_element(3, 3, 1.0 / 3.0);
        for v in stationary_of_matrix(&p) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn two_state_hand_value() {
        let p = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.5, 0.5]);
        let phi = stationary_of_matrix(&p);
        assert!((phi[0] - 5.0 / 6.0).abs() < 1e-14 && (phi[1] - 1.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn identity_is_smoothed_to_uniform() {
        let p = DMatrix::<f64>::identity(4, 4);
        let phi = stationary_of_matrix(&p);
        let smoothed = p.map(|v| (1.0 - SMOOTHING) * v + SMOOTHING / 4.0);
        assert!(residual(&smoothed, &phi) < 1e-10);
        for v in phi {
            assert!((v - 0.25).abs() < 1e-8);
        }
    }

    #[test]
    fn periodic_chain_is_solved_exactly() {
        let p = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let phi = stationary_of_matrix(&p);
        assert!(residual(&p, &phi) < 1e-14);
    }

    #[test]
    fn random_chains_match_power_iteration() {
        let mut r = rng::stream(31);
        for _ in 0..50 {
            let m = r.random_range(2..=10);
            let mut p = DMatrix::from_fn(m, m, |_, _| r.random::<f64>());
            for i in 0..m {
                let s = p.row(i).sum();
                p.row_mut(i).scale_mut(1.0 / s);
            }
            let phi = stationary_of_matrix(&p);
            assert!(residual(&p, &phi) < 1e-10);
            for (a, b) in phi.iter().zip(power_oracle(&p)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    fn dm(values: DMatrix<f64>) -> DistanceMatrix {
        let n = values.nrows();
        DistanceMatrix { ids: (0..n).map(|i| format!("s{i}")).collect(), values, measure: Measure::Likelihood }
    }

    #[test]
    fn full_basis_reconstructs_laplacian() {
        let mut r = rng::stream(2);
        let n = 7;
        let mut v = DMatrix::from_fn(n, n, |_, _| r.random::<f64>());
        v = &v + v.transpose();
        v.fill_diagonal(0.0);
        let d = dm(v);
        let rep = spectral_representation(&d, n, SpectralMode::Distance).unwrap();
        let l = normalized_laplacian(&d.values, &d.ids).unwrap();
        let (vals, _) = sorted_eigenpairs(&l, true);
        let u = &rep.vectors;
        let rebuilt = u * DMatrix::from_diagonal(&DVector::from_vec(vals)) * u.transpose();
        assert!((rebuilt - &l).abs().max() < 1e-8);
        assert!((u.transpose() * u - DMatrix::identity(n, n)).abs().max() < 1e-8);
    }

    #[test]
    fn zero_row_is_degenerate() {
        let mut v = DMatrix::from_element(3, 3, 1.0);
        v.fill_diagonal(0.0);
        v[(0, 1)] = 0.0;
        v[(1, 0)] = 0.0;
        v[(0, 2)] = 0.0;
        v[(2, 0)] = 0.0;
        let err = spectral_representation(&dm(v), 2, SpectralMode::Distance).unwrap_err();
        assert!(matches!(err, Error::Degenerate(ref m) if m.contains("s0")));
    }

    #[test]
    fn k_out_of_range() {
        let mut v = DMatrix::from_element(3, 3, 1.0);
        v.fill_diagonal(0.0);
        assert!(spectral_representation(&dm(v.clone()), 0, SpectralMode::Distance).is_err());
        assert!(spectral_representation(&dm(v), 4, SpectralMode::Distance).is_err());
    }

    #[test]
    fn affinity_mode_separates_blocks() {
        let n = 6;
        let v = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else if (i < 3) == (j < 3) { 1.0 } else { 5.0 });
        let rep = spectral_representation(&dm(v), 2, SpectralMode::GaussianAffinity).unwrap();
        let second: Vec<f64> = rep.vectors.column(1).iter().copied().collect();
        assert!(second[..3].iter().all(|x| x.signum() == second[0].signum()));
        assert!(second[3..].iter().all(|x| x.signum() == -second[0].signum()));
    }
}
