//! VAR emission densities and conjugate matrix-normal inverse-Wishart updates.

use alloc::format;

use nalgebra::{Cholesky, DMatrix};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use super::{ARState, MniwPrior};
use crate::math::{ln, ln_gamma, LN_2PI};
use crate::{Error, Result};

/// `log N(y_t; A x, Σ)` where `history` holds the `r` previous frames,
/// oldest first, concatenated.
pub fn ar_loglik(state: &ARState, y_t: &[f64], history: &[f64]) -> Result<f64> {
    let d = state.dim();
    if y_t.len() != d {
        return Err(Error::DimensionMismatch(format!("observation has {} channels, state expects {d}", y_t.len())));
    }
    if history.len() != state.a().ncols() {
        return Err(Error::DimensionMismatch(format!(
            "history has {} values, lag {} needs {}",
            history.len(),
            state.lag(),
            state.a().ncols()
        )));
    }
    Ok(state.log_density(y_t, history))
}

/// Sufficient statistics of the `(y_t, x_t)` pairs assigned to one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ArStats {
    pub count: usize,
    /// `Σ x xᵀ`
    pub sxx: DMatrix<f64>,
    /// `Σ y xᵀ`
    pub syx: DMatrix<f64>,
    /// `Σ y yᵀ`
    pub syy: DMatrix<f64>,
}

impl ArStats {
    pub fn new(dim: usize, lag: usize) -> Self {
        let w = dim * lag;
        Self { count: 0, sxx: DMatrix::zeros(w, w), syx: DMatrix::zeros(dim, w), syy: DMatrix::zeros(dim, dim) }
    }

    pub fn from_pairs<'a>(dim: usize, lag: usize, pairs: impl IntoIterator<Item = (&'a [f64], &'a [f64])>) -> Self {
        let mut s = Self::new(dim, lag);
        for (y, x) in pairs {
            s.push(y, x);
        }
        s
    }

    pub fn push(&mut self, y: &[f64], x: &[f64]) {
        let d = y.len();
        let w = x.len();
        for i in 0..w {
            for j in 0..w {
                self.sxx[(i, j)] += x[i] * x[j];
            }
        }
        for i in 0..d {
            for j in 0..w {
                self.syx[(i, j)] += y[i] * x[j];
            }
            for j in 0..d {
                self.syy[(i, j)] += y[i] * y[j];
            }
        }
        self.count += 1;
    }
}

/// Matrix-normal inverse-Wishart parameters: `Σ ~ IW(dof, scale)`,
/// `A | Σ ~ MN(mean, Σ, col_scale)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MniwPosterior {
    pub mean: DMatrix<f64>,
    pub col_scale: DMatrix<f64>,
    pub scale: DMatrix<f64>,
    pub dof: f64,
}

fn spd_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(m);
    match Cholesky::new(sym.clone()) {
        Some(c) => symmetrize(&c.inverse()),
        None => symmetrize(&sym.try_inverse().expect("matrix is singular")),
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

impl MniwPosterior {
    pub fn from_prior(prior: &MniwPrior) -> Self {
        Self {
            mean: prior.mean.clone(),
            col_scale: prior.col_scale.clone(),
            scale: prior.scale.clone(),
            dof: prior.dof,
        }
    }

    /// Conjugate update of `prior` with `stats`.
    pub fn update(prior: &MniwPrior, stats: &ArStats) -> Self {
        if stats.count == 0 {
            return Self::from_prior(prior);
        }
        let v_inv = spd_inverse(&prior.col_scale);
        let m = &prior.mean;
        let kxx = &stats.sxx + &v_inv;
        let kyx = &stats.syx + m * &v_inv;
        let kyy = &stats.syy + m * &v_inv * m.transpose();
        let kxx_inv = spd_inverse(&kxx);
        let mean = &kyx * &kxx_inv;
        let scale = symmetrize(&(&prior.scale + kyy - &mean * kyx.transpose()));
        Self { mean, col_scale: kxx_inv, scale, dof: prior.dof + stats.count as f64 }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ARState {
        let d = self.scale.nrows();
        let mut jitter = 0.0;
        loop {
            let sigma = sample_inverse_wishart(self.dof, &self.scale, rng);
            let sigma = if jitter > 0.0 { sigma + DMatrix::identity(d, d) * jitter } else { sigma };
            let a = sample_matrix_normal(&self.mean, &sigma, &self.col_scale, rng);
            match ARState::new(a, sigma.clone()) {
                Ok(s) => return s,
                Err(_) => jitter = if jitter == 0.0 { 1e-12 * (1.0 + sigma.trace().abs()) } else { jitter * 10.0 },
            }
        }
    }

    /// `log p(A, Σ)` under this distribution.
    pub fn log_density(&self, a: &DMatrix<f64>, sigma: &DMatrix<f64>) -> f64 {
        let p = sigma.nrows() as f64;
        let q = a.ncols() as f64;
        let sigma_inv = spd_inverse(sigma);
        let ld_sigma = log_det_spd(sigma);
        let ld_v = log_det_spd(&self.col_scale);
        let v_inv = spd_inverse(&self.col_scale);
        let diff = a - &self.mean;
        let mn = -0.5 * p * q * LN_2PI - 0.5 * q * ld_sigma - 0.5 * p * ld_v
            - 0.5 * (v_inv * diff.transpose() * &sigma_inv * &diff).trace();
        let nu = self.dof;
        let iw = 0.5 * nu * log_det_spd(&self.scale) - 0.5 * nu * p * core::f64::consts::LN_2
            - ln_multigamma(0.5 * nu, sigma.nrows())
            - 0.5 * (nu + p + 1.0) * ld_sigma
            - 0.5 * (&self.scale * &sigma_inv).trace();
        mn + iw
    }
}

fn log_det_spd(m: &DMatrix<f64>) -> f64 {
    let c = Cholesky::new(symmetrize(m)).expect("matrix is not positive definite");
    let l = c.l();
    2.0 * (0..m.nrows()).map(|i| ln(l[(i, i)])).sum::<f64>()
}

fn ln_multigamma(x: f64, p: usize) -> f64 {
    let pf = p as f64;
    let mut out = 0.25 * pf * (pf - 1.0) * ln(core::f64::consts::PI);
    for j in 1..=p {
        out += ln_gamma(x + 0.5 * (1.0 - j as f64));
    }
    out
}

/// Bartlett draw of `W ~ Wishart(dof, scale⁻¹)`, returned as `Σ = W⁻¹`.
fn sample_inverse_wishart<R: Rng + ?Sized>(dof: f64, scale: &DMatrix<f64>, rng: &mut R) -> DMatrix<f64> {
    let d = scale.nrows();
    let l = Cholesky::new(spd_inverse(scale)).expect("inverse-Wishart scale is not positive definite").l();
    let mut b = DMatrix::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new(dof - i as f64).expect("dof must exceed D - 1");
        b[(i, i)] = crate::math::sqrt(chi.sample(rng));
        for j in 0..i {
            b[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let c = l * b;
    let c_inv = c
        .solve_lower_triangular(&DMatrix::identity(d, d))
        .expect("Bartlett factor is singular");
    symmetrize(&(c_inv.transpose() * c_inv))
}

fn sample_matrix_normal<R: Rng + ?Sized>(
    mean: &DMatrix<f64>,
    row_cov: &DMatrix<f64>,
    col_cov: &DMatrix<f64>,
    rng: &mut R,
) -> DMatrix<f64> {
    let (p, q) = mean.shape();
    let lr = Cholesky::new(symmetrize(row_cov)).expect("row covariance is not positive definite").l();
    let lc = Cholesky::new(symmetrize(col_cov)).expect("column covariance is not positive definite").l();
    let z = DMatrix::from_fn(p, q, |_, _| StandardNormal.sample(rng));
    mean + lr * z * lc.transpose()
}

/// Posterior draw given the assigned pairs; a prior draw when `stats` is empty.
pub fn sample_ar_params<R: Rng + ?Sized>(stats: &ArStats, prior: &MniwPrior, rng: &mut R) -> ARState {
    MniwPosterior::update(prior, stats).sample(rng)
}

pub fn sample_prior_state<R: Rng + ?Sized>(prior: &MniwPrior, rng: &mut R) -> ARState {
    MniwPosterior::from_prior(prior).sample(rng)
}

/// `log p(A, Σ)` under the MNIW prior.
pub fn mniw_log_density(state: &ARState, prior: &MniwPrior) -> f64 {
    MniwPosterior::from_prior(prior).log_density(state.a(), state.sigma())
}

pub(crate) fn stacked_pairs<'a>(y: &'a [f64], x: &'a [f64], d: usize, w: usize) -> impl Iterator<Item = (&'a [f64], &'a [f64])> {
    y.chunks_exact(d).zip(x.chunks_exact(w))
}
