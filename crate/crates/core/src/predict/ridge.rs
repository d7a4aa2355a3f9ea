use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::math::sqrt;

/// Column means and standard deviations of a training block. Columns with no
/// spread get scale 0 and are zeroed out.
#[derive(Debug, Clone)]
pub(crate) struct Scaler {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Scaler {
    pub(crate) fn fit(x: &DMatrix<f64>) -> Self {
        let (n, d) = x.shape();
        let mut mean = vec![0.0; d];
        let mut inv_std = vec![0.0; d];
        for j in 0..d {
            let col = x.column(j);
            let m = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            mean[j] = m;
            let sd = sqrt(var);
            inv_std[j] = if sd > 1e-12 * (1.0 + m.abs()) { 1.0 / sd } else { 0.0 };
        }
        Self { mean, inv_std }
    }

    pub(crate) fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.mean[j]) * self.inv_std[j])
    }
}

/// A fitted linear model `ŷ = b + (scaled x) · β`.
#[derive(Debug, Clone)]
pub(crate) struct RidgeFit {
    pub(crate) scaler: Option<Scaler>,
    pub(crate) intercept: f64,
    pub(crate) coef: DVector<f64>,
}

/// Solves `(XᵀX + λI) β = Xᵀy`, after optional standardization of `X` and
/// centering of `X` and `y` when fitting an intercept.
pub(crate) fn fit_ridge(x: &DMatrix<f64>, y: &[f64], penalty: f64, intercept: bool, standardize: bool) -> RidgeFit {
    let scaler = standardize.then(|| Scaler::fit(x));
    let mut xs = match &scaler {
        Some(s) => s.apply(x),
        None => x.clone(),
    };
    let n = y.len();
    let (x_mean, y_mean) = if intercept {
        let xm: Vec<f64> = (0..xs.ncols()).map(|j| xs.column(j).sum() / n as f64).collect();
        for j in 0..xs.ncols() {
            for i in 0..n {
                xs[(i, j)] -= xm[j];
            }
        }
        (xm, y.iter().sum::<f64>() / n as f64)
    } else {
        (vec![0.0; xs.ncols()], 0.0)
    };
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let d = xs.ncols();
    let gram = xs.transpose() * &xs + DMatrix::identity(d, d) * penalty;
    let rhs = xs.transpose() * yc;
    let coef = match gram.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => gram.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(d)),
    };
    let shift: f64 = x_mean.iter().zip(coef.iter()).map(|(m, b)| m * b).sum();
    RidgeFit { scaler, intercept: y_mean - shift, coef }
}

impl RidgeFit {
    pub(crate) fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let xs = match &self.scaler {
            Some(s) => s.apply(x),
            None => x.clone(),
        };
        (xs * &self.coef).iter().map(|v| v + self.intercept).collect()
    }
}
