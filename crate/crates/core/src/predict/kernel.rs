use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::math::{exp, median, sqrt};

fn sq_dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    (0..a.ncols()).map(|c| (a[(i, c)] - b[(j, c)]) * (a[(i, c)] - b[(j, c)])).sum()
}

/// Median pairwise Euclidean distance between rows; 1 if it is zero.
pub(crate) fn median_distance(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let d: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| sqrt(sq_dist(x, i, x, j))).collect();
    let m = median(&d);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

pub(crate) struct KernelRidgeFit {
    train: DMatrix<f64>,
    dual: DVector<f64>,
    offset: f64,
    bandwidth: f64,
}

/// RBF kernel ridge on `y` centered at its training mean; the bandwidth is
/// `scale` times the median training distance.
pub(crate) fn fit_kernel_ridge(x: &DMatrix<f64>, y: &[f64], penalty: f64, scale: f64) -> KernelRidgeFit {
    let n = x.nrows();
    let bandwidth = scale * median_distance(x);
    let gram = DMatrix::from_fn(n, n, |i, j| exp(-sq_dist(x, i, x, j) / (2.0 * bandwidth * bandwidth)))
        + DMatrix::identity(n, n) * penalty;
    let offset = y.iter().sum::<f64>() / n as f64;
    let rhs = DVector::from_iterator(n, y.iter().map(|v| v - offset));
    let dual = match gram.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => gram.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(n)),
    };
    KernelRidgeFit { train: x.clone(), dual, offset, bandwidth }
}

impl KernelRidgeFit {
    pub(crate) fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let h2 = 2.0 * self.bandwidth * self.bandwidth;
        (0..x.nrows())
            .map(|i| {
                self.offset
                    + (0..self.train.nrows())
                        .map(|j| self.dual[j] * exp(-sq_dist(x, i, &self.train, j) / h2))
                        .sum::<f64>()
            })
            .collect()
    }
}
