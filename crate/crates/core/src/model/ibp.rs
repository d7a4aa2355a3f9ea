use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use super::FeatureMatrix;
use crate::{Error, Result};

const MAX_ROW_RETRIES: usize = 1000;

/// Draws an `n`-row feature matrix from the Indian buffet process.
///
/// Customer `j` (1-based) takes each existing dish `k` with probability
/// `m_k / j`, then `Poisson(alpha / j)` new dishes. With `nonempty_rows`,
/// a row that comes up empty is redrawn; after 1000 empty redraws it is given
/// one new dish.
pub fn sample_ibp_prior<R: Rng + ?Sized>(
    n: usize,
    alpha: f64,
    nonempty_rows: bool,
    rng: &mut R,
) -> Result<FeatureMatrix> {
    if n == 0 {
        return Err(Error::InvalidParameter("IBP needs at least one customer".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter("IBP mass must be positive".into()));
    }
    let mut rows: Vec<Vec<bool>> = Vec::with_capacity(n);
    let mut counts: Vec<usize> = Vec::new();
    for j in 1..=n {
        let poisson = Poisson::new(alpha / j as f64).expect("positive rate");
        let mut attempt = 0;
        let (taken, fresh) = loop {
            let taken: Vec<bool> = counts.iter().map(|&m| rng.random::<f64>() < m as f64 / j as f64).collect();
            let fresh = poisson.sample(rng) as usize;
            attempt += 1;
            if !nonempty_rows || fresh > 0 || taken.iter().any(|&t| t) {
                break (taken, fresh);
            }
            if attempt >= MAX_ROW_RETRIES {
                break (taken, 1);
            }
        };
        for (k, t) in taken.iter().enumerate() {
            if *t {
                counts[k] += 1;
            }
        }
        counts.extend(core::iter::repeat_n(1, fresh));
        let mut row = taken;
        row.extend(core::iter::repeat_n(true, fresh));
        rows.push(row);
    }
    let k = counts.len();
    let padded: Vec<Vec<bool>> = rows
        .into_iter()
        .map(|mut r| {
            r.resize(k, false);
            r
        })
        .collect();
    if padded.is_empty() {
        return Ok(FeatureMatrix::zeros(n, 0));
    }
    FeatureMatrix::from_rows(&padded).map(|f| if k == 0 { FeatureMatrix::zeros(n, 0) } else { f })
}

#[allow(dead_code)]
fn harmonic(n: usize) -> f64 {
    (1..=n).map(|j| 1.0 / j as f64).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{mean, sqrt, std_pop};
    use crate::rng;

    #[test]
    fn single_customer_takes_poisson_dishes() {
        let mut r = rng::stream(1);
        let draws: Vec<f64> =
            (0..10_000).map(|_| sample_ibp_prior(1, 2.0, false, &mut r).unwrap().cols() as f64).collect();
        assert!((mean(&draws) - 2.0).abs() < 3.0 * sqrt(2.0 / 10_000.0));
    }

    #[test]
    fn vanishing_mass_gives_empty_matrix() {
        let f = sample_ibp_prior(5, 1e-12, false, &mut rng::stream(2)).unwrap();
        assert_eq!((f.rows(), f.cols()), (5, 0));
    }

    #[test]
    fn nonempty_guard_fills_every_row() {
        let mut r = rng::stream(3);
        for _ in 0..200 {
            let f = sample_ibp_prior(12, 0.5, true, &mut r).unwrap();
            assert!((0..12).all(|i| !f.row_active(i).is_empty()));
            assert!(f.counts().iter().all(|&m| m > 0));
        }
    }

    #[test]
    fn dish_total_matches_harmonic_expectation() {
        let mut r = rng::stream(4);
        let totals: Vec<f64> =
            (0..4000).map(|_| sample_ibp_prior(20, 1.5, false, &mut r).unwrap().cols() as f64).collect();
        let se = std_pop(&totals) / sqrt(totals.len() as f64);
        assert!((mean(&totals) - 1.5 * harmonic(20)).abs() < 3.0 * se);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(sample_ibp_prior(0, 1.0, true, &mut rng::stream(0)).is_err());
        assert!(sample_ibp_prior(3, 0.0, true, &mut rng::stream(0)).is_err());
    }
}
