//! Distribution tails and the rank/contingency tests used to compare clusters.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{exp, ln, ln_gamma};

const MAX_ITER: usize = 10_000;
const EPS: f64 = 1e-16;

/// Regularized upper incomplete gamma `Q(a, x) = Γ(a, x) / Γ(a)`.
///
/// Series expansion below `x < a + 1`, Lentz continued fraction above.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    assert!(a > 0.0, "gamma_q needs a > 0");
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_continued_fraction(a, x)
    }
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut del = sum;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * exp(-x + a * ln(x) - ln_gamma(a))
}

fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    exp(-x + a * ln(x) - ln_gamma(a)) * h
}

/// Survival function of the chi-square distribution.
pub fn chi_square_sf(statistic: f64, dof: f64) -> f64 {
    gamma_q(0.5 * dof, 0.5 * statistic)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestOutcome {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Some expected cell count fell below 5 (chi-square only).
    pub small_expected: bool,
}

/// Pearson chi-square test of independence on an `r × c` contingency table
/// (no continuity correction). `None` when fewer than two non-empty rows or
/// columns remain.
pub fn chi_square_independence(table: &[Vec<f64>]) -> Option<TestOutcome> {
    let rows: Vec<&Vec<f64>> = table.iter().filter(|r| r.iter().sum::<f64>() > 0.0).collect();
    if rows.len() < 2 {
        return None;
    }
    let ncol = rows[0].len();
    let col_tot: Vec<f64> = (0..ncol).map(|j| rows.iter().map(|r| r[j]).sum()).collect();
    let cols: Vec<usize> = (0..ncol).filter(|&j| col_tot[j] > 0.0).collect();
    if cols.len() < 2 {
        return None;
    }
    let n: f64 = col_tot.iter().sum();
    let mut stat = 0.0;
    let mut small = false;
    for r in &rows {
        let rt: f64 = r.iter().sum();
        for &j in &cols {
            let e = rt * col_tot[j] / n;
            if e < 5.0 {
                small = true;
            }
            stat += (r[j] - e) * (r[j] - e) / e;
        }
    }
    let dof = (rows.len() - 1) * (cols.len() - 1);
    Some(TestOutcome { statistic: stat, dof, p_value: chi_square_sf(stat, dof as f64), small_expected: small })
}

/// Average ranks (1-based) with ties sharing the mean rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = 0.5 * ((i + 1) + (j + 1)) as f64;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Kruskal–Wallis H test with tie correction. `None` when fewer than two
/// non-empty groups or all values tie.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Option<TestOutcome> {
    let groups: Vec<&Vec<f64>> = groups.iter().filter(|g| !g.is_empty()).collect();
    if groups.len() < 2 {
        return None;
    }
    let all: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    let n = all.len() as f64;
    let r = ranks(&all);
    let mut h = 0.0;
    let mut offset = 0;
    for g in &groups {
        let rs: f64 = r[offset..offset + g.len()].iter().sum();
        h += rs * rs / g.len() as f64;
        offset += g.len();
    }
    h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0);

    let mut sorted = all.clone();
    sorted.sort_by(f64::total_cmp);
    let mut ties = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    let correction = 1.0 - ties / (n * n * n - n);
    if correction <= 0.0 {
        return None;
    }
    h /= correction;
    let dof = groups.len() - 1;
    Some(TestOutcome { statistic: h, dof, p_value: chi_square_sf(h, dof as f64), small_expected: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_square_tail_reference_values() {
        // 3.8414588206941285 is the 95% quantile of chi2(1).
        assert!((chi_square_sf(3.841_458_820_694_128_5, 1.0) - 0.05).abs() < 1e-12);
        // dof 2: sf(x) = exp(-x/2)
        for x in [0.1, 1.0, 5.0, 30.0] {
            assert!((chi_square_sf(x, 2.0) - exp(-x / 2.0)).abs() < 1e-14);
        }
        assert!((chi_square_sf(40.0, 1.0) / 2.539_628_589_470_863_4e-10 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn gamma_q_small_and_large_arguments() {
        assert_eq!(gamma_q(1.0, 0.0), 1.0);
        // Q(1, x) = e^{-x}
        assert!((gamma_q(1.0, 0.5) - exp(-0.5)).abs() < 1e-15);
        assert!((gamma_q(1.0, 50.0) - exp(-50.0)).abs() < 1e-30);
    }

    #[test]
    fn perfectly_separated_two_by_two() {
        let table = alloc::vec![alloc::vec![20.0, 0.0], alloc::vec![0.0, 20.0]];
        let out = chi_square_independence(&table).unwrap();
        assert!((out.statistic - 40.0).abs() < 1e-12);
        assert!(out.p_value < 1e-9);
    }

    #[test]
    fn identical_rows_have_zero_statistic() {
        let table = alloc::vec![alloc::vec![5.0, 7.0], alloc::vec![5.0, 7.0]];
        let out = chi_square_independence(&table).unwrap();
        assert!(out.statistic.abs() < 1e-15);
        assert!((out.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kruskal_wallis_hand_case() {
        // Ranks: g1 = {1,2,3}, g2 = {4,5,6}; H = 12/(6*7)*(36/3+225/3) - 21 = 3.857142...
        let g = alloc::vec![alloc::vec![1.0, 2.0, 3.0], alloc::vec![4.0, 5.0, 6.0]];
        let out = kruskal_wallis(&g).unwrap();
        assert!((out.statistic - 27.0 / 7.0).abs() < 1e-12);
        assert_eq!(out.dof, 1);
        assert!(kruskal_wallis(&[alloc::vec![1.0, 1.0], alloc::vec![1.0]]).is_none());
    }

    #[test]
    fn ranks_share_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), alloc::vec![3.5, 1.0, 3.5, 2.0]);
    }
}
