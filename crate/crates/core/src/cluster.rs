//! Agglomerative clustering of a distance matrix, dendrogram cuts, and tests
//! of whether clusters differ on construct or demographic variables.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::data::ConstructTable;
use crate::distance::DistanceMatrix;
use crate::model::ModelFit;
use crate::stats::{chi_square_independence, kruskal_wallis, TestOutcome};
use crate::{Error, Result};

/// Clusters must have more than this many members to be reported.
pub const DEFAULT_MIN_SIZE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Linkage {
    #[default]
    Average,
    Single,
    Complete,
}

impl Linkage {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Average => "average",
            Self::Single => "single",
            Self::Complete => "complete",
        }
    }
}

/// Merge of nodes `a < b` into node `N + index`; leaves are `0..N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub ids: Vec<String>,
    pub merges: Vec<Merge>,
    pub linkage: Linkage,
}

impl Dendrogram {
    pub fn num_leaves(&self) -> usize {
        self.ids.len()
    }

    /// Leaves under `node`, ascending.
    pub fn leaves(&self, node: usize) -> Vec<usize> {
        let n = self.ids.len();
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            if v < n {
                out.push(v);
            } else {
                let m = &self.merges[v - n];
                stack.push(m.a);
                stack.push(m.b);
            }
        }
        out.sort_unstable();
        out
    }

    /// Height at which leaves `i` and `j` first share a cluster.
    pub fn cophenetic(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let n = self.ids.len();
        let mut owner: Vec<usize> = (0..n).collect();
        for (step, m) in self.merges.iter().enumerate() {
            let node = n + step;
            let (ra, rb) = (owner[i], owner[j]);
            let a_in = ra == m.a || ra == m.b;
            let b_in = rb == m.a || rb == m.b;
            if a_in && b_in {
                return m.height;
            }
            if a_in {
                owner[i] = node;
            }
            if b_in {
                owner[j] = node;
            }
        }
        f64::INFINITY
    }
}

/// Bottom-up merging under `linkage` with Lance–Williams updates. Ties go to
/// the lowest `(i, j)` slot pair; a merged cluster keeps the lower slot.
pub fn agglomerate(dm: &DistanceMatrix, linkage: Linkage) -> Result<Dendrogram> {
    dm.validate()?;
    let n = dm.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("clustering needs at least 2 series, got {n}")));
    }
    let mut d = dm.values.clone();
    let mut alive = vec![true; n];
    let mut node: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut merges = Vec::with_capacity(n - 1);
    let mut last = f64::NEG_INFINITY;
    for step in 0..n - 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            for j in i + 1..n {
                if alive[j] && d[(i, j)] < best.0 {
                    best = (d[(i, j)], i, j);
                }
            }
        }
        let (h, i, j) = best;
        // average linkage is monotone; rounding may still nudge a height down
        let height = h.max(last);
        last = height;
        let (a, b) = (node[i].min(node[j]), node[i].max(node[j]));
        merges.push(Merge { a, b, height, size: size[i] + size[j] });
        for k in 0..n {
            if !alive[k] || k == i || k == j {
                continue;
            }
            let (dik, djk) = (d[(i, k)], d[(j, k)]);
            let v = match linkage {
                Linkage::Single => dik.min(djk),
                Linkage::Complete => dik.max(djk),
                Linkage::Average => {
                    (size[i] as f64 * dik + size[j] as f64 * djk) / (size[i] + size[j]) as f64
                }
            };
            d[(i, k)] = v;
            d[(k, i)] = v;
        }
        alive[j] = false;
        size[i] += size[j];
        node[i] = n + step;
    }
    Ok(Dendrogram { ids: dm.ids.clone(), merges, linkage })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLabels {
    pub ids: Vec<String>,
    /// Cluster index per series; −1 for members of clusters of size ≤ `min_size`.
    pub labels: Vec<i64>,
    pub min_size: usize,
}

impl ClusterLabels {
    pub fn num_clusters(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize)
    }

    /// Series indices of cluster `c`.
    pub fn members(&self, c: i64) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == c).collect()
    }
}

/// Components formed by the merges at or below `height`. Components larger
/// than `min_size` are numbered by their smallest leaf; the rest get −1.
pub fn cut(dend: &Dendrogram, height: f64, min_size: usize) -> ClusterLabels {
    let n = dend.num_leaves();
    let mut parent: Vec<usize> = (0..2 * n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for (step, m) in dend.merges.iter().enumerate() {
        if m.height <= height {
            let node = n + step;
            let ra = find(&mut parent, m.a);
            let rb = find(&mut parent, m.b);
            parent[ra] = node;
            parent[rb] = node;
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for &r in &roots {
        *sizes.entry(r).or_default() += 1;
    }
    let mut next = 0;
    let mut assigned: BTreeMap<usize, i64> = BTreeMap::new();
    let labels = roots
        .iter()
        .map(|r| {
            if sizes[r] <= min_size {
                return -1;
            }
            *assigned.entry(*r).or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect();
    ClusterLabels { ids: dend.ids.clone(), labels, min_size }
}

/// Midpoint of the widest gap between consecutive merge heights, `None` when
/// there are fewer than two merges.
pub fn largest_gap_height(dend: &Dendrogram) -> Option<f64> {
    let h: Vec<f64> = dend.merges.iter().map(|m| m.height).collect();
    let mut best: Option<(f64, f64)> = None;
    for w in h.windows(2) {
        let gap = w[1] - w[0];
        if best.is_none_or(|(g, _)| gap > g) {
            best = Some((gap, 0.5 * (w[0] + w[1])));
        }
    }
    best.map(|(_, mid)| mid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariableKind {
    Categorical,
    Numeric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupTest {
    pub variable: String,
    pub kind: VariableKind,
    /// `None` when the variable cannot be tested (constant, or too few groups).
    pub outcome: Option<TestOutcome>,
    /// Series with a cluster label and a value.
    pub n: usize,
}

/// Chi-square tests of independence for categorical variables and
/// Kruskal–Wallis tests for numeric ones, across assigned clusters. Sorted by
/// p-value; untestable variables come last in table order.
pub fn group_tests(labels: &ClusterLabels, table: &ConstructTable) -> Result<Vec<GroupTest>> {
    let clusters = labels.num_clusters();
    if clusters < 2 {
        return Err(Error::Degenerate(format!("group tests need 2 assigned clusters, found {clusters}")));
    }
    let mut out = Vec::new();
    for (name, _) in &table.categorical {
        let col = table.categorical_for(name, &labels.ids).expect("column exists");
        let mut levels: Vec<&String> = col.iter().flatten().collect();
        levels.sort();
        levels.dedup();
        let mut counts = vec![vec![0.0; levels.len()]; clusters];
        let mut n = 0;
        for (i, v) in col.iter().enumerate() {
            if let (Some(v), l) = (v, labels.labels[i]) {
                if l >= 0 {
                    let j = levels.binary_search(&v).expect("level listed");
                    counts[l as usize][j] += 1.0;
                    n += 1;
                }
            }
        }
        out.push(GroupTest {
            variable: name.clone(),
            kind: VariableKind::Categorical,
            outcome: chi_square_independence(&counts),
            n,
        });
    }
    for (name, _) in &table.numeric {
        let col = table.numeric_for(name, &labels.ids).expect("column exists");
        let mut groups = vec![Vec::new(); clusters];
        for (i, v) in col.iter().enumerate() {
            if let (Some(v), l) = (v, labels.labels[i]) {
                if l >= 0 {
                    groups[l as usize].push(*v);
                }
            }
        }
        let n = groups.iter().map(Vec::len).sum();
        out.push(GroupTest { variable: name.clone(), kind: VariableKind::Numeric, outcome: kruskal_wallis(&groups), n });
    }
    out.sort_by(|a, b| match (&a.outcome, &b.outcome) {
        (Some(x), Some(y)) => x.p_value.partial_cmp(&y.p_value).expect("finite p-values"),
        (Some(_), None) => core::cmp::Ordering::Less,
        (None, Some(_)) => core::cmp::Ordering::Greater,
        (None, None) => core::cmp::Ordering::Equal,
    });
    Ok(out)
}

/// `clusters × K` mean fraction of decoded frames spent in each state, over
/// the members of each assigned cluster.
pub fn state_frequencies(fit: &ModelFit, labels: &ClusterLabels) -> DMatrix<f64> {
    let c = labels.num_clusters();
    let k = fit.num_states();
    let mut out = DMatrix::zeros(c, k);
    for cl in 0..c {
        let members = labels.members(cl as i64);
        for &i in &members {
            let z = &fit.sequences[i].z;
            for &s in z {
                out[(cl, s)] += 1.0 / (z.len() as f64 * members.len() as f64);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::Measure;

    fn dm(rows: &[f64], n: usize) -> DistanceMatrix {
        DistanceMatrix {
            ids: (0..n).map(|i| format!("p{i}")).collect(),
            values: DMatrix::from_row_slice(n, n, rows),
            measure: Measure::Likelihood,
        }
    }

    #[test]
    fn three_point_hand_case() {
        let d = dm(&[0.0, 1.0, 5.0, 1.0, 0.0, 5.0, 5.0, 5.0, 0.0], 3);
        let t = agglomerate(&d, Linkage::Average).unwrap();
        assert_eq!(t.merges[0], Merge { a: 0, b: 1, height: 1.0, size: 2 });
        assert_eq!(t.merges[1], Merge { a: 2, b: 3, height: 5.0, size: 3 });
    }

    #[test]
    fn equal_distances_follow_tie_break() {
        let n = 4;
        let d = dm(&(0..16).map(|x| if x % 5 == 0 { 0.0 } else { 2.0 }).collect::<Vec<_>>(), n);
        let t = agglomerate(&d, Linkage::Single).unwrap();
        assert!(t.merges.iter().all(|m| m.height == 2.0));
        assert_eq!((t.merges[0].a, t.merges[0].b), (0, 1));
        assert_eq!((t.merges[1].a, t.merges[1].b), (2, 4));
        assert_eq!((t.merges[2].a, t.merges[2].b), (3, 5));
    }

    #[test]
    fn ultrametric_is_reproduced() {
        // ((0,1):1, (2,3):2):4
        let u = [0.0, 1.0, 4.0, 4.0, 1.0, 0.0, 4.0, 4.0, 4.0, 4.0, 0.0, 2.0, 4.0, 4.0, 2.0, 0.0];
        let d = dm(&u, 4);
        for linkage in [Linkage::Average, Linkage::Single, Linkage::Complete] {
            let t = agglomerate(&d, linkage).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    assert_eq!(t.cophenetic(i, j), u[i * 4 + j]);
                }
            }
        }
    }

    #[test]
    fn cut_extremes() {
        let n = 8;
        let v: Vec<f64> = (0..n * n).map(|x| if x / n == x % n { 0.0 } else { 1.0 + ((x / n) + (x % n)) as f64 }).collect();
        let t = agglomerate(&dm(&v, n), Linkage::Average).unwrap();
        let all = cut(&t, 1e9, DEFAULT_MIN_SIZE);
        assert!(all.labels.iter().all(|&l| l == 0));
        let none = cut(&t, 0.5, DEFAULT_MIN_SIZE);
        assert!(none.labels.iter().all(|&l| l == -1));
    }

    #[test]
    fn largest_gap_splits_planted_groups() {
        let n = 12;
        let v: Vec<f64> = (0..n * n)
            .map(|x| {
                let (i, j) = (x / n, x % n);
                if i == j {
                    0.0
                } else if (i < 6) == (j < 6) {
                    1.0 + 0.01 * ((i * j) % 5) as f64
                } else {
                    10.0
                }
            })
            .collect();
        let t = agglomerate(&dm(&v, n), Linkage::Average).unwrap();
        let labels = cut(&t, largest_gap_height(&t).unwrap(), DEFAULT_MIN_SIZE);
        assert_eq!(labels.labels, vec![0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1]);
    }

    fn table(cat: Vec<Option<String>>, num: Vec<Option<f64>>) -> ConstructTable {
        let n = cat.len();
        ConstructTable {
            ids: (0..n).map(|i| format!("p{i}")).collect(),
            numeric: vec![("score".into(), num)],
            categorical: vec![("group".into(), cat)],
        }
    }

    #[test]
    fn separating_binary_variable() {
        let n = 40;
        let labels =
            ClusterLabels { ids: (0..n).map(|i| format!("p{i}")).collect(), labels: (0..n).map(|i| (i / 20) as i64).collect(), min_size: 5 };
        let cat = (0..n).map(|i| Some(String::from(if i < 20 { "a" } else { "b" }))).collect();
        let num = (0..n).map(|_| Some(1.0)).collect();
        let tests = group_tests(&labels, &table(cat, num)).unwrap();
        assert_eq!(tests[0].variable, "group");
        let o = tests[0].outcome.as_ref().unwrap();
        assert!((o.statistic - 40.0).abs() < 1e-12 && o.p_value < 1e-9);
        assert!(tests[1].outcome.is_none());
    }

    #[test]
    fn needs_two_clusters() {
        let labels = ClusterLabels { ids: vec!["p0".into()], labels: vec![0], min_size: 5 };
        assert!(group_tests(&labels, &table(vec![None], vec![None])).is_err());
    }
}
