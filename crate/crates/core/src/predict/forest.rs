//! Bootstrap-aggregated CART regression trees with random feature subsets.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;

use crate::rng;

enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

struct Builder<'a, R: Rng> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    mtry: usize,
    max_depth: Option<usize>,
    rng: R,
    nodes: Vec<Node>,
}

impl<R: Rng> Builder<'_, R> {
    fn grow(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let n = idx.len();
        let mean = idx.iter().map(|&i| self.y[i]).sum::<f64>() / n as f64;
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf(mean));
        if n < 2 || self.max_depth.is_some_and(|m| depth >= m) {
            return at;
        }
        let d = self.x.ncols();
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let total_sq: f64 = idx.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let parent_sse = total_sq - total * total / n as f64;
        if parent_sse <= 1e-12 * (1.0 + total_sq) {
            return at;
        }
        // (sse, feature, threshold)
        let mut best: Option<(f64, usize, f64)> = None;
        for feature in sample(&mut self.rng, d, self.mtry.min(d)).into_iter() {
            idx.sort_by(|&a, &b| self.x[(a, feature)].total_cmp(&self.x[(b, feature)]));
            let (mut ls, mut lsq) = (0.0, 0.0);
            for k in 0..n - 1 {
                let v = self.y[idx[k]];
                ls += v;
                lsq += v * v;
                let (lo, hi) = (self.x[(idx[k], feature)], self.x[(idx[k + 1], feature)]);
                if lo == hi {
                    continue;
                }
                let nl = (k + 1) as f64;
                let nr = (n - k - 1) as f64;
                let rs = total - ls;
                let rsq = total_sq - lsq;
                let sse = (lsq - ls * ls / nl) + (rsq - rs * rs / nr);
                if best.is_none_or(|(b, _, _)| sse < b) {
                    best = Some((sse, feature, 0.5 * (lo + hi)));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return at;
        };
        let mut split = 0;
        for k in 0..n {
            if self.x[(idx[k], feature)] <= threshold {
                idx.swap(k, split);
                split += 1;
            }
        }
        let (l, r) = idx.split_at_mut(split);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[at] = Node::Split { feature, threshold, left, right };
        at
    }
}

pub(crate) struct Forest {
    trees: Vec<Tree>,
}

/// `trees` trees on bootstrap resamples, `⌈d/3⌉` candidate features per
/// split. Tree `t` draws from stream `(seed, t)`.
pub(crate) fn fit_forest(x: &DMatrix<f64>, y: &[f64], trees: usize, max_depth: Option<usize>, seed: u64) -> Forest {
    let n = x.nrows();
    let mtry = x.ncols().div_ceil(3).max(1);
    let trees = (0..trees)
        .map(|t| {
            let mut r = rng::derived(seed, &[t as u64]);
            let mut idx: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
            let mut b = Builder { x, y, mtry, max_depth, rng: r, nodes: Vec::new() };
            b.grow(&mut idx, 0);
            Tree { nodes: b.nodes }
        })
        .collect();
    Forest { trees }
}

impl Forest {
    pub(crate) fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let mut out = vec![0.0; x.nrows()];
        let mut row = vec![0.0; x.ncols()];
        for (i, o) in out.iter_mut().enumerate() {
            for (j, r) in row.iter_mut().enumerate() {
                *r = x[(i, j)];
            }
            *o = self.trees.iter().map(|t| t.predict(&row)).sum::<f64>() / self.trees.len() as f64;
        }
        out
    }
}
