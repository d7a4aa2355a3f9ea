use bpar_core::cluster::{agglomerate, cut, Linkage};
use bpar_core::data::{zscore_normalize, ChannelSchema, Dataset, MultiSeries};
use bpar_core::distance::{distance_matrix, sequence_score, viterbi_directed, viterbi_distance, DistanceMatrix, DistanceOptions, Measure};
use bpar_core::embedding::{normalized_laplacian, sorted_eigenpairs, stationary_of_matrix};
use bpar_core::model::{fit, joint_log_likelihood, Hyperparams, ModelFit, SeriesHMM, StateSequence};
use bpar_core::synth::{generate, score_recovery, Lengths, SynthSpec};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn stochastic(m: usize, raw: &[f64]) -> DMatrix<f64> {
    let mut p = DMatrix::from_fn(m, m, |i, j| raw[i * m + j] + 1e-3);
    for i in 0..m {
        let s: f64 = p.row(i).sum();
        p.row_mut(i).scale_mut(1.0 / s);
    }
    p
}

prop_compose! {
    fn arb_stochastic(max: usize)(m in 1..=max)(raw in prop::collection::vec(0.0f64..1.0, m * m), m in Just(m)) -> DMatrix<f64> {
        stochastic(m, &raw)
    }
}

prop_compose! {
    /// An HMM over a random ascending subset of states `0..6`.
    fn arb_hmm(id: &'static str)(mask in 1u32..64)(
        raw in prop::collection::vec(0.0f64..1.0, (mask.count_ones() * mask.count_ones()) as usize),
        mask in Just(mask),
    ) -> SeriesHMM {
        let active: Vec<usize> = (0..6).filter(|k| mask & (1 << k) != 0).collect();
        let m = active.len();
        SeriesHMM::new(id, active, stochastic(m, &raw)).unwrap()
    }
}

prop_compose! {
    fn arb_distances(max: usize)(n in 2..=max)(
        raw in prop::collection::vec(0.01f64..10.0, n * (n - 1) / 2),
        n in Just(n),
    ) -> DistanceMatrix {
        let mut v = DMatrix::zeros(n, n);
        let mut it = raw.into_iter();
        for i in 0..n {
            for j in i + 1..n {
                let d = it.next().unwrap();
                v[(i, j)] = d;
                v[(j, i)] = d;
            }
        }
        DistanceMatrix { ids: (0..n).map(|i| format!("s{i}")).collect(), values: v, measure: Measure::Viterbi }
    }
}

fn small_problem(seed: u64) -> (Dataset, bpar_core::synth::GroundTruth) {
    let mut spec = SynthSpec::benchmark(seed);
    spec.num_series = 4;
    spec.lengths = Lengths::Fixed(60);
    spec.features = None;
    spec.constructs.clear();
    generate(&spec).unwrap()
}

fn small_fit(seed: u64, sweeps: usize) -> (Dataset, ModelFit) {
    let (data, _) = small_problem(seed);
    let (data, _) = data.normalized();
    let mut hyper = Hyperparams::new(data.schema.len());
    hyper.mcmc.sweeps = sweeps;
    hyper.mcmc.burn_in = 0;
    hyper.mcmc.seed = seed;
    let f = fit(&data, &hyper).unwrap();
    (data, f)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn sweeps_preserve_model_invariants(seed in 0u64..1000, sweeps in 1usize..6) {
        let (_, f) = small_fit(seed, sweeps);
        f.check_invariants().unwrap();
        let n = f.num_series();
        for i in 0..n {
            prop_assert!(!f.features.row_active(i).is_empty());
            let t = f.hmms[i].trans();
            for r in 0..t.nrows() {
                prop_assert!((t.row(r).sum() - 1.0).abs() <= 1e-12);
            }
            for z in &f.sequences[i].z {
                prop_assert!(f.hmms[i].active().contains(z));
            }
        }
        for s in &f.states {
            prop_assert!(s.sigma().clone().cholesky().is_some());
        }
        prop_assert!(f.diagnostics.log_likelihood.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn relabeling_keeps_joint_likelihood(seed in 0u64..1000, rot in 0usize..8) {
        let (data, f) = small_fit(seed, 3);
        let k = f.num_states();
        let perm: Vec<usize> = (0..k).map(|s| (s + rot) % k).collect();
        let g = f.relabeled(&perm).unwrap();
        let a = joint_log_likelihood(&f, &data).unwrap();
        let b = joint_log_likelihood(&g, &data).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn generated_truth_is_consistent(seed in 0u64..1000) {
        let (_, truth) = small_problem(seed);
        for (i, hmm) in truth.hmms.iter().enumerate() {
            let t = hmm.trans();
            for r in 0..t.nrows() {
                prop_assert!((t.row(r).sum() - 1.0).abs() <= 1e-12);
            }
            for z in &truth.sequences[i].z {
                prop_assert!(truth.features.get(i, *z));
            }
        }
        let fitted = truth.to_fit();
        let k = fitted.num_states();
        let perm: Vec<usize> = (0..k).rev().collect();
        let rec = score_recovery(&fitted.relabeled(&perm).unwrap(), &truth).unwrap();
        prop_assert!((rec.accuracy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_is_invariant(p in arb_stochastic(10)) {
        let phi = stationary_of_matrix(&p);
        prop_assert!((phi.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        prop_assert!(phi.iter().all(|v| *v >= 0.0));
        let strongly_connected = p.iter().all(|v| *v > 0.0);
        if strongly_connected {
            let row = DMatrix::from_row_slice(1, phi.len(), &phi);
            let moved = &row * &p;
            for j in 0..phi.len() {
                prop_assert!((moved[j] - phi[j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn stationary_ignores_renormalization_noise(p in arb_stochastic(8), noise in prop::collection::vec(-1.0f64..1.0, 64)) {
        let m = p.nrows();
        let mut q = DMatrix::from_fn(m, m, |i, j| p[(i, j)] * (1.0 + 1e-13 * noise[(i * m + j) % 64]));
        for i in 0..m {
            let s: f64 = q.row(i).sum();
            q.row_mut(i).scale_mut(1.0 / s);
        }
        let a = stationary_of_matrix(&p);
        let b = stationary_of_matrix(&q);
        for j in 0..m {
            prop_assert!((a[j] - b[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn viterbi_self_distance_is_zero(h in arb_hmm("a")) {
        prop_assert_eq!(viterbi_distance(&h, &h, 1e-6), 0.0);
    }

    #[test]
    fn directed_viterbi_is_nonpositive(a in arb_hmm("a"), b in arb_hmm("b")) {
        prop_assert!(viterbi_directed(&a, &b, 1e-6) <= 1e-12);
    }

    #[test]
    fn sequence_score_is_relabeling_invariant(h in arb_hmm("a"), picks in prop::collection::vec(0usize..6, 2..30), shift in 1usize..6) {
        let z: Vec<usize> = picks.iter().map(|p| h.active()[p % h.len()]).collect();
        let seq = StateSequence { id: "a".into(), z: z.clone() };
        let base = sequence_score(&seq, &h, 4, 1e-6);
        let relabel = |s: usize| (s + shift) % 6;
        let mut order: Vec<usize> = (0..h.len()).collect();
        order.sort_by_key(|&i| relabel(h.active()[i]));
        let active: Vec<usize> = order.iter().map(|&i| relabel(h.active()[i])).collect();
        let trans = DMatrix::from_fn(h.len(), h.len(), |r, c| h.trans()[(order[r], order[c])]);
        let moved = SeriesHMM::new("a", active, trans).unwrap();
        let seq2 = StateSequence { id: "a".into(), z: z.iter().map(|s| relabel(*s)).collect() };
        let other = sequence_score(&seq2, &moved, 4, 1e-6);
        prop_assert!((base - other).abs() <= 1e-12 * base.abs().max(1.0));
    }

    #[test]
    fn distance_matrices_are_valid(seed in 0u64..1000) {
        let (_, truth) = small_problem(seed);
        let f = truth.to_fit();
        for measure in [Measure::Likelihood, Measure::Viterbi] {
            let dm = distance_matrix(&f, measure, &DistanceOptions::default()).unwrap();
            let n = dm.len();
            for i in 0..n {
                prop_assert_eq!(dm.values[(i, i)], 0.0);
                for j in 0..n {
                    let v = dm.values[(i, j)];
                    prop_assert!(v.is_finite() && v >= 0.0);
                    prop_assert_eq!(v, dm.values[(j, i)]);
                }
            }
        }
    }

    #[test]
    fn laplacian_spectrum_is_bounded(dm in arb_distances(12)) {
        let w = DMatrix::from_fn(dm.len(), dm.len(), |i, j| if i == j { 0.0 } else { (-dm.values[(i, j)]).exp() });
        let l = normalized_laplacian(&w, &dm.ids).unwrap();
        let (vals, vecs) = sorted_eigenpairs(&l, false);
        for (k, mu) in vals.iter().enumerate() {
            prop_assert!(*mu >= -1e-8 && *mu <= 2.0 + 1e-8);
            let v = vecs.column(k);
            prop_assert!((&l * v - v * *mu).norm() < 1e-8);
        }
        let again = sorted_eigenpairs(&l, false);
        prop_assert_eq!(&again.0, &vals);
        prop_assert_eq!(&again.1, &vecs);
    }

    #[test]
    fn dendrogram_heights_never_decrease(dm in arb_distances(15)) {
        for linkage in [Linkage::Single, Linkage::Complete, Linkage::Average] {
            let d = agglomerate(&dm, linkage).unwrap();
            prop_assert_eq!(d.merges.len(), dm.len() - 1);
            for w in d.merges.windows(2) {
                prop_assert!(w[0].height <= w[1].height);
            }
        }
    }

    #[test]
    fn raising_the_cut_never_splits(dm in arb_distances(15), a in 0.0f64..10.0, b in 0.0f64..10.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let d = agglomerate(&dm, Linkage::Average).unwrap();
        let low = cut(&d, lo, 0);
        let high = cut(&d, hi, 0);
        let n = dm.len();
        for i in 0..n {
            for j in 0..n {
                if low.labels[i] == low.labels[j] {
                    prop_assert_eq!(high.labels[i], high.labels[j]);
                }
            }
        }
    }

    #[test]
    fn series_order_does_not_change_clusters(dm in arb_distances(10), rot in 1usize..10) {
        let n = dm.len();
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let moved = DistanceMatrix {
            ids: perm.iter().map(|&p| dm.ids[p].clone()).collect(),
            values: DMatrix::from_fn(n, n, |i, j| dm.values[(perm[i], perm[j])]),
            measure: dm.measure,
        };
        let h = 2.5;
        let a = cut(&agglomerate(&dm, Linkage::Complete).unwrap(), h, 0);
        let b = cut(&agglomerate(&moved, Linkage::Complete).unwrap(), h, 0);
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(a.labels[perm[i]] == a.labels[perm[j]], b.labels[i] == b.labels[j]);
            }
        }
    }

    #[test]
    fn zscore_channels_are_standardized(rows in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 3), 3..40)) {
        let s = MultiSeries::from_rows("a", &rows).unwrap();
        let (z, constant) = zscore_normalize(&s);
        for j in 0..3 {
            if constant.contains(&j) {
                continue;
            }
            let col: Vec<f64> = z.channel(j).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64).sqrt();
            prop_assert!(m.abs() < 1e-10);
            prop_assert!((sd - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn normalization_commutes_with_series_order(seed in 0u64..1000) {
        let (data, _) = small_problem(seed);
        let mut rev = data.series.clone();
        rev.reverse();
        let schema = ChannelSchema::from_names(data.schema.names()).unwrap();
        let flipped = Dataset::new(schema, rev, None).unwrap();
        let (a, _) = data.normalized();
        let (b, _) = flipped.normalized();
        let mut bs = b.series.clone();
        bs.reverse();
        prop_assert_eq!(a.series, bs);
    }
}
