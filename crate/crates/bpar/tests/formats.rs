use bpar::dataset::{load_dataset, save_dataset};
use bpar::json::{read_dendrogram, read_distances, write_dendrogram, write_distances};
use bpar::newick::{parse_newick, write_newick};
use bpar_core::cluster::{agglomerate, Linkage};
use bpar_core::data::{ChannelSchema, Dataset, MultiSeries};
use bpar_core::distance::{DistanceMatrix, Measure};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn distance_matrix(n: usize, upper: &[f64]) -> DistanceMatrix {
    let mut values = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            values[(i, j)] = upper[k];
            values[(j, i)] = upper[k];
            k += 1;
        }
    }
    DistanceMatrix { ids: (0..n).map(|i| format!("p {i}")).collect(), values, measure: Measure::Viterbi }
}

fn matrix_strategy() -> impl Strategy<Value = DistanceMatrix> {
    (2usize..12).prop_flat_map(|n| {
        proptest::collection::vec(0.0f64..100.0, n * (n - 1) / 2).prop_map(move |upper| distance_matrix(n, &upper))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn newick_round_trips_with_root_depth(dm in matrix_strategy(), linkage in 0usize..3) {
        let linkage = [Linkage::Single, Linkage::Complete, Linkage::Average][linkage];
        let dend = agglomerate(&dm, linkage).unwrap();
        let text = write_newick(&dend);
        let tree = parse_newick(&text).unwrap();
        prop_assert_eq!(tree.to_string(), text);
        let mut leaves = tree.leaves();
        leaves.sort();
        let mut ids: Vec<&str> = dm.ids.iter().map(String::as_str).collect();
        ids.sort();
        prop_assert_eq!(leaves, ids);
        let root = dend.merges.last().unwrap().height;
        prop_assert!((tree.depth() - root).abs() <= 1e-9 * root.max(1.0));
    }

    #[test]
    fn json_documents_round_trip(dm in matrix_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        write_distances(&path, &dm).unwrap();
        prop_assert_eq!(read_distances(&path).unwrap(), dm.clone());
        let dend = agglomerate(&dm, Linkage::Average).unwrap();
        write_dendrogram(&path, &dend).unwrap();
        prop_assert_eq!(read_dendrogram(&path).unwrap(), dend);
    }

    #[test]
    fn series_csv_is_bit_exact(values in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 2..40)) {
        let even = values.len() / 2 * 2;
        let schema = ChannelSchema::from_names(&["x", "y"]).unwrap();
        let s = MultiSeries::new("s", values[..even].to_vec(), 2).unwrap();
        let data = Dataset::new(schema.clone(), vec![s], None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &data).unwrap();
        let back = load_dataset(dir.path(), Some(&schema)).unwrap();
        let bits = |d: &Dataset| d.series[0].values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&data));
    }
}
