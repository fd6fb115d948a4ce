//! Property tests for the structural invariants: generator determinism,
//! modularity identities, penalty/count links, metric symmetries and file
//! round-trips.

use graphclust_core::autodiff::Tape;
use graphclust_core::evaluation::{ari, ari_pair_bruteforce, count_clusters, hard_assign, Partition};
use graphclust_core::graph::{
    hard_modularity, load_graph, save_graph, sbm_generate, Graph, SbmSpec,
};
use graphclust_core::losses::{
    lower_bound_penalty, min_size_penalty, soft_modularity, AssignmentMatrix,
};
use ndarray::Array2;
use proptest::prelude::*;

fn sbm_spec_strategy() -> impl Strategy<Value = SbmSpec> {
    (
        proptest::collection::vec(2usize..6, 2..4),
        0.5f64..1.0,
        0.0f64..0.3,
        0u64..1000,
    )
        .prop_map(|(cluster_sizes, p_in, p_out, seed)| SbmSpec {
            cluster_sizes,
            p_in,
            p_out,
            seed,
        })
}

/// Softmax of random logits: a valid assignment with unique row maxima
/// almost surely.
fn assignment_strategy(n: usize, c: usize) -> impl Strategy<Value = AssignmentMatrix> {
    proptest::collection::vec(-3.0f64..3.0, n * c).prop_map(move |flat| {
        let logits = Array2::from_shape_vec((n, c), flat).unwrap();
        let mut tape = Tape::new();
        let id = tape.constant(logits);
        let sm = tape.row_softmax(id);
        AssignmentMatrix::new(tape.value(sm).clone()).unwrap()
    })
}

fn partition_strategy(n: usize) -> impl Strategy<Value = Partition> {
    proptest::collection::vec(0usize..4, n).prop_map(Partition::new)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sbm_is_deterministic_under_a_seed(spec in sbm_spec_strategy()) {
        let a = sbm_generate(&spec).unwrap();
        let b = sbm_generate(&spec).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn extreme_probabilities_give_disjoint_cliques(
        sizes in proptest::collection::vec(2usize..6, 2..4),
        seed in 0u64..100,
    ) {
        let spec = SbmSpec { cluster_sizes: sizes.clone(), p_in: 1.0, p_out: 0.0, seed };
        let g = sbm_generate(&spec).unwrap();
        let labels = g.labels().unwrap();
        prop_assert_eq!(
            g.edge_count(),
            sizes.iter().map(|&s| s * (s - 1) / 2).sum::<usize>()
        );
        for &(i, j) in g.edges() {
            prop_assert_eq!(labels[i], labels[j]);
        }
    }

    #[test]
    fn all_in_one_partition_has_zero_modularity(spec in sbm_spec_strategy()) {
        let g = sbm_generate(&spec).unwrap();
        prop_assume!(g.edge_count() >= 1);
        let labels = vec![0usize; g.node_count()];
        prop_assert_eq!(hard_modularity(&g, &labels).unwrap(), 0.0);
    }

    #[test]
    fn modularity_is_invariant_under_relabeling(
        spec in sbm_spec_strategy(),
        offset in 1usize..7,
    ) {
        let g = sbm_generate(&spec).unwrap();
        prop_assume!(g.edge_count() >= 1);
        let labels = g.labels().unwrap().to_vec();
        let relabeled: Vec<usize> = labels.iter().map(|&l| l * 3 + offset).collect();
        let q1 = hard_modularity(&g, &labels).unwrap();
        let q2 = hard_modularity(&g, &relabeled).unwrap();
        prop_assert!((q1 - q2).abs() < 1e-14);
    }

    #[test]
    fn density_and_degree_stay_in_range(spec in sbm_spec_strategy()) {
        let g = sbm_generate(&spec).unwrap();
        let stats = graphclust_core::graph::graph_stats(&g).unwrap();
        prop_assert!((0.0..=1.0).contains(&stats.density));
        prop_assert!(stats.average_degree >= 0.0);
        prop_assert!(stats.average_degree <= (g.node_count() - 1) as f64);
    }

    #[test]
    fn graph_files_round_trip(spec in sbm_spec_strategy()) {
        let g = sbm_generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        save_graph(&g, &path).unwrap();
        prop_assert_eq!(load_graph(&path).unwrap(), g);
    }

    #[test]
    fn softmax_rows_sum_to_one(
        flat in proptest::collection::vec(-30.0f64..30.0, 24),
    ) {
        let logits = Array2::from_shape_vec((6, 4), flat).unwrap();
        let mut tape = Tape::new();
        let id = tape.constant(logits);
        let sm = tape.row_softmax(id);
        for row in tape.value(sm).rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn penalty_range_and_hard_count_link(
        s in assignment_strategy(8, 5),
        l in 1usize..=5,
    ) {
        let p = lower_bound_penalty(&s, l).unwrap();
        prop_assert!(p >= 0.0 && p <= (l as f64 - 1.0) + 1e-12);
        let count = count_clusters(&hard_assign(&s));
        if count >= l {
            prop_assert!(p.abs() < 1e-12, "count={} l={} p={}", count, l, p);
        } else {
            prop_assert!(p > 1e-9, "count={} l={} p={}", count, l, p);
        }
    }

    #[test]
    fn min_size_one_reduces_bitwise(
        s in assignment_strategy(7, 4),
        l in 1usize..=4,
    ) {
        let a = min_size_penalty(&s, l, 1).unwrap();
        let b = lower_bound_penalty(&s, l).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn one_hot_soft_modularity_matches_hard(
        spec in sbm_spec_strategy(),
        extra_cols in 0usize..3,
    ) {
        let g = sbm_generate(&spec).unwrap();
        prop_assume!(g.edge_count() >= 1);
        let labels = g.labels().unwrap().to_vec();
        let c = labels.iter().max().unwrap() + 1 + extra_cols;
        let s = AssignmentMatrix::one_hot(&labels, c).unwrap();
        let soft = soft_modularity(&g, &s).unwrap();
        let hard = hard_modularity(&g, &labels).unwrap();
        prop_assert!((soft - hard).abs() < 1e-10);
    }

    #[test]
    fn ari_matches_pair_bruteforce(
        a in partition_strategy(9),
        b in partition_strategy(9),
    ) {
        let fast = ari(&a, &b).unwrap();
        let brute = ari_pair_bruteforce(&a, &b);
        prop_assert!((fast - brute).abs() < 1e-12);
    }

    #[test]
    fn ari_symmetric_and_relabel_invariant(
        a in partition_strategy(8),
        b in partition_strategy(8),
    ) {
        prop_assert_eq!(ari(&a, &b).unwrap(), ari(&b, &a).unwrap());
        let relabeled = Partition::new(a.labels().iter().map(|&l| 9 - l).collect());
        let x = ari(&a, &b).unwrap();
        let y = ari(&relabeled, &b).unwrap();
        prop_assert!((x - y).abs() < 1e-14);
    }

    #[test]
    fn hard_count_never_exceeds_columns(s in assignment_strategy(10, 4)) {
        prop_assert!(count_clusters(&hard_assign(&s)) <= 4);
    }
}

#[test]
fn loaded_graph_rejects_weighted_input() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("weighted.json");
    std::fs::write(
        &path,
        r#"{"n": 3, "edges": [[0,1],[1,2]], "edge_weights": [0.5, 2.0]}"#,
    )
    .unwrap();
    let err = load_graph(&path).unwrap_err();
    assert!(err.to_string().contains("edge_weights"), "{err}");
}

#[test]
fn two_cliques_match_hand_modularity() {
    let g = Graph::new(4, vec![(0, 1), (2, 3)], None, None).unwrap();
    assert_eq!(hard_modularity(&g, &[0, 0, 1, 1]).unwrap(), 0.5);
    assert_eq!(hard_modularity(&g, &[0, 1, 0, 1]).unwrap(), -0.5);
}
