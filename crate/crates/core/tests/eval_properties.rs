use nalgebra::DMatrix;
use proptest::prelude::*;

use mfamml::eval::{evaluate, rank_all, DistanceMatrix, EvalReport, Rankings};
use mfamml::Execution;

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i:02}")).collect()
}

/// Square distance matrix over `n` items and labels giving every class at
/// least two members.
fn instance() -> impl Strategy<Value = (DMatrix<f64>, Vec<usize>)> {
    (4usize..16).prop_flat_map(|n| {
        (
            proptest::collection::vec(0.0f64..10.0, n * n),
            proptest::collection::vec(0usize..3, n),
        )
            .prop_map(move |(d, mut labels)| {
                // force classes 0..3 to appear at least twice
                for (i, l) in labels.iter_mut().take(6.min(n)).enumerate() {
                    *l = i / 2;
                }
                if n < 6 {
                    labels.iter_mut().for_each(|l| *l = 0);
                }
                (DMatrix::from_vec(n, n, d), labels)
            })
    })
}

fn scores(r: &EvalReport) -> [f64; 5] {
    [r.nn, r.ft, r.st, r.e_measure, r.dcg]
}

fn run(dist: &DMatrix<f64>, labels: &[usize], exec: Execution) -> (Rankings, EvalReport) {
    let n = labels.len();
    let dm = DistanceMatrix::new(dist.clone(), ids(n), ids(n)).unwrap();
    let rankings = rank_all(&dm, exec);
    let report = evaluate(&rankings, labels, labels, 11, exec).unwrap();
    (rankings, report)
}

proptest! {
    #[test]
    fn increasing_transform_keeps_scores((dist, labels) in instance()) {
        let (ra, a) = run(&dist, &labels, Execution::Sequential);
        let (rb, b) = run(&dist.map(|x| (3.0 * x).exp() + 1.0), &labels, Execution::Sequential);
        prop_assert_eq!(ra, rb);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn parallel_matches_sequential((dist, labels) in instance()) {
        prop_assert_eq!(run(&dist, &labels, Execution::Sequential), run(&dist, &labels, Execution::Parallel));
    }

    #[test]
    fn promoting_a_relevant_item_never_hurts((dist, labels) in instance(), q_pick in 0usize..100) {
        let (rankings, before) = run(&dist, &labels, Execution::Sequential);
        let q = q_pick % labels.len();
        let rel: Vec<bool> = rankings[q].iter().map(|&g| labels[g] == labels[q]).collect();
        // first irrelevant item that precedes some relevant one
        if let Some(i) = (0..rel.len()).find(|&i| !rel[i] && rel[i + 1..].iter().any(|&x| x)) {
            let j = i + 1 + rel[i + 1..].iter().position(|&x| x).unwrap();
            let mut swapped = rankings.clone();
            swapped[q].swap(i, j);
            let after = evaluate(&swapped, &labels, &labels, 11, Execution::Sequential).unwrap();
            let (b, a) = (scores(&before), scores(&after));
            for k in [0, 1, 2, 4] {
                prop_assert!(a[k] >= b[k], "measure {} dropped: {} -> {}", k, b[k], a[k]);
            }
        }
    }
}
