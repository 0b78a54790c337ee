mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{count_itemsets, pairwise_auroc, random_dag, random_scored, step_sum_auprc, DagOracle};
use katgnn::cooccur::{mine, TransactionSet};
use katgnn::metrics::{auprc, auroc};
use katgnn::ontology::{compute_depths, Ontology};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn lcs_matches_ancestor_set_oracle(seed in any::<u64>(), n in 2usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edges = random_dag(&mut rng, n);
        let onto = Ontology::from_edges(&edges).unwrap();
        let oracle = DagOracle::new(&edges);
        let depths = oracle.depths();
        let got = compute_depths(&onto);
        prop_assert_eq!(&got, &depths);
        let names = oracle.concepts();
        for a in &names {
            for b in &names {
                prop_assert_eq!(onto.lcs_depth(a, b).unwrap(), oracle.lcs_depth(a, b, &depths));
                prop_assert_eq!(onto.lcs_path(a, b).unwrap(), oracle.lcs_path(a, b));
            }
        }
    }

    #[test]
    fn lcs_is_symmetric_and_reflexive(seed in any::<u64>(), n in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let onto = Ontology::from_edges(&random_dag(&mut rng, n)).unwrap();
        for a in onto.concepts() {
            prop_assert_eq!(onto.lcs_path(a, a).unwrap(), 0);
            prop_assert_eq!(onto.lcs_depth(a, a).unwrap(), onto.depth(a).unwrap());
            for b in onto.concepts() {
                prop_assert_eq!(onto.lcs_path(a, b).unwrap(), onto.lcs_path(b, a).unwrap());
                prop_assert_eq!(onto.lcs_depth(a, b).unwrap(), onto.lcs_depth(b, a).unwrap());
            }
        }
    }

    #[test]
    fn mined_counts_match_exhaustive_counting(
        universe in 1usize..25,
        raw in prop::collection::vec(prop::collection::vec(0usize..25, 0..8), 1..120),
        min_count in 1u64..4,
    ) {
        let transactions: Vec<Vec<usize>> = raw
            .into_iter()
            .map(|t| t.into_iter().map(|i| i % universe).collect())
            .collect();
        let ts = TransactionSet::new(universe, transactions.clone()).unwrap();
        let table = mine(&ts, min_count).unwrap();
        let (singles, pairs) = count_itemsets(universe, &transactions);
        prop_assert_eq!(table.total, transactions.len() as u64);
        prop_assert_eq!(&table.singles, &singles);
        let kept: Vec<((usize, usize), u64)> = pairs.into_iter().filter(|&(_, c)| c >= min_count).collect();
        let got: Vec<((usize, usize), u64)> = table.pairs.iter().map(|(&k, s)| (k, s.count)).collect();
        prop_assert_eq!(got, kept);
        let n = transactions.len() as f64;
        for (&(a, b), s) in &table.pairs {
            let expect = (s.count as f64 / n) / ((singles[a] as f64 / n) * (singles[b] as f64 / n));
            prop_assert!((s.lift - expect).abs() <= 1e-12 * expect.max(1.0));
        }
    }

    #[test]
    fn ranking_metrics_match_oracles(seed in any::<u64>(), n in 2usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (scores, labels) = random_scored(&mut rng, n);
        prop_assert!((auroc(&scores, &labels).unwrap() - pairwise_auroc(&scores, &labels)).abs() <= 1e-9);
        prop_assert!((auprc(&scores, &labels).unwrap() - step_sum_auprc(&scores, &labels)).abs() <= 1e-9);
    }

    #[test]
    fn auprc_ignores_monotone_transforms(seed in any::<u64>(), n in 2usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (scores, labels) = random_scored(&mut rng, n);
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(auprc(&scores, &labels).unwrap(), auprc(&warped, &labels).unwrap());
        prop_assert_eq!(auroc(&scores, &labels).unwrap(), auroc(&warped, &labels).unwrap());
    }

    #[test]
    fn auroc_flips_under_negation_without_ties(seed in any::<u64>(), n in 2usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, labels) = random_scored(&mut rng, n);
        let scores: Vec<f64> = (0..n).map(|i| i as f64 * 0.37 % 1.0 + i as f64 * 1e-6).collect();
        let flipped: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
        let sum = auroc(&scores, &labels).unwrap() + auroc(&flipped, &labels).unwrap();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn metric_examples() {
    assert_eq!(auroc(&[0.9, 0.8, 0.3, 0.2], &[true, true, false, false]).unwrap(), 1.0);
    assert_eq!(auroc(&[0.9, 0.2, 0.8, 0.3], &[true, false, false, true]).unwrap(), 0.75);
    assert_eq!(auroc(&[0.4; 6], &[true, false, true, false, false, false]).unwrap(), 0.5);
    let ap = auprc(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap();
    assert!((ap - 0.5 * (1.0 + 2.0 / 3.0)).abs() < 1e-15);
    assert!((auprc(&[0.5; 5], &[true, false, false, true, false]).unwrap() - 0.4).abs() < 1e-15);
    assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
    assert!(auprc(&[0.1, 0.2], &[false, false]).is_err());
}
