use marl_core::consensus_opt::{centralized_lsq, LocalObjective, SharedDesign};
use marl_core::features::{design_matrix_stats, FeatureMap, LinearQ};
use marl_core::model::{Batch, Transition};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn batch_of(cells: &[(usize, usize)]) -> Batch {
    let tuples: Vec<Transition> = cells.iter().map(|&(s, a)| Transition { s, a, b: None, next: 0 }).collect();
    let n = tuples.len();
    Batch {
        tuples,
        weights: vec![1.0 / n as f64; n],
    }
}

#[test]
fn one_hot_design_is_the_visit_histogram() {
    let cells = [(0, 0), (0, 1), (1, 0), (1, 1), (1, 1), (0, 0), (0, 0)];
    let stats = design_matrix_stats(&batch_of(&cells), &FeatureMap::one_hot(2, 2, 1).unwrap());
    assert!(stats.full_rank);
    assert!((stats.min_eigenvalue - 1.0 / 7.0).abs() < 1e-15);
    assert!((stats.max_eigenvalue - 3.0 / 7.0).abs() < 1e-15);
}

#[test]
fn unvisited_cell_drops_one_rank() {
    let stats = design_matrix_stats(&batch_of(&[(0, 1), (1, 0), (1, 1)]), &FeatureMap::one_hot(2, 2, 1).unwrap());
    assert_eq!(stats.rank, 3);
    assert!(!stats.full_rank);
}

#[test]
fn constant_feature_has_unit_eigenvalue() {
    let fm = FeatureMap::custom(2, 2, 1, DMatrix::from_element(4, 1, 1.0)).unwrap();
    let stats = design_matrix_stats(&batch_of(&[(0, 0), (1, 1), (0, 1)]), &fm);
    assert_eq!(stats.rank, 1);
    assert!((stats.min_eigenvalue - 1.0).abs() < 1e-15);
}

#[test]
fn radial_basis_is_bounded_and_deterministic() {
    let fm = FeatureMap::radial_basis(5, 2, 1, vec![0.0, 2.0, 4.0], 1.5).unwrap();
    assert_eq!(fm.dim(), 6);
    assert!(fm.phi_max() <= 1.0);
    assert_eq!(fm.evaluate(3, 1, 0).unwrap(), fm.evaluate(3, 1, 0).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn clipped_prediction_is_lipschitz(
        a in prop::collection::vec(-20.0f64..20.0, 6),
        b in prop::collection::vec(-20.0f64..20.0, 6),
        s in 0usize..3,
        act in 0usize..2,
    ) {
        let fm = FeatureMap::radial_basis(3, 2, 1, vec![0.0, 1.5, 3.0], 1.0).unwrap();
        let (ta, tb) = (DVector::from_vec(a), DVector::from_vec(b));
        let qa = LinearQ::new(ta.clone(), 5.0).predict(&fm, s, act, 0).unwrap();
        let qb = LinearQ::new(tb.clone(), 5.0).predict(&fm, s, act, 0).unwrap();
        prop_assert!(qa.abs() <= 5.0 && qb.abs() <= 5.0);
        prop_assert!((qa - qb).abs() <= fm.phi_max() * (ta - tb).lp_norm(1) + 1e-12);
    }

    #[test]
    fn one_hot_fit_reproduces_cell_means(
        samples in prop::collection::vec((0usize..3, 0usize..2, -3.0f64..3.0), 6..80),
    ) {
        // Make sure every cell is covered once.
        let mut rows: Vec<(usize, usize, f64)> = (0..6).map(|c| (c / 2, c % 2, 0.5 * c as f64)).collect();
        rows.extend(samples);
        let cells: Vec<(usize, usize)> = rows.iter().map(|r| (r.0, r.1)).collect();
        let targets: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let fm = FeatureMap::one_hot(3, 2, 1).unwrap();
        let design = SharedDesign::new(&batch_of(&cells), &fm).unwrap();
        let fit = centralized_lsq(&[LocalObjective::new(design, targets).unwrap()]).unwrap();
        prop_assert!(!fit.singular);
        for c in 0..6 {
            let ys: Vec<f64> = rows.iter().filter(|r| r.0 * 2 + r.1 == c).map(|r| r.2).collect();
            let mean = ys.iter().sum::<f64>() / ys.len() as f64;
            prop_assert!((fit.theta[c] - mean).abs() <= 1e-10, "cell {}: {} vs {}", c, fit.theta[c], mean);
        }
    }

    #[test]
    fn one_hot_eigenvalues_are_visit_frequencies(
        cells in prop::collection::vec((0usize..2, 0usize..3), 1..60),
    ) {
        let fm = FeatureMap::one_hot(2, 3, 1).unwrap();
        let stats = design_matrix_stats(&batch_of(&cells), &fm);
        let mut hist = [0usize; 6];
        for &(s, a) in &cells {
            hist[s * 3 + a] += 1;
        }
        let n = cells.len() as f64;
        let visited = hist.iter().filter(|&&h| h > 0).count();
        prop_assert_eq!(stats.rank, visited);
        let lo = *hist.iter().min().unwrap() as f64 / n;
        let hi = *hist.iter().max().unwrap() as f64 / n;
        prop_assert!((stats.min_eigenvalue - lo).abs() <= 1e-14);
        prop_assert!((stats.max_eigenvalue - hi).abs() <= 1e-14);
    }
}
