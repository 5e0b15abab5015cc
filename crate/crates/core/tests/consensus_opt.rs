use std::sync::Arc;

use marl_core::comms::{ring_of_graphs, ConsensusSchedule, GraphSchedule};
use marl_core::consensus_opt::{
    centralized_lsq, diging_run, local_gradient, measure_disagreement, rms, LocalObjective, SharedDesign,
};
use marl_core::features::{FeatureMap, QVector};
use marl_core::model::{Batch, Transition};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn batch_of(cells: &[(usize, usize)]) -> Batch {
    let tuples: Vec<Transition> = cells.iter().map(|&(s, a)| Transition { s, a, b: None, next: 0 }).collect();
    let n = tuples.len();
    Batch {
        tuples,
        weights: vec![1.0 / n as f64; n],
    }
}

/// Random rows covering every cell of an `n_s x n_a` one-hot design.
fn covering_design(n_s: usize, n_a: usize, rows: usize, seed: u64) -> Arc<SharedDesign> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells: Vec<(usize, usize)> = (0..rows)
        .map(|t| {
            if t < n_s * n_a {
                (t / n_a, t % n_a)
            } else {
                (rng.random_range(0..n_s), rng.random_range(0..n_a))
            }
        })
        .collect();
    SharedDesign::new(&batch_of(&cells), &FeatureMap::one_hot(n_s, n_a, 1).unwrap()).unwrap()
}

fn random_objectives(design: &Arc<SharedDesign>, n: usize, seed: u64) -> Vec<LocalObjective> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let y = (0..design.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
            LocalObjective::new(design.clone(), y).unwrap()
        })
        .collect()
}

#[test]
fn gradient_examples() {
    // d = 1, phi = 1, targets with mean m: gradient at zero is -2m.
    let fm = FeatureMap::custom(1, 1, 1, DMatrix::from_element(1, 1, 1.0)).unwrap();
    let design = SharedDesign::new(&batch_of(&[(0, 0); 4]), &fm).unwrap();
    let obj = LocalObjective::new(design.clone(), vec![1.0, 2.0, 3.0, 6.0]).unwrap();
    let g = local_gradient(&DVector::zeros(1), &obj).unwrap();
    assert!((g[0] + 6.0).abs() < 1e-14);
    let zero = LocalObjective::new(design, vec![0.0; 4]).unwrap();
    assert_eq!(local_gradient(&DVector::zeros(1), &zero).unwrap()[0], 0.0);

    let design = covering_design(3, 2, 40, 1);
    let objs = random_objectives(&design, 1, 2);
    let star = centralized_lsq(&objs).unwrap();
    assert!(local_gradient(&star.theta, &objs[0]).unwrap().amax() < 1e-10);
}

#[test]
fn single_agent_fit_is_ordinary_least_squares() {
    let fm = FeatureMap::radial_basis(4, 2, 1, vec![0.0, 3.0], 1.0).unwrap();
    let cells: Vec<(usize, usize)> = (0..30).map(|t| (t % 4, (t / 4) % 2)).collect();
    let design = SharedDesign::new(&batch_of(&cells), &fm).unwrap();
    let y: Vec<f64> = (0..30).map(|t| (t as f64 * 0.7).sin()).collect();
    let fit = centralized_lsq(&[LocalObjective::new(design, y.clone()).unwrap()]).unwrap();
    let x = DMatrix::from_fn(30, fm.dim(), |t, k| fm.table()[(cells[t].0 * 2 + cells[t].1, k)]);
    let ols = x.clone().svd(true, true).solve(&DVector::from_vec(y), 1e-14).unwrap();
    assert!((fit.theta - ols).amax() < 1e-10);
    let zero = LocalObjective::new(covering_design(2, 2, 10, 0), vec![0.0; 10]).unwrap();
    assert_eq!(centralized_lsq(&[zero]).unwrap().theta.amax(), 0.0);
}

#[test]
fn no_rounds_leaves_zero_parameters() {
    let design = covering_design(2, 2, 20, 3);
    let objs = random_objectives(&design, 3, 4);
    let sched = ConsensusSchedule::metropolis_periodic(GraphSchedule::complete(3).unwrap()).unwrap();
    let (qv, report) = diging_run(&objs, &sched, 0.1, 0).unwrap();
    assert!(qv.thetas.iter().all(|t| t.amax() == 0.0));
    assert_eq!(report.residual.len(), 1);
}

#[test]
fn identical_objectives_on_complete_graph_match_gradient_descent() {
    let design = covering_design(3, 2, 30, 5);
    let base = random_objectives(&design, 1, 6).remove(0);
    let objs = vec![base.clone(); 4];
    let sched = ConsensusSchedule::metropolis_periodic(GraphSchedule::complete(4).unwrap()).unwrap();
    let alpha = design.default_stepsize();
    let rounds = 50;
    let (qv, _) = diging_run(&objs, &sched, alpha, rounds).unwrap();
    let mut theta = DVector::zeros(design.dim());
    for _ in 0..rounds {
        theta -= local_gradient(&theta, &base).unwrap() * alpha;
    }
    for t in &qv.thetas {
        assert_eq!(t, &qv.thetas[0]);
        assert!((t - &theta).amax() < 1e-12);
    }
}

#[test]
fn disagreement_formula() {
    assert!((rms(&[0.3, 0.4]) - 0.125f64.sqrt()).abs() < 1e-15);
    let design = covering_design(2, 2, 8, 0);
    let star = DVector::from_vec(vec![0.5, -0.5, 1.0, 0.0]);
    let gap = measure_disagreement(&QVector::consensual(&star, 3), &star, &design, 10.0).unwrap();
    assert_eq!(gap.rms, 0.0);
    let mut off = QVector::consensual(&star, 2);
    off.thetas[0][1] += 0.3;
    off.thetas[1][2] -= 0.4;
    let gap = measure_disagreement(&off, &star, &design, 10.0).unwrap();
    assert!((gap.per_agent[0] - 0.3).abs() < 1e-15 && (gap.per_agent[1] - 0.4).abs() < 1e-15);
    assert!((gap.rms - 0.125f64.sqrt()).abs() < 1e-15);
}

#[test]
fn disagreement_shrinks_as_rounds_double() {
    let design = covering_design(2, 3, 60, 8);
    let objs = random_objectives(&design, 4, 9);
    let sched = ConsensusSchedule::metropolis_periodic(ring_of_graphs(4, 1, 2).unwrap()).unwrap();
    let alpha = 0.1 * design.default_stepsize();
    let star = centralized_lsq(&objs).unwrap().theta;
    let mut last = f64::INFINITY;
    for rounds in [100, 200, 400, 800] {
        let (qv, _) = diging_run(&objs, &sched, alpha, rounds).unwrap();
        let eps = measure_disagreement(&qv, &star, &design, 100.0).unwrap().rms;
        assert!(eps < last, "rounds {rounds}: {eps} >= {last}");
        last = eps;
    }
}

#[test]
fn divergent_stepsize_is_reported() {
    let design = covering_design(2, 2, 12, 1);
    let objs = random_objectives(&design, 3, 2);
    let sched = ConsensusSchedule::metropolis_periodic(ring_of_graphs(3, 1, 0).unwrap()).unwrap();
    let err = diging_run(&objs, &sched, 50.0 * design.default_stepsize(), 2000).unwrap_err();
    assert!(matches!(err, marl_core::MarlError::Stepsize { .. }), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn trackers_conserve_the_average_gradient(
        seed in any::<u64>(),
        n in 2usize..6,
        per_round in 1usize..3,
        scale in 0.02f64..0.2,
    ) {
        let design = covering_design(2, 3, 40, seed);
        let objs = random_objectives(&design, n, seed ^ 0xabc);
        let sched = ConsensusSchedule::metropolis_periodic(ring_of_graphs(n, per_round, seed).unwrap()).unwrap();
        let (_, report) = diging_run(&objs, &sched, scale * design.default_stepsize(), 300).unwrap();
        let worst = report.tracker_gap.iter().cloned().fold(0.0, f64::max);
        prop_assert!(worst <= 1e-10, "tracker gap {}", worst);
    }

    #[test]
    fn residual_decays_for_small_steps(seed in any::<u64>()) {
        let design = covering_design(2, 2, 30, seed);
        let objs = random_objectives(&design, 3, seed.wrapping_add(1));
        let sched = ConsensusSchedule::metropolis_periodic(ring_of_graphs(3, 1, seed).unwrap()).unwrap();
        let (_, report) = diging_run(&objs, &sched, 0.1 * design.default_stepsize(), 1500).unwrap();
        prop_assert!(report.rate < 1.0, "rate {}", report.rate);
        prop_assert!(report.residual[1500] < 1e-3 * report.residual[0]);
    }
}
