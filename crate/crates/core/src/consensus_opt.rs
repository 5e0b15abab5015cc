//! Distributed least squares by gradient tracking (DIGing) over a
//! time-varying consensus schedule, and the exact centralized minimizer it
//! is measured against.
//!
//! Every agent holds `g_i(theta) = sum_t w_t (Y_i,t - theta^T phi_t)^2` over
//! the same regression rows (weights `w_t = 1/T` for a sampled trajectory).
//! Because the rows are shared, each objective is kept in moment form
//! `theta^T M theta - 2 b_i^T theta + c_i` with `M = sum_t w_t phi_t phi_t^T`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::comms::ConsensusSchedule;
use crate::error::{MarlError, Result};
use crate::features::{cell_weights, weighted_gram, FeatureMap, QVector};
use crate::model::Batch;

/// Residual growth factor that aborts a run.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Regression rows shared by every agent.
#[derive(Debug, Clone)]
pub struct SharedDesign {
    /// Feature row of each sample.
    cells: Vec<usize>,
    weights: Vec<f64>,
    /// Distinct cells with positive weight, and their feature rows.
    visited: Vec<usize>,
    visited_phi: DMatrix<f64>,
    gram: DMatrix<f64>,
    features: FeatureMap,
}

impl SharedDesign {
    pub fn new(batch: &Batch, features: &FeatureMap) -> Result<Arc<Self>> {
        if batch.is_empty() {
            return Err(MarlError::Argument("regression batch is empty".into()));
        }
        for tr in &batch.tuples {
            if tr.s >= features.n_states()
                || tr.a >= features.n_actions()
                || tr.opponent_action() >= features.n_opponent_actions()
            {
                return Err(MarlError::Argument(format!("tuple {tr:?} outside the feature domain")));
            }
        }
        let per_cell = cell_weights(batch, features);
        let visited: Vec<usize> = (0..per_cell.len()).filter(|&c| per_cell[c] > 0.0).collect();
        let d = features.dim();
        let visited_phi = DMatrix::from_fn(visited.len(), d, |r, k| features.table()[(visited[r], k)]);
        Ok(Arc::new(Self {
            cells: batch
                .tuples
                .iter()
                .map(|tr| features.cell(tr.s, tr.a, tr.opponent_action()))
                .collect(),
            weights: batch.weights.clone(),
            visited,
            visited_phi,
            gram: weighted_gram(&per_cell, features),
            features: features.clone(),
        }))
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn visited_cells(&self) -> &[usize] {
        &self.visited
    }

    pub fn sample_cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `0.5 / lambda_max(2M)`, the inverse smoothness of the shared quadratic
    /// scaled by one half.
    pub fn default_stepsize(&self) -> f64 {
        let lmax = SymmetricEigen::new(self.gram.clone())
            .eigenvalues
            .iter()
            .cloned()
            .fold(0.0, f64::max);
        if lmax > 0.0 {
            0.5 / (2.0 * lmax)
        } else {
            1.0
        }
    }

    fn rank_threshold(&self) -> f64 {
        1e-10 * self.dim() as f64 * self.features.phi_max().powi(2)
    }
}

/// One agent's least-squares objective over the shared rows.
#[derive(Debug, Clone)]
pub struct LocalObjective {
    design: Arc<SharedDesign>,
    targets: Vec<f64>,
    moment: DVector<f64>,
    target_sq: f64,
}

impl LocalObjective {
    pub fn new(design: Arc<SharedDesign>, targets: Vec<f64>) -> Result<Self> {
        if targets.len() != design.len() {
            return Err(MarlError::Dimension {
                expected: design.len(),
                got: targets.len(),
                context: "targets vs regression rows",
            });
        }
        let table = design.features.table();
        let mut moment = DVector::zeros(design.dim());
        let mut target_sq = 0.0;
        for ((&cell, &w), &y) in design.cells.iter().zip(&design.weights).zip(&targets) {
            moment.axpy(w * y, &table.row(cell).transpose(), 1.0);
            target_sq += w * y * y;
        }
        Ok(Self {
            design,
            targets,
            moment,
            target_sq,
        })
    }

    pub fn design(&self) -> &Arc<SharedDesign> {
        &self.design
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// `b_i = sum_t w_t Y_i,t phi_t`.
    pub fn moment(&self) -> &DVector<f64> {
        &self.moment
    }

    pub fn value(&self, theta: &DVector<f64>) -> f64 {
        let m_theta = &self.design.gram * theta;
        theta.dot(&m_theta) - 2.0 * self.moment.dot(theta) + self.target_sq
    }
}

/// `grad g_i(theta) = 2 sum_t w_t (theta^T phi_t - Y_i,t) phi_t = 2 (M theta - b_i)`.
pub fn local_gradient(theta: &DVector<f64>, objective: &LocalObjective) -> Result<DVector<f64>> {
    if theta.len() != objective.design.dim() {
        return Err(MarlError::Dimension {
            expected: objective.design.dim(),
            got: theta.len(),
            context: "local gradient",
        });
    }
    Ok((&objective.design.gram * theta - &objective.moment) * 2.0)
}

/// Exact minimizer of the agents' averaged objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LsqSolution {
    pub theta: DVector<f64>,
    pub rank: usize,
    /// Set when `M` is rank deficient and the minimum-norm solution was returned.
    pub singular: bool,
}

fn check_objectives(objectives: &[LocalObjective]) -> Result<&Arc<SharedDesign>> {
    let first = objectives
        .first()
        .ok_or_else(|| MarlError::Argument("need at least one local objective".into()))?;
    if objectives.iter().any(|o| !Arc::ptr_eq(&o.design, &first.design)) {
        return Err(MarlError::Argument(
            "all local objectives must share the same regression rows".into(),
        ));
    }
    Ok(&first.design)
}

/// Solves `M theta = mean_i b_i` through a symmetric eigendecomposition,
/// dropping eigenvalues under the rank threshold (minimum-norm solution).
pub fn centralized_lsq(objectives: &[LocalObjective]) -> Result<LsqSolution> {
    let design = check_objectives(objectives)?;
    let n = objectives.len() as f64;
    let mut rhs = DVector::zeros(design.dim());
    for o in objectives {
        rhs += &o.moment;
    }
    rhs /= n;
    let eig = SymmetricEigen::new(design.gram.clone());
    let threshold = design.rank_threshold();
    let coeffs = eig.eigenvectors.transpose() * &rhs;
    let mut rank = 0;
    let scaled = DVector::from_iterator(
        coeffs.len(),
        coeffs.iter().zip(eig.eigenvalues.iter()).map(|(&c, &l)| {
            if l > threshold {
                rank += 1;
                c / l
            } else {
                0.0
            }
        }),
    );
    Ok(LsqSolution {
        theta: &eig.eigenvectors * scaled,
        rank,
        singular: rank < design.dim(),
    })
}

/// Per-round diagnostics of a DIGing run. Every trace has `rounds + 1` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DigingReport {
    /// `sqrt(sum_i ||theta_i,l - theta*||^2)`.
    pub residual: Vec<f64>,
    /// `max_i max_{cells in D} |theta_i,l^T phi - theta*^T phi|`.
    pub disagreement: Vec<f64>,
    /// `|| mean_i gamma_i,l - mean_i grad g_i(theta_i,l) ||_inf`.
    pub tracker_gap: Vec<f64>,
    /// `exp(slope)` of the log-residual fit over the second half of the run.
    pub rate: f64,
    pub theta_star: DVector<f64>,
    pub alpha: f64,
}

/// Least-squares line through `ln(values[l])` for `l` in `start..=end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn log_linear_fit(values: &[f64], start: usize, end: usize) -> Option<LogLinearFit> {
    let end = end.min(values.len().checked_sub(1)?);
    let points: Vec<(f64, f64)> = (start..=end)
        .filter(|&l| values[l] > 0.0)
        .map(|l| (l as f64, values[l].ln()))
        .collect();
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Some(LogLinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Runs `rounds` DIGing iterations from `theta_i,0 = 0`, `gamma_i,0 = grad g_i(0)`:
///
/// ```text
/// theta_i,l+1 = sum_j c_l(i,j) theta_j,l - alpha gamma_i,l
/// gamma_i,l+1 = sum_j c_l(i,j) gamma_j,l + grad g_i(theta_i,l+1) - grad g_i(theta_i,l)
/// ```
///
/// All agents' gradients for a round are evaluated before any mixing.
pub fn diging_run(
    objectives: &[LocalObjective],
    schedule: &ConsensusSchedule,
    alpha: f64,
    rounds: usize,
) -> Result<(QVector, DigingReport)> {
    let design = check_objectives(objectives)?;
    let n = objectives.len();
    if schedule.n_nodes() != n {
        return Err(MarlError::Dimension {
            expected: n,
            got: schedule.n_nodes(),
            context: "consensus schedule nodes vs agents",
        });
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(MarlError::Argument(format!("stepsize {alpha} must be positive")));
    }
    let d = design.dim();
    let theta_star = centralized_lsq(objectives)?.theta;

    // Agent states as rows: thetas is N x d.
    let moments = DMatrix::from_fn(n, d, |i, k| objectives[i].moment[k]);
    let gram = &design.gram;
    let gradients = |thetas: &DMatrix<f64>| (thetas * gram - &moments) * 2.0;

    let mut thetas = DMatrix::<f64>::zeros(n, d);
    let mut grads = gradients(&thetas);
    let mut trackers = grads.clone();

    let star_row = theta_star.transpose();
    let star_pred = &design.visited_phi * &theta_star;
    let residual_of = |thetas: &DMatrix<f64>| {
        thetas
            .row_iter()
            .map(|r| (r - &star_row).norm_squared())
            .sum::<f64>()
            .sqrt()
    };
    let disagreement_of = |thetas: &DMatrix<f64>| {
        let preds = &design.visited_phi * thetas.transpose();
        preds
            .column_iter()
            .map(|c| (c - &star_pred).amax())
            .fold(0.0, f64::max)
    };
    let tracker_gap_of = |trackers: &DMatrix<f64>, grads: &DMatrix<f64>| {
        (trackers.row_mean() - grads.row_mean()).amax()
    };

    let mut residual = Vec::with_capacity(rounds + 1);
    let mut disagreement = Vec::with_capacity(rounds + 1);
    let mut tracker_gap = Vec::with_capacity(rounds + 1);
    residual.push(residual_of(&thetas));
    disagreement.push(disagreement_of(&thetas));
    tracker_gap.push(tracker_gap_of(&trackers, &grads));
    let initial = residual[0].max(f64::MIN_POSITIVE);

    for l in 0..rounds {
        let c = schedule.at(l);
        let next_thetas = c * &thetas - &trackers * alpha;
        let next_grads = gradients(&next_thetas);
        trackers = c * &trackers + &next_grads - &grads;
        thetas = next_thetas;
        grads = next_grads;

        let r = residual_of(&thetas);
        if !r.is_finite() || r > DIVERGENCE_FACTOR * initial {
            return Err(MarlError::Stepsize {
                round: l + 1,
                residual: r,
                initial,
            });
        }
        residual.push(r);
        disagreement.push(disagreement_of(&thetas));
        tracker_gap.push(tracker_gap_of(&trackers, &grads));
    }

    let rate = log_linear_fit(&residual, rounds / 2, rounds)
        .map_or(f64::NAN, |fit| fit.slope.exp());
    let qvector = QVector {
        thetas: thetas.row_iter().map(|r| r.transpose()).collect(),
    };
    Ok((
        qvector,
        DigingReport {
            residual,
            disagreement,
            tracker_gap,
            rate,
            theta_star,
            alpha,
        },
    ))
}

/// One-step computation error of each agent against the exact fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Disagreement {
    /// `max over cells in D of |Q_i - Q|` on clipped predictions.
    pub per_agent: Vec<f64>,
    /// Root mean square of `per_agent`.
    pub rms: f64,
    /// Same, with the max taken over every cell of the feature map.
    pub per_agent_all_cells: Vec<f64>,
    pub rms_all_cells: f64,
}

pub fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

pub fn measure_disagreement(
    qvector: &QVector,
    theta_star: &DVector<f64>,
    design: &SharedDesign,
    q_max: f64,
) -> Result<Disagreement> {
    let features = &design.features;
    let reference = features.predict_table(theta_star, q_max)?;
    let mut per_agent = Vec::with_capacity(qvector.len());
    let mut per_agent_all_cells = Vec::with_capacity(qvector.len());
    for theta in &qvector.thetas {
        let table = features.predict_table(theta, q_max)?;
        let gap = |c: usize| (table[c] - reference[c]).abs();
        per_agent.push(design.visited.iter().map(|&c| gap(c)).fold(0.0, f64::max));
        per_agent_all_cells.push((0..table.len()).map(gap).fold(0.0, f64::max));
    }
    Ok(Disagreement {
        rms: rms(&per_agent),
        rms_all_cells: rms(&per_agent_all_cells),
        per_agent,
        per_agent_all_cells,
    })
}
