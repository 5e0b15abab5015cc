//! Linear Q-function class `f(s, a; theta) = theta^T phi(s, a)` over tabular
//! cells, with clipping to `[-Q_max, Q_max]` at the prediction interface.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{MarlError, Result};
use crate::model::{Batch, TabularModel};

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureKind {
    OneHot,
    /// Gaussian bumps over the state index crossed with joint-action indicators.
    RadialBasis { centers: Vec<f64>, width: f64 },
    CustomTable,
}

/// Feature vectors for every cell `(s, a, b)`, stored as an `n_cells x d`
/// table. Cells are ordered `(s * A + a) * B + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    kind: FeatureKind,
    n_states: usize,
    n_actions: usize,
    n_opponent_actions: usize,
    table: DMatrix<f64>,
    phi_max: f64,
}

impl FeatureMap {
    pub fn one_hot(n_states: usize, n_actions: usize, n_opponent_actions: usize) -> Result<Self> {
        check_counts(n_states, n_actions, n_opponent_actions)?;
        let cells = n_states * n_actions * n_opponent_actions;
        Self::build(
            FeatureKind::OneHot,
            n_states,
            n_actions,
            n_opponent_actions,
            DMatrix::identity(cells, cells),
        )
    }

    pub fn radial_basis(
        n_states: usize,
        n_actions: usize,
        n_opponent_actions: usize,
        centers: Vec<f64>,
        width: f64,
    ) -> Result<Self> {
        check_counts(n_states, n_actions, n_opponent_actions)?;
        if centers.is_empty() || !(width > 0.0) {
            return Err(MarlError::Argument(
                "radial basis needs at least one center and a positive width".into(),
            ));
        }
        let joint = n_actions * n_opponent_actions;
        let k = centers.len();
        let mut table = DMatrix::zeros(n_states * joint, k * joint);
        for s in 0..n_states {
            for ab in 0..joint {
                let row = s * joint + ab;
                for (c, &center) in centers.iter().enumerate() {
                    let z = (s as f64 - center) / width;
                    table[(row, ab * k + c)] = (-0.5 * z * z).exp();
                }
            }
        }
        Self::build(
            FeatureKind::RadialBasis { centers, width },
            n_states,
            n_actions,
            n_opponent_actions,
            table,
        )
    }

    pub fn custom(
        n_states: usize,
        n_actions: usize,
        n_opponent_actions: usize,
        table: DMatrix<f64>,
    ) -> Result<Self> {
        check_counts(n_states, n_actions, n_opponent_actions)?;
        let cells = n_states * n_actions * n_opponent_actions;
        if table.nrows() != cells || table.ncols() == 0 {
            return Err(MarlError::Dimension {
                expected: cells,
                got: table.nrows(),
                context: "custom feature table rows",
            });
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(MarlError::Argument("custom feature table has non-finite entries".into()));
        }
        Self::build(FeatureKind::CustomTable, n_states, n_actions, n_opponent_actions, table)
    }

    /// One-hot features sized for a model.
    pub fn one_hot_for<M: TabularModel + ?Sized>(model: &M) -> Result<Self> {
        Self::one_hot(model.n_states(), model.n_actions(), model.n_opponent_actions())
    }

    fn build(
        kind: FeatureKind,
        n_states: usize,
        n_actions: usize,
        n_opponent_actions: usize,
        table: DMatrix<f64>,
    ) -> Result<Self> {
        let phi_max = table.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(Self {
            kind,
            n_states,
            n_actions,
            n_opponent_actions,
            table,
            phi_max,
        })
    }

    pub fn kind(&self) -> &FeatureKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.table.ncols()
    }

    pub fn phi_max(&self) -> f64 {
        self.phi_max
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_opponent_actions(&self) -> usize {
        self.n_opponent_actions
    }

    pub fn n_cells(&self) -> usize {
        self.table.nrows()
    }

    pub fn cell(&self, s: usize, a: usize, b: usize) -> usize {
        (s * self.n_actions + a) * self.n_opponent_actions + b
    }

    pub fn table(&self) -> &DMatrix<f64> {
        &self.table
    }

    pub fn evaluate(&self, s: usize, a: usize, b: usize) -> Result<DVector<f64>> {
        if s >= self.n_states || a >= self.n_actions || b >= self.n_opponent_actions {
            return Err(MarlError::Argument(format!(
                "cell (s={s}, a={a}, b={b}) outside the feature domain"
            )));
        }
        Ok(self.table.row(self.cell(s, a, b)).transpose())
    }

    /// Checks that the map covers the model's cells.
    pub fn check_model<M: TabularModel + ?Sized>(&self, model: &M) -> Result<()> {
        if self.n_states != model.n_states()
            || self.n_actions != model.n_actions()
            || self.n_opponent_actions != model.n_opponent_actions()
        {
            return Err(MarlError::Argument(format!(
                "feature map is for (S={}, A={}, B={}) but the model is (S={}, A={}, B={})",
                self.n_states,
                self.n_actions,
                self.n_opponent_actions,
                model.n_states(),
                model.n_actions(),
                model.n_opponent_actions()
            )));
        }
        Ok(())
    }

    /// Clipped predictions for every cell.
    pub fn predict_table(&self, theta: &DVector<f64>, q_max: f64) -> Result<Vec<f64>> {
        check_dim(self.dim(), theta.len())?;
        Ok((&self.table * theta)
            .iter()
            .map(|v| v.clamp(-q_max, q_max))
            .collect())
    }
}

fn check_counts(n_states: usize, n_actions: usize, n_opponent_actions: usize) -> Result<()> {
    if n_states == 0 || n_actions == 0 || n_opponent_actions == 0 {
        return Err(MarlError::Argument("feature map counts must be positive".into()));
    }
    Ok(())
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(MarlError::Dimension {
            expected,
            got,
            context: "parameter vector vs feature dimension",
        });
    }
    Ok(())
}

/// A single linear Q-function with its clipping bound.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearQ {
    pub theta: DVector<f64>,
    pub q_max: f64,
}

impl LinearQ {
    pub fn new(theta: DVector<f64>, q_max: f64) -> Self {
        Self { theta, q_max }
    }

    pub fn zeros(dim: usize, q_max: f64) -> Self {
        Self::new(DVector::zeros(dim), q_max)
    }

    /// Unclipped `theta^T phi(s, a, b)`.
    pub fn raw(&self, features: &FeatureMap, s: usize, a: usize, b: usize) -> Result<f64> {
        check_dim(features.dim(), self.theta.len())?;
        Ok(features.evaluate(s, a, b)?.dot(&self.theta))
    }

    pub fn predict(&self, features: &FeatureMap, s: usize, a: usize, b: usize) -> Result<f64> {
        Ok(self.raw(features, s, a, b)?.clamp(-self.q_max, self.q_max))
    }

    pub fn table(&self, features: &FeatureMap) -> Result<Vec<f64>> {
        features.predict_table(&self.theta, self.q_max)
    }
}

/// Per-agent parameter vectors sharing one feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct QVector {
    pub thetas: Vec<DVector<f64>>,
}

impl QVector {
    pub fn zeros(n_agents: usize, dim: usize) -> Self {
        Self {
            thetas: vec![DVector::zeros(dim); n_agents],
        }
    }

    pub fn consensual(theta: &DVector<f64>, n_agents: usize) -> Self {
        Self {
            thetas: vec![theta.clone(); n_agents],
        }
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.thetas.first().map_or(0, DVector::len)
    }

    pub fn agent(&self, i: usize, q_max: f64) -> LinearQ {
        LinearQ::new(self.thetas[i].clone(), q_max)
    }

    /// Clipped prediction tables, one per agent.
    pub fn tables(&self, features: &FeatureMap, q_max: f64) -> Result<Vec<Vec<f64>>> {
        self.thetas
            .iter()
            .map(|theta| features.predict_table(theta, q_max))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["agent", "index", "theta"])?;
        for (i, theta) in self.thetas.iter().enumerate() {
            for (k, v) in theta.iter().enumerate() {
                w.write_record([i.to_string(), k.to_string(), format!("{v:.17e}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<QVector> {
        let mut r = csv::Reader::from_reader(reader);
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("").trim().to_string();
            let bad = || MarlError::Argument(format!("bad theta row {rec:?}"));
            entries.push((
                field(0).parse().map_err(|_| bad())?,
                field(1).parse().map_err(|_| bad())?,
                field(2).parse().map_err(|_| bad())?,
            ));
        }
        let n = entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
        let d = entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
        let mut thetas = vec![DVector::zeros(d); n];
        for (i, k, v) in entries {
            thetas[i][k] = v;
        }
        Ok(QVector { thetas })
    }
}

/// Rank and spectrum of `M = sum_t w_t phi_t phi_t^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignStats {
    pub dim: usize,
    pub rank: usize,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub full_rank: bool,
}

/// Aggregated weight per cell of a batch.
pub fn cell_weights(batch: &Batch, features: &FeatureMap) -> Vec<f64> {
    let mut w = vec![0.0; features.n_cells()];
    for (tr, &weight) in batch.tuples.iter().zip(&batch.weights) {
        w[features.cell(tr.s, tr.a, tr.opponent_action())] += weight;
    }
    w
}

/// `sum_c w_c phi_c phi_c^T` over cells with positive weight.
pub fn weighted_gram(weights: &[f64], features: &FeatureMap) -> DMatrix<f64> {
    let d = features.dim();
    let mut m = DMatrix::zeros(d, d);
    for (cell, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            let phi = features.table().row(cell);
            m.ger(w, &phi.transpose(), &phi.transpose(), 1.0);
        }
    }
    m
}

/// Eigenvalue-thresholded rank of the empirical design matrix. The
/// threshold is `1e-10 * d * phi_max^2`.
pub fn design_matrix_stats(batch: &Batch, features: &FeatureMap) -> DesignStats {
    let m = weighted_gram(&cell_weights(batch, features), features);
    let d = features.dim();
    let eig = SymmetricEigen::new(m);
    let threshold = 1e-10 * d as f64 * features.phi_max().powi(2);
    let rank = eig.eigenvalues.iter().filter(|&&l| l > threshold).count();
    let min_eigenvalue = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_eigenvalue = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    DesignStats {
        dim: d,
        rank,
        min_eigenvalue,
        max_eigenvalue,
        full_rank: rank == d,
    }
}
