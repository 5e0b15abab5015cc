//! Time-varying communication graphs and doubly stochastic consensus matrices.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MarlError, Result};

/// Stochasticity tolerance for consensus matrices.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// A schedule is rejected when its joint spectral value reaches `1 - CHI_MARGIN`.
pub const CHI_MARGIN: f64 = 1e-10;

pub type Edge = (usize, usize);

/// Periodic sequence of undirected graphs on a fixed node set; round `l`
/// uses `graphs[l % period]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphSchedule {
    n_nodes: usize,
    graphs: Vec<Vec<Edge>>,
}

impl GraphSchedule {
    /// Edges are stored as `(min, max)` and deduplicated. Self loops are rejected.
    pub fn new(n_nodes: usize, graphs: Vec<Vec<Edge>>) -> Result<Self> {
        if n_nodes == 0 {
            return Err(MarlError::Argument("graph schedule needs at least one node".into()));
        }
        if graphs.is_empty() {
            return Err(MarlError::Argument("graph schedule needs at least one round".into()));
        }
        let mut normalized = Vec::with_capacity(graphs.len());
        for (round, edges) in graphs.into_iter().enumerate() {
            let mut out: Vec<Edge> = Vec::with_capacity(edges.len());
            for (i, j) in edges {
                if i == j {
                    return Err(MarlError::Argument(format!(
                        "self loop ({i}, {j}) in round {round}"
                    )));
                }
                if i >= n_nodes || j >= n_nodes {
                    return Err(MarlError::Argument(format!(
                        "edge ({i}, {j}) in round {round} outside {n_nodes} nodes"
                    )));
                }
                out.push((i.min(j), i.max(j)));
            }
            out.sort_unstable();
            out.dedup();
            normalized.push(out);
        }
        Ok(Self {
            n_nodes,
            graphs: normalized,
        })
    }

    pub fn static_graph(n_nodes: usize, edges: Vec<Edge>) -> Result<Self> {
        Self::new(n_nodes, vec![edges])
    }

    pub fn complete(n_nodes: usize) -> Result<Self> {
        let edges = (0..n_nodes)
            .flat_map(|i| (i + 1..n_nodes).map(move |j| (i, j)))
            .collect();
        Self::static_graph(n_nodes, edges)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn period(&self) -> usize {
        self.graphs.len()
    }

    pub fn graphs(&self) -> &[Vec<Edge>] {
        &self.graphs
    }

    pub fn at(&self, round: usize) -> &[Edge] {
        &self.graphs[round % self.graphs.len()]
    }

    /// True when the union of all rounds connects every node.
    pub fn union_connected(&self) -> bool {
        let mut parent: Vec<usize> = (0..self.n_nodes).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(i, j) in self.graphs.iter().flatten() {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            parent[ri] = rj;
        }
        let root = find(&mut parent, 0);
        (0..self.n_nodes).all(|x| find(&mut parent, x) == root)
    }
}

/// Metropolis-Hastings weights: `c(i,j) = 1 / (1 + max(deg i, deg j))` on
/// edges and the remaining mass on the diagonal. Symmetric and doubly
/// stochastic for any simple undirected graph.
pub fn metropolis_weights(edges: &[Edge], n_nodes: usize) -> DMatrix<f64> {
    let mut degree = vec![0usize; n_nodes];
    for &(i, j) in edges {
        degree[i] += 1;
        degree[j] += 1;
    }
    let mut c = DMatrix::zeros(n_nodes, n_nodes);
    for &(i, j) in edges {
        let w = 1.0 / (1 + degree[i].max(degree[j])) as f64;
        c[(i, j)] = w;
        c[(j, i)] = w;
    }
    for i in 0..n_nodes {
        let off: f64 = (0..n_nodes).filter(|&j| j != i).map(|j| c[(i, j)]).sum();
        c[(i, i)] = 1.0 - off;
    }
    c
}

fn check_doubly_stochastic(index: usize, c: &DMatrix<f64>) -> Result<()> {
    if !c.is_square() {
        return Err(MarlError::Stochasticity {
            index,
            detail: format!("shape {}x{}", c.nrows(), c.ncols()),
        });
    }
    if let Some(v) = c.iter().find(|v| !(**v >= -STOCHASTIC_TOL)) {
        return Err(MarlError::Stochasticity {
            index,
            detail: format!("negative or non-finite entry {v}"),
        });
    }
    for (i, row) in c.row_iter().enumerate() {
        let s = row.sum();
        if (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(MarlError::Stochasticity {
                index,
                detail: format!("row {i} sums to {s}"),
            });
        }
    }
    for (j, col) in c.column_iter().enumerate() {
        let s = col.sum();
        if (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(MarlError::Stochasticity {
                index,
                detail: format!("column {j} sums to {s}"),
            });
        }
    }
    Ok(())
}

/// Joint spectral value of a periodic matrix sequence: the largest
/// `sigma_max(C_l C_{l-1} ... C_{l-B+1} - 11^T / N)` over one period.
/// Fails on a non-doubly-stochastic matrix or when the value reaches 1.
pub fn validate_schedule(matrices: &[DMatrix<f64>], window_b: usize) -> Result<f64> {
    if window_b == 0 {
        return Err(MarlError::Argument("joint-connectivity window must be >= 1".into()));
    }
    let first = matrices
        .first()
        .ok_or_else(|| MarlError::Argument("empty consensus schedule".into()))?;
    let n = first.nrows();
    for (index, c) in matrices.iter().enumerate() {
        if c.nrows() != n {
            return Err(MarlError::Dimension {
                expected: n,
                got: c.nrows(),
                context: "consensus matrix size",
            });
        }
        check_doubly_stochastic(index, c)?;
    }
    let period = matrices.len();
    let average = DMatrix::from_element(n, n, 1.0 / n as f64);
    let mut chi: f64 = 0.0;
    let mut worst = 0;
    for end in 0..period {
        // end + period * window_b keeps the index arithmetic non-negative.
        let mut product = DMatrix::identity(n, n);
        for back in (0..window_b).rev() {
            let l = (end + period * window_b - back) % period;
            product = &matrices[l] * product;
        }
        let sigma = (product - &average)
            .singular_values()
            .iter()
            .cloned()
            .fold(0.0, f64::max);
        if sigma > chi {
            chi = sigma;
            worst = end;
        }
    }
    if chi >= 1.0 - CHI_MARGIN {
        return Err(MarlError::Connectivity {
            chi,
            window_end: worst,
        });
    }
    Ok(chi)
}

/// Validated periodic consensus matrices aligned with a graph schedule.
#[derive(Debug, Clone)]
pub struct ConsensusSchedule {
    graphs: GraphSchedule,
    matrices: Vec<DMatrix<f64>>,
    window_b: usize,
    chi: f64,
}

impl ConsensusSchedule {
    /// Metropolis weights on every round, validated with window `window_b`.
    pub fn metropolis(graphs: GraphSchedule, window_b: usize) -> Result<Self> {
        let matrices = graphs
            .graphs()
            .iter()
            .map(|edges| metropolis_weights(edges, graphs.n_nodes()))
            .collect();
        Self::new(graphs, matrices, window_b)
    }

    /// Metropolis weights with the window equal to the schedule period.
    pub fn metropolis_periodic(graphs: GraphSchedule) -> Result<Self> {
        let b = graphs.period();
        Self::metropolis(graphs, b)
    }

    /// Checks the support condition, double stochasticity, and `chi < 1`.
    pub fn new(graphs: GraphSchedule, matrices: Vec<DMatrix<f64>>, window_b: usize) -> Result<Self> {
        if matrices.len() != graphs.period() {
            return Err(MarlError::Dimension {
                expected: graphs.period(),
                got: matrices.len(),
                context: "consensus matrices per round",
            });
        }
        let n = graphs.n_nodes();
        for (index, (c, edges)) in matrices.iter().zip(graphs.graphs()).enumerate() {
            if c.nrows() != n || c.ncols() != n {
                return Err(MarlError::Dimension {
                    expected: n,
                    got: c.nrows(),
                    context: "consensus matrix size",
                });
            }
            for i in 0..n {
                for j in 0..n {
                    if i != j && c[(i, j)] != 0.0 && edges.binary_search(&(i.min(j), i.max(j))).is_err() {
                        return Err(MarlError::Stochasticity {
                            index,
                            detail: format!("weight c({i},{j}) = {} without an edge", c[(i, j)]),
                        });
                    }
                }
            }
        }
        let chi = validate_schedule(&matrices, window_b)?;
        Ok(Self {
            graphs,
            matrices,
            window_b,
            chi,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.graphs.n_nodes()
    }

    pub fn period(&self) -> usize {
        self.matrices.len()
    }

    pub fn window_b(&self) -> usize {
        self.window_b
    }

    pub fn chi(&self) -> f64 {
        self.chi
    }

    pub fn graphs(&self) -> &GraphSchedule {
        &self.graphs
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn at(&self, round: usize) -> &DMatrix<f64> {
        &self.matrices[round % self.matrices.len()]
    }
}

/// A random spanning tree on `n_nodes` (seeded), its edges dealt out
/// `edges_per_round` at a time. The union over one period is connected.
pub fn ring_of_graphs(n_nodes: usize, edges_per_round: usize, seed: u64) -> Result<GraphSchedule> {
    if n_nodes < 2 {
        return Err(MarlError::Argument("ring_of_graphs needs at least 2 nodes".into()));
    }
    if edges_per_round == 0 {
        return Err(MarlError::Argument("edges_per_round must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n_nodes).collect();
    order.shuffle(&mut rng);
    let edges: Vec<Edge> = (1..n_nodes)
        .map(|k| {
            let parent = order[rng.random_range(0..k)];
            (parent, order[k])
        })
        .collect();
    GraphSchedule::new(n_nodes, edges.chunks(edges_per_round).map(<[Edge]>::to_vec).collect())
}
