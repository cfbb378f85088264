//! Graph representation, normalizations, propagation matrices and splits.

mod csbm;
mod io;

pub use csbm::{csbm_d_rule, csbm_mu, csbm_sample, CsbmParams};
pub use io::{graph_from_json, graph_to_json, load_graph, save_graph};
pub(crate) use io::fmt_real;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("node {node} has degree zero")]
    DegreeZero { node: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("class {class} has {available} nodes, {requested} requested per class")]
    InsufficientClass {
        class: usize,
        available: usize,
        requested: usize,
    },
    #[error("requested an empty labeled set")]
    EmptyLabeledSet,
    #[error("malformed graph: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Partially labeled attributed graph.
///
/// Labeled nodes occupy the index prefix `0..m` once [`Graph::is_canonical`]
/// holds; [`split`] and [`Graph::canonicalize`] establish that ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph<T> {
    adjacency: Array2<bool>,
    features: Array2<T>,
    labels: Vec<i64>,
    labeled_mask: Vec<bool>,
    verified_mask: Vec<bool>,
    test_mask: Vec<bool>,
}

impl<T: Scalar> Graph<T> {
    /// Builds an unlabeled-split graph. `labels` uses `-1` for unknown.
    pub fn new(
        adjacency: Array2<bool>,
        features: Array2<T>,
        labels: Vec<i64>,
    ) -> Result<Self, GraphError> {
        let n = adjacency.nrows();
        if adjacency.ncols() != n {
            return Err(GraphError::DimensionMismatch(format!(
                "adjacency is {}x{}",
                n,
                adjacency.ncols()
            )));
        }
        if features.nrows() != n {
            return Err(GraphError::DimensionMismatch(format!(
                "features have {} rows, expected {n}",
                features.nrows()
            )));
        }
        if labels.len() != n {
            return Err(GraphError::DimensionMismatch(format!(
                "labels have length {}, expected {n}",
                labels.len()
            )));
        }
        for i in 0..n {
            if adjacency[[i, i]] {
                return Err(GraphError::Malformed(format!("self-loop stored at node {i}")));
            }
            for j in (i + 1)..n {
                if adjacency[[i, j]] != adjacency[[j, i]] {
                    return Err(GraphError::Malformed(format!(
                        "adjacency not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if let Some(bad) = labels.iter().find(|&&l| l < -1) {
            return Err(GraphError::Malformed(format!("label {bad} out of range")));
        }
        Ok(Self {
            adjacency,
            features,
            labels,
            labeled_mask: vec![false; n],
            verified_mask: vec![false; n],
            test_mask: vec![true; n],
        })
    }

    /// Builds a graph from an undirected edge list.
    pub fn from_edges(
        n: usize,
        edges: &[(usize, usize)],
        features: Array2<T>,
        labels: Vec<i64>,
    ) -> Result<Self, GraphError> {
        let mut adjacency = Array2::from_elem((n, n), false);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(GraphError::Malformed(format!("edge ({i}, {j}) out of range")));
            }
            if i == j {
                return Err(GraphError::Malformed(format!("self-loop edge at {i}")));
            }
            adjacency[[i, j]] = true;
            adjacency[[j, i]] = true;
        }
        Self::new(adjacency, features, labels)
    }

    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    /// Number of labeled nodes.
    pub fn m(&self) -> usize {
        self.labeled_mask.iter().filter(|&&b| b).count()
    }

    pub fn adjacency(&self) -> &Array2<bool> {
        &self.adjacency
    }

    pub fn features(&self) -> &Array2<T> {
        &self.features
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn labeled_mask(&self) -> &[bool] {
        &self.labeled_mask
    }

    pub fn verified_mask(&self) -> &[bool] {
        &self.verified_mask
    }

    pub fn test_mask(&self) -> &[bool] {
        &self.test_mask
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        mask_indices(&self.labeled_mask)
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.labeled_mask[i]).collect()
    }

    pub fn verified_indices(&self) -> Vec<usize> {
        mask_indices(&self.verified_mask)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        mask_indices(&self.test_mask)
    }

    /// Number of classes, `max label + 1`.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |l| (l + 1).max(0) as usize)
    }

    /// Sorted undirected edge list with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.adjacency[[i, j]] {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Replaces the labeled set; the test set becomes its complement.
    pub fn set_labeled(&mut self, labeled: &[usize]) -> Result<(), GraphError> {
        let mask = indices_to_mask(self.n(), labeled)?;
        for &i in labeled {
            if self.labels[i] < 0 {
                return Err(GraphError::Malformed(format!("labeled node {i} has no label")));
            }
        }
        self.test_mask = mask.iter().map(|b| !b).collect();
        self.labeled_mask = mask;
        Ok(())
    }

    pub fn set_verified(&mut self, verified: &[usize]) -> Result<(), GraphError> {
        self.verified_mask = indices_to_mask(self.n(), verified)?;
        Ok(())
    }

    pub fn set_test(&mut self, test: &[usize]) -> Result<(), GraphError> {
        self.test_mask = indices_to_mask(self.n(), test)?;
        Ok(())
    }

    /// True when every labeled node precedes every unlabeled node.
    pub fn is_canonical(&self) -> bool {
        let m = self.m();
        self.labeled_mask[..m].iter().all(|&b| b)
    }

    /// Reorders nodes so labeled nodes come first, keeping relative order.
    ///
    /// Returns the reordered graph and `order`, where `order[new] = old`.
    pub fn canonicalize(&self) -> (Self, Vec<usize>) {
        let mut order = self.labeled_indices();
        order.extend(self.unlabeled_indices());
        (self.permuted(&order), order)
    }

    /// Graph whose node `k` is node `order[k]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        self.induced_subgraph(order)
    }

    /// Subgraph induced by `nodes`, in the given order.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Self {
        let k = nodes.len();
        let adjacency = Array2::from_shape_fn((k, k), |(a, b)| self.adjacency[[nodes[a], nodes[b]]]);
        let features = self.features.select(ndarray::Axis(0), nodes);
        let pick = |mask: &[bool]| nodes.iter().map(|&i| mask[i]).collect::<Vec<_>>();
        Self {
            adjacency,
            features,
            labels: nodes.iter().map(|&i| self.labels[i]).collect(),
            labeled_mask: pick(&self.labeled_mask),
            verified_mask: pick(&self.verified_mask),
            test_mask: pick(&self.test_mask),
        }
    }

    /// Same graph with the feature matrix replaced.
    pub fn with_features(&self, features: Array2<T>) -> Result<Self, GraphError> {
        if features.dim() != self.features.dim() {
            return Err(GraphError::DimensionMismatch(format!(
                "features {:?} vs {:?}",
                features.dim(),
                self.features.dim()
            )));
        }
        let mut g = self.clone();
        g.features = features;
        Ok(g)
    }
}

fn mask_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
}

fn indices_to_mask(n: usize, idx: &[usize]) -> Result<Vec<bool>, GraphError> {
    let mut mask = vec![false; n];
    for &i in idx {
        if i >= n {
            return Err(GraphError::Malformed(format!("index {i} out of range for n={n}")));
        }
        mask[i] = true;
    }
    Ok(mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureKind {
    RowNorm,
    SymNorm,
    Identity,
    Ppr,
}

impl StructureKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StructureKind::RowNorm => "row_norm",
            StructureKind::SymNorm => "sym_norm",
            StructureKind::Identity => "identity",
            StructureKind::Ppr => "ppr",
        }
    }
}

/// Non-negative propagation matrix `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureMatrix<T> {
    matrix: Array2<T>,
    kind: StructureKind,
}

impl<T: Scalar> StructureMatrix<T> {
    /// Wraps an arbitrary matrix, rejecting negative or non-finite entries.
    pub fn from_matrix(matrix: Array2<T>, kind: StructureKind) -> Result<Self, GraphError> {
        if !matrix.is_square() {
            return Err(GraphError::DimensionMismatch(format!(
                "structure matrix is {:?}",
                matrix.dim()
            )));
        }
        if let Some(((i, j), v)) = matrix.indexed_iter().find(|(_, v)| !(**v >= T::zero() && v.is_finite())) {
            return Err(GraphError::InvalidParameter(format!(
                "structure entry ({i}, {j}) = {v} is not a finite non-negative number"
            )));
        }
        Ok(Self { matrix, kind })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            matrix: Array2::eye(n),
            kind: StructureKind::Identity,
        }
    }

    pub fn matrix(&self) -> &Array2<T> {
        &self.matrix
    }

    pub fn kind(&self) -> StructureKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn into_matrix(self) -> Array2<T> {
        self.matrix
    }
}

/// Normalized adjacency with optional self-loops.
///
/// `RowNorm` gives `D^-1 A` and `SymNorm` gives `D^-1/2 A D^-1/2`, where `A`
/// carries the self-loops when requested. `Identity` ignores the graph.
pub fn normalize<T: Scalar>(
    adjacency: &Array2<bool>,
    kind: StructureKind,
    self_loops: bool,
) -> Result<StructureMatrix<T>, GraphError> {
    let n = adjacency.nrows();
    if kind == StructureKind::Identity {
        return Ok(StructureMatrix::identity(n));
    }
    if kind == StructureKind::Ppr {
        return Err(GraphError::InvalidParameter(
            "ppr is built with ppr_matrix, not normalize".into(),
        ));
    }
    let mut a = adjacency.mapv(|b| if b { T::one() } else { T::zero() });
    if self_loops {
        for i in 0..n {
            a[[i, i]] = T::one();
        }
    }
    let deg: Array1<T> = a.sum_axis(ndarray::Axis(1));
    if let Some(node) = deg.iter().position(|&d| d <= T::zero()) {
        return Err(GraphError::DegreeZero { node });
    }
    let matrix = match kind {
        StructureKind::RowNorm => {
            Array2::from_shape_fn((n, n), |(i, j)| a[[i, j]] / deg[i])
        }
        StructureKind::SymNorm => {
            let inv_sqrt = deg.mapv(|d| d.sqrt().recip());
            Array2::from_shape_fn((n, n), |(i, j)| a[[i, j]] * inv_sqrt[i] * inv_sqrt[j])
        }
        StructureKind::Identity | StructureKind::Ppr => unreachable!(),
    };
    Ok(StructureMatrix {
        matrix,
        kind,
    })
}

/// Approximate personalized-propagation matrix
/// `P = (1-a)^K S^K + a * sum_{i<K} (1-a)^i S^i`.
pub fn ppr_matrix<T: Scalar>(
    s: &StructureMatrix<T>,
    alpha: T,
    k_hops: usize,
) -> Result<StructureMatrix<T>, GraphError> {
    if !(alpha > T::zero() && alpha <= T::one()) {
        return Err(GraphError::InvalidParameter(format!(
            "teleport alpha must lie in (0, 1], got {alpha}"
        )));
    }
    if k_hops == 0 {
        return Err(GraphError::InvalidParameter("k_hops must be at least 1".into()));
    }
    let n = s.n();
    let keep = T::one() - alpha;
    let mut power: Array2<T> = Array2::eye(n);
    let mut acc: Array2<T> = Array2::zeros((n, n));
    let mut coeff = alpha;
    for _ in 0..k_hops {
        acc.scaled_add(coeff, &power);
        coeff = coeff * keep;
        power = power.dot(s.matrix());
    }
    acc.scaled_add(keep.powi(k_hops as i32), &power);
    // Rounding cannot push a sum of non-negative products below zero,
    // but clamp -0.0 so the structure check is exact.
    acc.mapv_inplace(|v| if v < T::zero() { T::zero() } else { v });
    Ok(StructureMatrix {
        matrix: acc,
        kind: StructureKind::Ppr,
    })
}

/// Samples `n_train_per_class` labeled nodes per class and moves them to
/// the index prefix.
///
/// Returns the reordered graph and `order` with `order[new] = old`.
pub fn split<T: Scalar>(
    graph: &Graph<T>,
    n_train_per_class: usize,
    seed: u64,
) -> Result<(Graph<T>, Vec<usize>), GraphError> {
    if n_train_per_class == 0 {
        return Err(GraphError::EmptyLabeledSet);
    }
    let k = graph.num_classes();
    if k == 0 {
        return Err(GraphError::EmptyLabeledSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(k * n_train_per_class);
    for class in 0..k {
        let mut members: Vec<usize> = (0..graph.n())
            .filter(|&i| graph.labels()[i] == class as i64)
            .collect();
        if members.len() < n_train_per_class {
            return Err(GraphError::InsufficientClass {
                class,
                available: members.len(),
                requested: n_train_per_class,
            });
        }
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..n_train_per_class]);
    }
    chosen.sort_unstable();
    let mut g = graph.clone();
    g.set_labeled(&chosen)?;
    Ok(g.canonicalize())
}
