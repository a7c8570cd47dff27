//! Immutable graph and feature storage shared by every other module.
//!
//! [`Graph`] is a compressed-sparse-row adjacency with sorted, deduplicated
//! neighbor lists. [`FeatureMatrix`] holds dense node features. Both are
//! read-only after construction and can be shared across threads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// CSR adjacency. Row `i` lists the (sorted, unique) neighbors of node `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    neighbor_ids: Vec<usize>,
}

impl Graph {
    /// Builds a deduplicated CSR graph from an edge list.
    ///
    /// With `symmetrize` every `(u, v)` is also inserted as `(v, u)`; with
    /// `self_loops` every node gets `(i, i)`.
    pub fn build(
        edges: &[(usize, usize)],
        num_nodes: usize,
        symmetrize: bool,
        self_loops: bool,
    ) -> Result<Self> {
        for (k, &(u, v)) in edges.iter().enumerate() {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Input(format!(
                    "edge #{k} ({u}, {v}) has an endpoint outside 0..{num_nodes}"
                )));
            }
        }

        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for &(u, v) in edges {
            adj[u].push(v);
            if symmetrize {
                adj[v].push(u);
            }
        }
        if self_loops {
            for (i, row) in adj.iter_mut().enumerate() {
                row.push(i);
            }
        }

        let mut row_offsets = Vec::with_capacity(num_nodes + 1);
        let mut neighbor_ids = Vec::new();
        row_offsets.push(0);
        for mut row in adj {
            row.sort_unstable();
            row.dedup();
            neighbor_ids.extend_from_slice(&row);
            row_offsets.push(neighbor_ids.len());
        }
        Ok(Self {
            num_nodes,
            row_offsets,
            neighbor_ids,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of stored (directed) CSR entries, self-loops included.
    pub fn num_entries(&self) -> usize {
        self.neighbor_ids.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn neighbor_ids(&self) -> &[usize] {
        &self.neighbor_ids
    }

    pub fn neighbors(&self, i: usize) -> Result<&[usize]> {
        if i >= self.num_nodes {
            return Err(Error::Input(format!(
                "node {i} out of range for graph with {} nodes",
                self.num_nodes
            )));
        }
        Ok(self.row(i))
    }

    /// Unchecked neighbor slice for hot loops.
    #[inline]
    pub(crate) fn row(&self, i: usize) -> &[usize] {
        &self.neighbor_ids[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    #[inline]
    pub(crate) fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_offsets[i]..self.row_offsets[i + 1]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.num_nodes && self.row(i).binary_search(&j).is_ok()
    }

    /// Every stored entry as a `(row, neighbor)` pair, in CSR order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.num_nodes)
            .flat_map(|i| self.row(i).iter().map(move |&j| (i, j)))
            .collect()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.num_nodes).all(|i| self.row(i).iter().all(|&j| self.has_edge(j, i)))
    }

    pub fn has_all_self_loops(&self) -> bool {
        (0..self.num_nodes).all(|i| self.has_edge(i, i))
    }

    /// Relabels nodes so that old node `i` becomes new node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.num_nodes)?;
        let edges: Vec<_> = self
            .edges()
            .into_iter()
            .map(|(i, j)| (perm[i], perm[j]))
            .collect();
        Self::build(&edges, self.num_nodes, false, false)
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::Input(format!(
            "permutation has length {}, expected {n}",
            perm.len()
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::Input(format!("not a permutation of 0..{n}")));
        }
    }
    Ok(())
}

/// Dense node-feature matrix (one row per node). All entries are finite.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix(Matrix);

impl FeatureMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        if !values.all_finite() {
            return Err(Error::Input("feature matrix contains non-finite values".into()));
        }
        Ok(Self(values))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn num_rows(&self) -> usize {
        self.0.rows()
    }

    pub fn num_cols(&self) -> usize {
        self.0.cols()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    /// Divides every row by its L1 norm. All-zero rows stay zero.
    pub fn row_normalize(&self) -> Self {
        let mut out = self.0.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let sum: f64 = row.iter().map(|v| v.abs()).sum();
            if sum > 0.0 {
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
        }
        Self(out)
    }

    /// Row `i` of the result is row `order[i]` of `self`.
    pub fn gather_rows(&self, order: &[usize]) -> Self {
        Self(self.0.gather_rows(order))
    }
}

/// Disjoint train / validation / test node-index sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

impl DatasetSplit {
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        let mut owner = vec![false; num_nodes];
        for idx in [&self.train_idx, &self.val_idx, &self.test_idx] {
            for &i in idx {
                if i >= num_nodes {
                    return Err(Error::Dataset(format!(
                        "split index {i} out of range for {num_nodes} nodes"
                    )));
                }
                if std::mem::replace(&mut owner[i], true) {
                    return Err(Error::Dataset(format!("node {i} appears in two splits")));
                }
            }
        }
        Ok(())
    }
}

/// Everything the trainer and the probe need about one benchmark graph.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub name: String,
    pub graph: Graph,
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: DatasetSplit,
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        graph: Graph,
        features: FeatureMatrix,
        labels: Vec<usize>,
        num_classes: usize,
        split: DatasetSplit,
    ) -> Result<Self> {
        let n = graph.num_nodes();
        if features.num_rows() != n || labels.len() != n {
            return Err(Error::Dataset(format!(
                "graph has {n} nodes but features have {} rows and labels {}",
                features.num_rows(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Dataset(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        split.validate(n)?;
        Ok(Self {
            name: name.into(),
            graph,
            features,
            labels,
            num_classes,
            split,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn num_features(&self) -> usize {
        self.features.num_cols()
    }

    /// Same dataset with a different split.
    pub fn with_split(&self, split: DatasetSplit) -> Result<Self> {
        split.validate(self.num_nodes())?;
        Ok(Self {
            split,
            ..self.clone()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_graph_with_self_loops() {
        let g = Graph::build(&[], 3, false, true).unwrap();
        for i in 0..3 {
            assert_eq!(g.neighbors(i).unwrap(), &[i]);
        }
        assert_eq!(g.neighbors(1).unwrap(), &[1]);
    }

    #[test]
    fn symmetrize_adds_reverse_edge() {
        let g = Graph::build(&[(0, 1)], 2, true, false).unwrap();
        assert_eq!(g.neighbors(0).unwrap(), &[1]);
        assert_eq!(g.neighbors(1).unwrap(), &[0]);
    }

    #[test]
    fn duplicate_edges_removed() {
        let edges = [(0, 1), (1, 0), (0, 1)];
        let g = Graph::build(&edges, 2, false, false).unwrap();
        // brute-force dedup of the edge multiset
        let mut uniq: Vec<_> = edges.to_vec();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(g.edges(), uniq);
        assert_eq!(g.neighbors(0).unwrap(), &[1]);
        assert_eq!(g.neighbors(1).unwrap(), &[0]);
    }

    #[test]
    fn path_graph_neighbors() {
        let g = Graph::build(&[(0, 1), (1, 2)], 3, true, false).unwrap();
        assert_eq!(g.neighbors(1).unwrap(), &[0, 2]);
    }

    #[test]
    fn out_of_range_endpoint_names_edge() {
        let err = Graph::build(&[(0, 1), (2, 5)], 3, false, false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 5)"), "{msg}");
        assert!(Graph::build(&[(0, 0)], 1, false, false)
            .unwrap()
            .neighbors(1)
            .is_err());
    }

    #[test]
    fn row_normalize_examples() {
        let f = FeatureMatrix::from_rows(&[[2.0, 2.0]]).unwrap().row_normalize();
        assert_eq!(f.row(0), &[0.5, 0.5]);
        let f = FeatureMatrix::from_rows(&[[0.0, 0.0]]).unwrap().row_normalize();
        assert_eq!(f.row(0), &[0.0, 0.0]);
        let f = FeatureMatrix::from_rows(&[[1.0, 3.0], [4.0, 0.0]])
            .unwrap()
            .row_normalize();
        assert_eq!(f.row(0), &[0.25, 0.75]);
        assert_eq!(f.row(1), &[1.0, 0.0]);
    }

    #[test]
    fn non_finite_features_rejected() {
        assert!(FeatureMatrix::from_rows(&[[1.0, f64::NAN]]).is_err());
    }

    #[test]
    fn split_overlap_detected() {
        let split = DatasetSplit {
            train_idx: vec![0, 1],
            val_idx: vec![1],
            test_idx: vec![],
        };
        assert!(split.validate(3).is_err());
    }

    fn edge_list(max_n: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (1..max_n).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n), 0..40)))
    }

    proptest! {
        #[test]
        fn csr_invariants_hold((n, edges) in edge_list(12), sym: bool, loops: bool) {
            let g = Graph::build(&edges, n, sym, loops).unwrap();
            let off = g.row_offsets();
            prop_assert_eq!(off[0], 0);
            prop_assert_eq!(off[n], g.neighbor_ids().len());
            prop_assert!(off.windows(2).all(|w| w[0] <= w[1]));
            for i in 0..n {
                let row = g.neighbors(i).unwrap();
                prop_assert!(row.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(row.iter().all(|&j| j < n));
            }
            if sym {
                // exhaustive scan over all pairs
                for i in 0..n {
                    for j in 0..n {
                        prop_assert_eq!(g.has_edge(i, j), g.has_edge(j, i));
                    }
                }
            }
            if loops {
                prop_assert!(g.has_all_self_loops());
            }
        }

        #[test]
        fn csr_round_trip((n, edges) in edge_list(12), sym: bool, loops: bool) {
            let g = Graph::build(&edges, n, sym, loops).unwrap();
            let again = Graph::build(&g.edges(), n, false, false).unwrap();
            prop_assert_eq!(g, again);
        }

        #[test]
        fn row_normalize_idempotent(rows in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 3), 1..6)) {
            let f = FeatureMatrix::from_rows(&rows).unwrap();
            let once = f.row_normalize();
            let twice = once.row_normalize();
            prop_assert!(once.as_matrix().max_abs_diff(twice.as_matrix()) < 1e-12);
            for (i, raw) in rows.iter().enumerate() {
                let s: f64 = once.row(i).iter().sum();
                if raw.iter().sum::<f64>() > 0.0 {
                    prop_assert!((s - 1.0).abs() < 1e-9);
                } else {
                    prop_assert_eq!(s, 0.0);
                }
            }
        }
    }
}
