//! Undirected graphs in compressed-row form and the symmetric
//! normalization `D^-1/2 A D^-1/2` used for propagation.

use log::warn;

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Undirected, unweighted graph stored as sorted, symmetric adjacency rows.
///
/// Every undirected edge `{i, j}` with `i != j` appears in both row `i` and
/// row `j`; a self-loop `(i, i)` appears once in row `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseGraph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    edge_count: usize,
}

impl SparseGraph {
    /// Builds a graph from an arbitrary edge list. Reverse and repeated pairs
    /// collapse to a single undirected edge; `(i, i)` is kept as a self-loop.
    pub fn from_edges(edges: &[(usize, usize)], num_nodes: usize) -> Result<Self> {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::NodeOutOfRange(u, v, num_nodes));
            }
            rows[u].push(v);
            if u != v {
                rows[v].push(u);
            }
        }
        Ok(Self::from_rows(rows))
    }

    fn from_rows(mut rows: Vec<Vec<usize>>) -> Self {
        let num_nodes = rows.len();
        let mut row_offsets = Vec::with_capacity(num_nodes + 1);
        let mut col_indices = Vec::new();
        let mut self_loops = 0;
        row_offsets.push(0);
        for (i, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            if row.binary_search(&i).is_ok() {
                self_loops += 1;
            }
            col_indices.extend_from_slice(row);
            row_offsets.push(col_indices.len());
        }
        let edge_count = (col_indices.len() - self_loops) / 2 + self_loops;
        SparseGraph {
            num_nodes,
            row_offsets,
            col_indices,
            edge_count,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of undirected edges, self-loops included.
    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    /// Sorted neighbor list of `i`, including `i` itself if it has a self-loop.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    pub fn has_self_loop(&self, i: usize) -> bool {
        self.has_edge(i, i)
    }

    pub fn num_self_loops(&self) -> usize {
        (0..self.num_nodes).filter(|&i| self.has_self_loop(i)).count()
    }

    /// Each undirected edge once, as `(i, j)` with `i <= j`, in row order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .filter(move |&&j| j >= i)
                .map(move |&j| (i, j))
        })
    }

    /// Copy of the graph with a self-loop on every node.
    pub fn with_self_loops(&self) -> SparseGraph {
        let rows = (0..self.num_nodes)
            .map(|i| {
                let mut row = self.neighbors(i).to_vec();
                row.push(i);
                row
            })
            .collect();
        Self::from_rows(rows)
    }

    /// Copy of the graph with every self-loop removed.
    pub fn without_self_loops(&self) -> SparseGraph {
        let rows = (0..self.num_nodes)
            .map(|i| self.neighbors(i).iter().copied().filter(|&j| j != i).collect())
            .collect();
        Self::from_rows(rows)
    }

    /// Copy of the graph with `extra` merged into the edge set.
    pub fn with_added_edges(&self, extra: &[(usize, usize)]) -> Result<SparseGraph> {
        let mut edges: Vec<(usize, usize)> = self.edges().collect();
        edges.extend_from_slice(extra);
        SparseGraph::from_edges(&edges, self.num_nodes)
    }

    /// Dense 0/1 adjacency matrix, self-loops on the diagonal.
    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.num_nodes;
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for &j in self.neighbors(i) {
                m.set(i, j, 1.0);
            }
        }
        m
    }
}

/// Per-node neighbor counts (the diagonal of `D`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeVector(pub Vec<usize>);

impl DegreeVector {
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

pub fn compute_degrees(g: &SparseGraph) -> DegreeVector {
    DegreeVector((0..g.num_nodes()).map(|i| g.degree(i)).collect())
}

/// `D^-1/2 A D^-1/2` over the sparsity pattern of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    pattern: SparseGraph,
    values: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn num_nodes(&self) -> usize {
        self.pattern.num_nodes()
    }

    /// The (possibly self-loop augmented) graph the values are laid out over.
    pub fn pattern(&self) -> &SparseGraph {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(column, value)` pairs for row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.pattern.row_offsets()[i]..self.pattern.row_offsets()[i + 1];
        self.pattern.col_indices()[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.num_nodes();
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for (j, v) in self.row(i) {
                m.set(i, j, v);
            }
        }
        m
    }
}

/// Builds the propagation operator. With `add_self_loops`, every node gets a
/// self-loop first and degrees are taken from the augmented graph. Without
/// it, isolated nodes keep an empty row and receive no messages.
pub fn symmetric_normalize(g: &SparseGraph, add_self_loops: bool) -> NormalizedAdjacency {
    let pattern = if add_self_loops {
        g.with_self_loops()
    } else {
        g.clone()
    };
    let isolated = (0..pattern.num_nodes())
        .filter(|&i| pattern.degree(i) == 0)
        .count();
    if isolated > 0 {
        warn!("{isolated} isolated node(s) without self-loops will receive no messages");
    }
    let mut values = Vec::with_capacity(pattern.col_indices().len());
    for i in 0..pattern.num_nodes() {
        let di = pattern.degree(i) as f64;
        for &j in pattern.neighbors(i) {
            values.push(1.0 / (di * pattern.degree(j) as f64).sqrt());
        }
    }
    NormalizedAdjacency { pattern, values }
}
