//! Compressed sparse row graphs.
//!
//! A [`Graph`] stores directed entries `(i, j, w)`; undirected graphs keep
//! both directions. The same type doubles as the sparse propagation operator
//! used by the GNN layers (normalized adjacency, adjacency plus identity,
//! row-mean operator).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    edge_weights: Vec<f64>,
}

/// Read access to per-node neighbor lists with integer multiplicities.
///
/// Implemented by plain graphs (multiplicity 1 per stored entry) and by
/// augmented graphs, whose rewired entries may carry multiplicity > 1.
pub trait Neighborhoods {
    fn num_nodes(&self) -> usize;

    /// Calls `f(j, multiplicity)` for every stored neighbor of `i`.
    fn for_each_neighbor(&self, i: usize, f: &mut dyn FnMut(usize, u64));

    /// Total multiplicity of the neighbors of `i`.
    fn degree_of(&self, i: usize) -> u64 {
        let mut d = 0;
        self.for_each_neighbor(i, &mut |_, m| d += m);
        d
    }
}

impl Graph {
    /// Builds a symmetric, deduplicated, self-loop-free graph from undirected
    /// pairs. Pairs are accepted in either orientation.
    pub fn from_undirected_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut directed = Vec::with_capacity(edges.len() * 2);
        for &(a, b) in edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::EndpointOutOfRange {
                    src: a,
                    dst: b,
                    num_nodes,
                });
            }
            if a != b {
                directed.push((a, b));
                directed.push((b, a));
            }
        }
        directed.sort_unstable();
        directed.dedup();
        Ok(Self::from_sorted_entries(
            num_nodes,
            directed.into_iter().map(|(a, b)| (a, b, 1.0)),
        ))
    }

    /// Builds a graph from directed weighted entries. Entries are sorted;
    /// duplicates are kept as separate entries.
    pub fn from_weighted_entries(
        num_nodes: usize,
        mut entries: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        for &(a, b, w) in &entries {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::EndpointOutOfRange {
                    src: a,
                    dst: b,
                    num_nodes,
                });
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Data(format!("edge ({a}, {b}) has weight {w}")));
            }
        }
        entries.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        Ok(Self::from_sorted_entries(num_nodes, entries.into_iter()))
    }

    fn from_sorted_entries(
        num_nodes: usize,
        entries: impl Iterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut row_offsets = vec![0usize; num_nodes + 1];
        let mut col_indices = Vec::new();
        let mut edge_weights = Vec::new();
        for (a, b, w) in entries {
            row_offsets[a + 1] += 1;
            col_indices.push(b);
            edge_weights.push(w);
        }
        for i in 0..num_nodes {
            row_offsets[i + 1] += row_offsets[i];
        }
        Graph {
            num_nodes,
            row_offsets,
            col_indices,
            edge_weights,
        }
    }

    pub fn empty(num_nodes: usize) -> Self {
        Graph {
            num_nodes,
            row_offsets: vec![0; num_nodes + 1],
            col_indices: Vec::new(),
            edge_weights: Vec::new(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of stored directed entries.
    pub fn num_entries(&self) -> usize {
        self.col_indices.len()
    }

    /// Number of undirected edges, assuming a symmetric graph without self-loops.
    pub fn num_undirected_edges(&self) -> usize {
        self.col_indices.len() / 2
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn edge_weights(&self) -> &[f64] {
        &self.edge_weights
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    #[inline]
    pub fn weights(&self, i: usize) -> &[f64] {
        &self.edge_weights[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes).map(|i| self.degree(i)).collect()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    /// Directed entries `(i, j)` in row order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.num_nodes).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .zip(self.weights(i))
                .map(move |(&j, &w)| (i, j, w))
        })
    }

    /// Undirected edges `(i, j)` with `i < j`.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        self.entries()
            .filter(|&(i, j, _)| i < j)
            .map(|(i, j, _)| (i, j))
            .collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.entries().all(|(i, j, _)| self.has_edge(j, i))
    }

    /// Symmetric normalization with self-loops: `D̃^{-1/2} (A + I) D̃^{-1/2}`,
    /// where `D̃` is the degree of `A + I`. Existing self-loops are replaced
    /// by the unit loop.
    pub fn gcn_normalize(&self) -> Graph {
        let aug_degree: Vec<f64> = (0..self.num_nodes)
            .map(|i| (self.neighbors(i).iter().filter(|&&j| j != i).count() + 1) as f64)
            .collect();
        let inv_sqrt: Vec<f64> = aug_degree.iter().map(|d| 1.0 / d.sqrt()).collect();
        let mut entries = Vec::with_capacity(self.num_entries() + self.num_nodes);
        for i in 0..self.num_nodes {
            let mut self_done = false;
            for &j in self.neighbors(i) {
                if j == i {
                    continue;
                }
                if j > i && !self_done {
                    entries.push((i, i, inv_sqrt[i] * inv_sqrt[i]));
                    self_done = true;
                }
                entries.push((i, j, inv_sqrt[i] * inv_sqrt[j]));
            }
            if !self_done {
                entries.push((i, i, inv_sqrt[i] * inv_sqrt[i]));
            }
        }
        Self::from_sorted_entries(self.num_nodes, entries.into_iter())
    }

    /// `A + I` with unit weights (sum aggregation including the centre node).
    pub fn with_unit_self_loops(&self) -> Graph {
        let mut entries: Vec<(usize, usize, f64)> = self
            .entries()
            .filter(|&(i, j, _)| i != j)
            .map(|(i, j, _)| (i, j, 1.0))
            .chain((0..self.num_nodes).map(|i| (i, i, 1.0)))
            .collect();
        entries.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        Self::from_sorted_entries(self.num_nodes, entries.into_iter())
    }

    /// Row-mean operator `D⁻¹ A`; rows of isolated nodes stay empty.
    pub fn row_mean(&self) -> Graph {
        let entries = (0..self.num_nodes).flat_map(|i| {
            let d = self.degree(i) as f64;
            self.neighbors(i).iter().map(move |&j| (i, j, 1.0 / d))
        });
        Self::from_sorted_entries(self.num_nodes, entries.collect::<Vec<_>>().into_iter())
    }

    /// Sparse-dense product `self · h`.
    pub fn spmm(&self, h: &Matrix) -> Result<Matrix> {
        if h.rows() != self.num_nodes {
            return Err(Error::shape(
                "spmm",
                format!("{} nodes vs {} feature rows", self.num_nodes, h.rows()),
            ));
        }
        let cols = h.cols();
        let mut out = Matrix::zeros(self.num_nodes, cols);
        if cols == 0 {
            return Ok(out);
        }
        use rayon::prelude::*;
        let kernel = |(i, out_row): (usize, &mut [f64])| {
            for (&j, &w) in self.neighbors(i).iter().zip(self.weights(i)) {
                for (o, &v) in out_row.iter_mut().zip(h.row(j)) {
                    *o += w * v;
                }
            }
        };
        if self.num_nodes >= 256 {
            out.as_mut_slice()
                .par_chunks_mut(cols)
                .enumerate()
                .for_each(kernel);
        } else {
            out.as_mut_slice().chunks_mut(cols).enumerate().for_each(kernel);
        }
        Ok(out)
    }

    /// Transposed product `selfᵀ · g`, accumulated sequentially in entry order.
    pub fn spmm_transpose(&self, g: &Matrix) -> Result<Matrix> {
        if g.rows() != self.num_nodes {
            return Err(Error::shape(
                "spmm_transpose",
                format!("{} nodes vs {} gradient rows", self.num_nodes, g.rows()),
            ));
        }
        let cols = g.cols();
        let mut out = Matrix::zeros(self.num_nodes, cols);
        for i in 0..self.num_nodes {
            let src = g.row(i);
            for (&j, &w) in self.neighbors(i).iter().zip(self.weights(i)) {
                for (o, &v) in out.row_mut(j).iter_mut().zip(src) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }

    /// Relabels nodes: node `i` of `self` becomes node `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Graph {
        let entries: Vec<_> = self
            .entries()
            .map(|(i, j, w)| (perm[i], perm[j], w))
            .collect();
        Graph::from_weighted_entries(self.num_nodes, entries)
            .expect("permutation keeps endpoints in range")
    }
}

impl Neighborhoods for Graph {
    fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    fn for_each_neighbor(&self, i: usize, f: &mut dyn FnMut(usize, u64)) {
        for &j in self.neighbors(i) {
            f(j, 1);
        }
    }
}
