//! Search-based counterfactual matching and bias-offsetting rewiring.
//!
//! A node's counterfactual is the nearest node, by squared Euclidean distance
//! over the matching columns, that has the opposite sensitive value and lies
//! within the node's `k` nearest neighbors. Rewiring then replaces every
//! same-group edge `(i, j)` by `(i, cf(j))`, so the centre node aggregates
//! from the other group while its degree is unchanged.
//!
//! Also hosts the two baseline augmentations, edge dropping and feature
//! masking.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Sensitive;
use crate::error::{Error, Result};
use crate::graph::{Graph, Neighborhoods};
use crate::tensor::Matrix;

/// Query nodes handled per parallel work item in the kNN search.
const QUERY_BLOCK: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterfactualMap {
    k: usize,
    entries: Vec<Option<usize>>,
}

impl CounterfactualMap {
    pub fn new(k: usize, entries: Vec<Option<usize>>) -> Self {
        CounterfactualMap { k, entries }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    #[inline]
    pub fn get(&self, v: usize) -> Option<usize> {
        self.entries[v]
    }

    pub fn entries(&self) -> &[Option<usize>] {
        &self.entries
    }

    pub fn num_found(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    /// CSV with header `node,counterfactual`; absent entries leave the
    /// second field empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node,counterfactual\n");
        for (v, cf) in self.entries.iter().enumerate() {
            match cf {
                Some(u) => writeln!(out, "{v},{u}").unwrap(),
                None => writeln!(out, "{v},").unwrap(),
            }
        }
        out
    }

    pub fn from_csv(k: usize, text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (line_no, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let (node, cf) = line
                .split_once(',')
                .ok_or_else(|| Error::Data(format!("line {}: expected two fields", line_no + 1)))?;
            let node: usize = node
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("line {}: bad node", line_no + 1)))?;
            if node != entries.len() {
                return Err(Error::Data(format!("line {}: nodes out of order", line_no + 1)));
            }
            let cf = cf.trim();
            entries.push(if cf.is_empty() {
                None
            } else {
                Some(cf.parse().map_err(|_| {
                    Error::Data(format!("line {}: bad counterfactual", line_no + 1))
                })?)
            });
        }
        Ok(CounterfactualMap { k, entries })
    }
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
fn by_distance_then_id(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Indices of the `k` nearest other rows of `x` to row `q`, nearest first,
/// ties broken by smaller index.
fn k_nearest(x: &Matrix, q: usize, k: usize, scratch: &mut Vec<(f64, usize)>) -> usize {
    scratch.clear();
    let query = x.row(q);
    scratch.extend(
        (0..x.rows())
            .filter(|&u| u != q)
            .map(|u| (squared_distance(query, x.row(u)), u)),
    );
    let k = k.min(scratch.len());
    if k == 0 {
        return 0;
    }
    if k < scratch.len() {
        scratch.select_nth_unstable_by(k - 1, by_distance_then_id);
    }
    scratch[..k].sort_unstable_by(by_distance_then_id);
    k
}

/// Finds, for each node, the nearest opposite-group node among its `k`
/// nearest neighbors over all columns except `exclude`.
///
/// Features are expected to be standardized by the caller. `k = N - 1`
/// reduces to an unrestricted nearest opposite-group search.
pub fn find_counterfactuals(
    x: &Matrix,
    s: &Sensitive,
    k: usize,
    exclude: &[usize],
) -> Result<CounterfactualMap> {
    if k == 0 {
        return Err(Error::Config("counterfactual top-k must be at least 1".into()));
    }
    if x.rows() != s.len() {
        return Err(Error::shape(
            "find_counterfactuals",
            format!("{} feature rows vs {} sensitive values", x.rows(), s.len()),
        ));
    }
    let keep: Vec<usize> = (0..x.cols()).filter(|c| !exclude.contains(c)).collect();
    let projected = x.select_columns(&keep);
    let n = x.rows();
    let mut entries = vec![None; n];
    entries
        .par_chunks_mut(QUERY_BLOCK)
        .enumerate()
        .for_each(|(block, out)| {
            let mut scratch = Vec::with_capacity(n);
            for (offset, slot) in out.iter_mut().enumerate() {
                let v = block * QUERY_BLOCK + offset;
                let found = k_nearest(&projected, v, k, &mut scratch);
                *slot = scratch[..found]
                    .iter()
                    .find(|&&(_, u)| s.get(u) != s.get(v))
                    .map(|&(_, u)| u);
            }
        });
    Ok(CounterfactualMap { k, entries })
}

/// Origin of an entry in an [`AugmentedGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeFlag {
    /// Heterogeneous edge carried over unchanged.
    Kept,
    /// Homogeneous edge `(i, j)` redirected to `(i, cf(j))`.
    Rewired,
    /// Homogeneous edge whose endpoint has no counterfactual; carried over.
    Unresolved,
}

impl EdgeFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeFlag::Kept => "kept",
            EdgeFlag::Rewired => "rewired",
            EdgeFlag::Unresolved => "unresolved",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "kept" => Ok(EdgeFlag::Kept),
            "rewired" => Ok(EdgeFlag::Rewired),
            "unresolved" => Ok(EdgeFlag::Unresolved),
            other => Err(Error::Data(format!("unknown edge flag {other:?}"))),
        }
    }
}

/// One row entry of an augmented graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedEdge {
    pub dst: usize,
    pub weight: u64,
    pub flag: EdgeFlag,
}

/// Directed multigraph produced by counterfactual rewiring.
///
/// Entries of a row are sorted by `(dst, flag)` and unique on that pair;
/// parallel edges accumulate into `weight`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedGraph {
    row_offsets: Vec<usize>,
    edges: Vec<AugmentedEdge>,
}

impl AugmentedGraph {
    fn from_rows(rows: Vec<Vec<(usize, EdgeFlag)>>) -> Self {
        let mut row_offsets = Vec::with_capacity(rows.len() + 1);
        row_offsets.push(0);
        let mut edges = Vec::new();
        for mut row in rows {
            row.sort_unstable();
            let row_start = edges.len();
            for (dst, flag) in row {
                if edges.len() > row_start {
                    let last: &mut AugmentedEdge = edges.last_mut().unwrap();
                    if last.dst == dst && last.flag == flag {
                        last.weight += 1;
                        continue;
                    }
                }
                edges.push(AugmentedEdge {
                    dst,
                    weight: 1,
                    flag,
                });
            }
            row_offsets.push(edges.len());
        }
        AugmentedGraph { row_offsets, edges }
    }

    pub fn row(&self, i: usize) -> &[AugmentedEdge] {
        &self.edges[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    /// Neighbors of `i` with flag-merged integer weights, sorted by node.
    pub fn weighted_neighbors(&self, i: usize) -> Vec<(usize, u64)> {
        let mut out: Vec<(usize, u64)> = Vec::new();
        for e in self.row(i) {
            match out.last_mut() {
                Some((d, w)) if *d == e.dst => *w += e.weight,
                _ => out.push((e.dst, e.weight)),
            }
        }
        out
    }

    pub fn count_flag(&self, flag: EdgeFlag) -> u64 {
        self.edges
            .iter()
            .filter(|e| e.flag == flag)
            .map(|e| e.weight)
            .sum()
    }

    /// Weighted edge list, one `src dst weight flag` line per entry.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for i in 0..self.num_nodes() {
            for e in self.row(i) {
                writeln!(out, "{i} {} {} {}", e.dst, e.weight, e.flag.as_str()).unwrap();
            }
        }
        out
    }

    pub fn from_edge_list(num_nodes: usize, text: &str) -> Result<Self> {
        let mut rows = vec![Vec::new(); num_nodes];
        for (line_no, line) in text.lines().enumerate() {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.is_empty() {
                continue;
            }
            let bad = || Error::Data(format!("augmented edge line {}", line_no + 1));
            let [src, dst, weight, flag] = parts[..] else {
                return Err(bad());
            };
            let src: usize = src.parse().map_err(|_| bad())?;
            let dst: usize = dst.parse().map_err(|_| bad())?;
            let weight: u64 = weight.parse().map_err(|_| bad())?;
            if src >= num_nodes || dst >= num_nodes {
                return Err(Error::EndpointOutOfRange {
                    src,
                    dst,
                    num_nodes,
                });
            }
            let flag = EdgeFlag::parse(flag)?;
            rows[src].extend(std::iter::repeat_n((dst, flag), weight as usize));
        }
        Ok(Self::from_rows(rows))
    }
}

impl Neighborhoods for AugmentedGraph {
    fn num_nodes(&self) -> usize {
        self.row_offsets.len() - 1
    }

    fn for_each_neighbor(&self, i: usize, f: &mut dyn FnMut(usize, u64)) {
        for e in self.row(i) {
            f(e.dst, e.weight);
        }
    }
}

/// Rewires every same-group edge `(i, j)` to `(i, cf(j))`.
///
/// Heterogeneous edges are kept; same-group edges whose endpoint `j` has no
/// counterfactual are kept and flagged unresolved. Each node keeps its
/// original degree as total out-weight.
pub fn augment_graph(g: &Graph, s: &Sensitive, cf: &CounterfactualMap) -> Result<AugmentedGraph> {
    let n = g.num_nodes();
    if s.len() != n || cf.len() != n {
        return Err(Error::shape(
            "augment_graph",
            format!("{n} nodes, {} sensitive values, {} counterfactuals", s.len(), cf.len()),
        ));
    }
    let rows = (0..n)
        .map(|i| {
            g.neighbors(i)
                .iter()
                .map(|&j| {
                    if s.get(i) != s.get(j) {
                        (j, EdgeFlag::Kept)
                    } else if let Some(k) = cf.get(j) {
                        (k, EdgeFlag::Rewired)
                    } else {
                        (j, EdgeFlag::Unresolved)
                    }
                })
                .collect()
        })
        .collect();
    Ok(AugmentedGraph::from_rows(rows))
}

/// Removes each undirected edge independently with probability `p`.
pub fn edge_drop(g: &Graph, p: f64, seed: u64) -> Result<Graph> {
    check_probability(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kept: Vec<(usize, usize)> = g
        .undirected_edges()
        .into_iter()
        .filter(|_| rng.random::<f64>() >= p)
        .collect();
    Graph::from_undirected_edges(g.num_nodes(), &kept)
}

/// Zeroes each feature column independently with probability `p`.
pub fn feature_mask(x: &Matrix, p: f64, seed: u64) -> Result<Matrix> {
    check_probability(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masked: Vec<bool> = (0..x.cols()).map(|_| rng.random::<f64>() < p).collect();
    let mut out = x.clone();
    for r in 0..x.rows() {
        for (v, &m) in out.row_mut(r).iter_mut().zip(&masked) {
            if m {
                *v = 0.0;
            }
        }
    }
    Ok(out)
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("probability {p} outside [0, 1]")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::avg_heterogeneous_degree;

    fn s(v: &[u8]) -> Sensitive {
        Sensitive::new(v.to_vec()).unwrap()
    }

    fn line_features() -> Matrix {
        Matrix::from_vec(4, 1, vec![0.0, 0.1, 1.0, 1.1]).unwrap()
    }

    #[test]
    fn counterfactuals_top3() {
        let cf = find_counterfactuals(&line_features(), &s(&[0, 0, 1, 1]), 3, &[]).unwrap();
        assert_eq!(cf.entries(), &[Some(2), Some(2), Some(1), Some(1)]);
    }

    #[test]
    fn counterfactuals_top1_gated() {
        let cf = find_counterfactuals(&line_features(), &s(&[0, 0, 1, 1]), 1, &[]).unwrap();
        assert_eq!(cf.entries(), &[None, None, None, None]);
    }

    #[test]
    fn single_group_has_no_counterfactuals() {
        let cf = find_counterfactuals(&line_features(), &s(&[1, 1, 1, 1]), 3, &[]).unwrap();
        assert_eq!(cf.num_found(), 0);
    }

    #[test]
    fn excluded_columns_are_ignored() {
        // The second column alone would pair 0 with 3.
        let x = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![5.0, 9.0],
            vec![0.2, 9.0],
            vec![9.0, 0.0],
        ])
        .unwrap();
        let cf = find_counterfactuals(&x, &s(&[0, 0, 1, 1]), 3, &[1]).unwrap();
        assert_eq!(cf.get(0), Some(2));
    }

    #[test]
    fn ties_prefer_smaller_id() {
        let x = Matrix::from_vec(3, 1, vec![0.0, 1.0, -1.0]).unwrap();
        let cf = find_counterfactuals(&x, &s(&[0, 1, 1]), 2, &[]).unwrap();
        assert_eq!(cf.get(0), Some(1));
    }

    #[test]
    fn zero_k_is_rejected() {
        assert!(find_counterfactuals(&line_features(), &s(&[0, 0, 1, 1]), 0, &[]).is_err());
    }

    #[test]
    fn rewiring_example() {
        let g = Graph::from_undirected_edges(3, &[(0, 1), (0, 2)]).unwrap();
        let cf = CounterfactualMap::new(1, vec![None, Some(2), None]);
        let aug = augment_graph(&g, &s(&[0, 0, 1]), &cf).unwrap();
        assert_eq!(aug.weighted_neighbors(0), vec![(2, 2)]);
        assert_eq!(
            aug.row(0),
            &[
                AugmentedEdge { dst: 2, weight: 1, flag: EdgeFlag::Kept },
                AugmentedEdge { dst: 2, weight: 1, flag: EdgeFlag::Rewired },
            ]
        );
        // Node 1's only neighbor (0) has no counterfactual.
        assert_eq!(aug.row(1)[0].flag, EdgeFlag::Unresolved);
        assert!(avg_heterogeneous_degree(&aug, &s(&[0, 0, 1])) > avg_heterogeneous_degree(&g, &s(&[0, 0, 1])));
    }

    #[test]
    fn heterogeneous_graph_is_unchanged() {
        let g = Graph::from_undirected_edges(4, &[(0, 2), (0, 3), (1, 2)]).unwrap();
        let sens = s(&[0, 0, 1, 1]);
        let cf = CounterfactualMap::new(1, vec![Some(2), Some(3), Some(0), Some(1)]);
        let aug = augment_graph(&g, &sens, &cf).unwrap();
        for i in 0..4 {
            let expected: Vec<(usize, u64)> = g.neighbors(i).iter().map(|&j| (j, 1)).collect();
            assert_eq!(aug.weighted_neighbors(i), expected);
            assert!(aug.row(i).iter().all(|e| e.flag == EdgeFlag::Kept));
        }
    }

    #[test]
    fn augmented_edge_list_round_trip() {
        let g = Graph::from_undirected_edges(3, &[(0, 1), (0, 2), (1, 2)]).unwrap();
        let cf = CounterfactualMap::new(2, vec![Some(2), Some(2), Some(0)]);
        let aug = augment_graph(&g, &s(&[0, 0, 1]), &cf).unwrap();
        let text = aug.to_edge_list();
        assert_eq!(AugmentedGraph::from_edge_list(3, &text).unwrap(), aug);
        assert!(text.contains("0 2 2 rewired") || text.contains("0 2 1 rewired"));
    }

    #[test]
    fn counterfactual_csv_round_trip() {
        let cf = CounterfactualMap::new(3, vec![Some(2), None, Some(0)]);
        let text = cf.to_csv();
        assert_eq!(text, "node,counterfactual\n0,2\n1,\n2,0\n");
        assert_eq!(CounterfactualMap::from_csv(3, &text).unwrap(), cf);
    }

    #[test]
    fn edge_drop_extremes() {
        let g = Graph::from_undirected_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        assert_eq!(edge_drop(&g, 0.0, 1).unwrap(), g);
        assert_eq!(edge_drop(&g, 1.0, 1).unwrap().num_entries(), 0);
        assert_eq!(edge_drop(&g, 0.5, 9).unwrap(), edge_drop(&g, 0.5, 9).unwrap());
        assert!(edge_drop(&g, 1.5, 0).is_err());
    }

    #[test]
    fn edge_drop_rate_is_binomial() {
        let edges: Vec<(usize, usize)> = (0..10_000).map(|i| (i, i + 1)).collect();
        let g = Graph::from_undirected_edges(10_001, &edges).unwrap();
        let dropped = g.num_undirected_edges() - edge_drop(&g, 0.5, 42).unwrap().num_undirected_edges();
        // 3σ band for Binomial(10000, 0.5): σ = 50.
        assert!((dropped as f64 - 5000.0).abs() <= 150.0, "dropped {dropped}");
        let out = edge_drop(&g, 0.5, 42).unwrap();
        assert!(out.is_symmetric());
    }

    #[test]
    fn feature_mask_extremes() {
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.0], vec![4.0, 5.0, -6.0]]).unwrap();
        assert_eq!(feature_mask(&x, 0.0, 3).unwrap(), x);
        assert!(feature_mask(&x, 1.0, 3).unwrap().as_slice().iter().all(|&v| v == 0.0));
        let m = feature_mask(&x, 0.5, 11).unwrap();
        for c in 0..3 {
            let col = m.column(c);
            assert!(col == x.column(c) || col.iter().all(|&v| v == 0.0));
        }
    }
}
