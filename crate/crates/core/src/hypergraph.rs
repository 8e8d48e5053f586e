//! Immutable sparse hypergraph with node-major and edge-major CSR views.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::segment::SegmentMap;

/// Incidence structure of `N` nodes and `M` hyperedges.
///
/// The sorted pair list is the source of truth. Both CSR views are derived
/// from it at construction and exposed as [`SegmentMap`]s so that the
/// propagation kernels can use them directly:
///
/// * [`Hypergraph::edge_map`] groups node rows by hyperedge (node → hyperedge pass),
/// * [`Hypergraph::node_map`] groups hyperedge rows by node (hyperedge → node pass).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hypergraph {
    num_nodes: usize,
    num_edges: usize,
    pairs: Vec<(usize, usize)>,
    by_node: Arc<SegmentMap>,
    by_edge: Arc<SegmentMap>,
}

impl Hypergraph {
    /// Builds the hypergraph from `(node, hyperedge)` incidence pairs.
    pub fn new(mut pairs: Vec<(usize, usize)>, num_nodes: usize, num_edges: usize) -> Result<Self> {
        for &(v, e) in &pairs {
            if v >= num_nodes {
                return Err(Error::OutOfRangeIndex {
                    what: "node",
                    index: v,
                    bound: num_nodes,
                });
            }
            if e >= num_edges {
                return Err(Error::OutOfRangeIndex {
                    what: "hyperedge",
                    index: e,
                    bound: num_edges,
                });
            }
        }
        pairs.sort_unstable();
        if let Some(w) = pairs.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicatePair {
                node: w[0].0,
                edge: w[0].1,
            });
        }

        // Pairs are sorted by node, so the node-major view falls out directly.
        let mut node_offsets = vec![0usize; num_nodes + 1];
        for &(v, _) in &pairs {
            node_offsets[v + 1] += 1;
        }
        for i in 0..num_nodes {
            node_offsets[i + 1] += node_offsets[i];
        }
        let node_indices = pairs.iter().map(|&(_, e)| e).collect();
        let by_node = SegmentMap::from_csr(num_edges, node_offsets, node_indices);
        let by_edge = by_node.transpose();

        Ok(Self {
            num_nodes,
            num_edges,
            pairs,
            by_node: Arc::new(by_node),
            by_edge: Arc::new(by_edge),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    /// Total incidence count `E`.
    pub fn num_incidences(&self) -> usize {
        self.pairs.len()
    }

    /// Incidence pairs in lexicographic order.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Sorted hyperedges incident to node `v`.
    pub fn edges_of(&self, v: usize) -> &[usize] {
        self.by_node.segment(v)
    }

    /// Sorted member nodes of hyperedge `e`.
    pub fn members(&self, e: usize) -> &[usize] {
        self.by_edge.segment(e)
    }

    pub fn node_degree(&self, v: usize) -> usize {
        self.by_node.size(v)
    }

    pub fn edge_degree(&self, e: usize) -> usize {
        self.by_edge.size(e)
    }

    /// One segment per node listing its incident hyperedges (rows = hyperedges).
    pub fn node_map(&self) -> &Arc<SegmentMap> {
        &self.by_node
    }

    /// One segment per hyperedge listing its members (rows = nodes).
    pub fn edge_map(&self) -> &Arc<SegmentMap> {
        &self.by_edge
    }

    pub fn empty_edges(&self) -> Vec<usize> {
        self.by_edge.empty_segments()
    }

    /// Relabels nodes by `node_perm[old] = new` and hyperedges by `edge_perm[old] = new`.
    pub fn permuted(&self, node_perm: &[usize], edge_perm: &[usize]) -> Result<Self> {
        let pairs = self
            .pairs
            .iter()
            .map(|&(v, e)| (node_perm[v], edge_perm[e]))
            .collect();
        Self::new(pairs, self.num_nodes, self.num_edges)
    }

    /// Dense `N×M` 0/1 incidence matrix, row-major.
    pub fn dense_incidence(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.num_nodes * self.num_edges];
        for &(v, e) in &self.pairs {
            out[v * self.num_edges + e] = 1.0;
        }
        out
    }
}
