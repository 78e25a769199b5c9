//! Immutable temporal attributed graphs.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

pub type NodeId = usize;
pub type ClassId = usize;
/// Integer time step, e.g. a publication year.
pub type Timestamp = i64;

/// Label strings mapped onto contiguous class ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct ClassVocabulary {
    names: Vec<String>,
    first_seen: Vec<Option<Timestamp>>,
    index: HashMap<String, ClassId>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    names: Vec<String>,
    first_seen: Vec<Option<Timestamp>>,
}

impl TryFrom<VocabRepr> for ClassVocabulary {
    type Error = Error;

    fn try_from(repr: VocabRepr) -> Result<Self> {
        if repr.first_seen.len() != repr.names.len() {
            return Err(Error::InvalidArgument("first_seen length mismatch".into()));
        }
        let mut vocab = ClassVocabulary::new(repr.names)?;
        vocab.first_seen = repr.first_seen;
        Ok(vocab)
    }
}

impl From<ClassVocabulary> for VocabRepr {
    fn from(v: ClassVocabulary) -> Self {
        VocabRepr {
            names: v.names,
            first_seen: v.first_seen,
        }
    }
}

impl ClassVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(names.len());
        for (id, name) in names.iter().enumerate() {
            if index.insert(name.clone(), id).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate class label {name:?}")));
            }
        }
        let first_seen = vec![None; names.len()];
        Ok(Self {
            names,
            first_seen,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ClassId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ClassId) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Earliest timestamp of any node carrying this class.
    pub fn first_seen(&self, id: ClassId) -> Option<Timestamp> {
        self.first_seen[id]
    }

    fn record_seen(&mut self, node_time: &[Timestamp], labels: &[ClassId]) {
        self.first_seen = vec![None; self.names.len()];
        for (&t, &y) in node_time.iter().zip(labels) {
            let slot = &mut self.first_seen[y];
            *slot = Some(slot.map_or(t, |s| s.min(t)));
        }
    }
}

/// Undirected attributed graph whose nodes carry a timestamp and a class
/// label. Adjacency is stored as symmetric CSR without self-loops; feature
/// rows are L2-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalGraph {
    node_time: Vec<Timestamp>,
    labels: Vec<ClassId>,
    features: CsrMatrix,
    offsets: Vec<usize>,
    neighbors: Vec<NodeId>,
    class_vocab: ClassVocabulary,
}

impl TemporalGraph {
    /// Validates and assembles a graph. Edges are symmetrized, duplicates
    /// and self-loops dropped, feature rows L2-normalized.
    pub fn new(
        node_time: Vec<Timestamp>,
        labels: Vec<ClassId>,
        class_vocab: ClassVocabulary,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
        mut features: CsrMatrix,
    ) -> Result<Self> {
        let n = node_time.len();
        if labels.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {n} nodes",
                labels.len()
            )));
        }
        if features.rows() != n {
            return Err(Error::InvalidArgument(format!(
                "{} feature rows for {n} nodes",
                features.rows()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= class_vocab.len()) {
            return Err(Error::InvalidArgument(format!(
                "label id {y} outside vocabulary of size {}",
                class_vocab.len()
            )));
        }
        let mut adj: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        for (u, v) in edges {
            for id in [u, v] {
                if id >= n {
                    return Err(Error::UnknownNode { id, num_nodes: n });
                }
            }
            if u != v {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        let (offsets, neighbors) = pack_adjacency(adj);
        features.normalize_rows_l2();
        let mut class_vocab = class_vocab;
        class_vocab.record_seen(&node_time, &labels);
        Ok(Self {
            node_time,
            labels,
            features,
            offsets,
            neighbors,
            class_vocab,
        })
    }

    /// Graph with structure and timestamps only: a single class and
    /// all-zero one-dimensional features.
    pub fn from_structure(
        node_time: Vec<Timestamp>,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self> {
        let n = node_time.len();
        Self::new(
            node_time,
            vec![0; n],
            ClassVocabulary::new(vec!["0".into()])?,
            edges,
            CsrMatrix::from_triplets(n, 1, [])?,
        )
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.node_time.len()
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_vocab.len()
    }

    #[inline]
    pub fn time(&self, u: NodeId) -> Timestamp {
        self.node_time[u]
    }

    pub fn node_times(&self) -> &[Timestamp] {
        &self.node_time
    }

    #[inline]
    pub fn label(&self, u: NodeId) -> ClassId {
        self.labels[u]
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn features(&self) -> &CsrMatrix {
        &self.features
    }

    pub fn class_vocab(&self) -> &ClassVocabulary {
        &self.class_vocab
    }

    /// Sorted neighbor ids of `u`, without duplicates or `u` itself.
    #[inline]
    pub fn neighbors(&self, u: NodeId) -> &[NodeId] {
        &self.neighbors[self.offsets[u]..self.offsets[u + 1]]
    }

    #[inline]
    pub fn degree(&self, u: NodeId) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        (0..self.num_nodes()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .filter(move |&&v| u < v)
                .map(move |&v| (u, v))
        })
    }

    /// Distinct timestamps in ascending order.
    pub fn timestamps(&self) -> Vec<Timestamp> {
        let mut ts = self.node_time.clone();
        ts.sort_unstable();
        ts.dedup();
        ts
    }

    /// All nodes `v != u` within `k` hops of `u`, sorted.
    pub fn k_hop_neighborhood(&self, u: NodeId, k: usize) -> Vec<NodeId> {
        let mut scratch = BfsScratch::new(self.num_nodes());
        let mut out = scratch.k_hop(self, u, k).to_vec();
        out.sort_unstable();
        out
    }

    /// Induced subgraph on nodes with `t_lo <= time <= t_hi`. Local ids follow
    /// the original order.
    pub fn window_subgraph(&self, t_lo: Timestamp, t_hi: Timestamp) -> Window {
        let original_ids: Vec<NodeId> = (0..self.num_nodes())
            .filter(|&u| (t_lo..=t_hi).contains(&self.node_time[u]))
            .collect();
        self.induced_subgraph(original_ids)
    }

    /// Induced subgraph on `ids`, which must be strictly increasing.
    pub fn induced_subgraph(&self, original_ids: Vec<NodeId>) -> Window {
        debug_assert!(original_ids.windows(2).all(|w| w[0] < w[1]));
        let mut local = vec![usize::MAX; self.num_nodes()];
        for (new, &old) in original_ids.iter().enumerate() {
            local[old] = new;
        }
        let mut offsets = Vec::with_capacity(original_ids.len() + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for &old in &original_ids {
            // Local ids preserve order, so mapped neighbor lists stay sorted.
            neighbors.extend(
                self.neighbors(old)
                    .iter()
                    .map(|&v| local[v])
                    .filter(|&v| v != usize::MAX),
            );
            offsets.push(neighbors.len());
        }
        let graph = TemporalGraph {
            node_time: original_ids.iter().map(|&u| self.node_time[u]).collect(),
            labels: original_ids.iter().map(|&u| self.labels[u]).collect(),
            features: self.features.select_rows(&original_ids),
            offsets,
            neighbors,
            class_vocab: self.class_vocab.clone(),
        };
        Window {
            graph,
            original_ids,
        }
    }

    /// Relabels nodes so that old node `u` becomes `perm[u]`.
    pub fn permuted(&self, perm: &[NodeId]) -> Result<Self> {
        let n = self.num_nodes();
        let mut inverse = vec![usize::MAX; n];
        for (old, &new) in perm.iter().enumerate() {
            if new >= n || inverse[new] != usize::MAX {
                return Err(Error::InvalidArgument("not a permutation".into()));
            }
            inverse[new] = old;
        }
        let node_time = inverse.iter().map(|&o| self.node_time[o]).collect();
        let labels = inverse.iter().map(|&o| self.labels[o]).collect();
        let features = self.features.select_rows(&inverse);
        let edges: Vec<_> = self.edges().map(|(u, v)| (perm[u], perm[v])).collect();
        Self::new(node_time, labels, self.class_vocab.clone(), edges, features)
    }
}

fn pack_adjacency(adj: Vec<Vec<NodeId>>) -> (Vec<usize>, Vec<NodeId>) {
    let mut offsets = Vec::with_capacity(adj.len() + 1);
    let mut neighbors = Vec::new();
    offsets.push(0);
    for mut list in adj {
        list.sort_unstable();
        list.dedup();
        neighbors.extend(list);
        offsets.push(neighbors.len());
    }
    (offsets, neighbors)
}

/// An induced subgraph together with the original ids of its nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub graph: TemporalGraph,
    /// `original_ids[local] = id in the parent graph`; strictly increasing.
    pub original_ids: Vec<NodeId>,
}

impl Window {
    pub fn local_id(&self, original: NodeId) -> Option<NodeId> {
        self.original_ids.binary_search(&original).ok()
    }

    pub fn is_empty(&self) -> bool {
        self.original_ids.is_empty()
    }
}

/// Reusable breadth-first search buffers. Visited marks are generation
/// stamps so repeated searches need no clearing.
pub(crate) struct BfsScratch {
    stamp: Vec<u32>,
    generation: u32,
    frontier: Vec<NodeId>,
    next: Vec<NodeId>,
    found: Vec<NodeId>,
}

impl BfsScratch {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            stamp: vec![0; n],
            generation: 0,
            frontier: Vec::new(),
            next: Vec::new(),
            found: Vec::new(),
        }
    }

    /// Nodes at distance 1..=k from `u`, in BFS order.
    pub(crate) fn k_hop(&mut self, g: &TemporalGraph, u: NodeId, k: usize) -> &[NodeId] {
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.generation = 1;
        }
        let gen = self.generation;
        self.found.clear();
        self.frontier.clear();
        self.frontier.push(u);
        self.stamp[u] = gen;
        for _ in 0..k {
            self.next.clear();
            for &x in &self.frontier {
                for &y in g.neighbors(x) {
                    if self.stamp[y] != gen {
                        self.stamp[y] = gen;
                        self.next.push(y);
                    }
                }
            }
            if self.next.is_empty() {
                break;
            }
            self.found.extend_from_slice(&self.next);
            std::mem::swap(&mut self.frontier, &mut self.next);
        }
        &self.found
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn path(n: usize) -> TemporalGraph {
        TemporalGraph::from_structure(
            (0..n as i64).collect(),
            (1..n).map(|i| (i - 1, i)),
        )
        .unwrap()
    }

    #[test]
    fn degree_sequence_after_load() {
        let g = TemporalGraph::from_structure(vec![1, 2, 3], [(0, 1)]).unwrap();
        let degrees: Vec<_> = (0..3).map(|u| g.degree(u)).collect();
        assert_eq!(degrees, [1, 1, 0]);
    }

    #[test]
    fn unknown_node_in_edge_list() {
        let err = TemporalGraph::from_structure(vec![1, 2, 3], [(0, 99)]).unwrap_err();
        assert!(err.to_string().contains("unknown node id"));
    }

    #[test]
    fn duplicates_and_self_loops_collapse() {
        let g = TemporalGraph::from_structure(vec![0, 0], [(0, 1), (1, 0), (0, 1), (1, 1)]).unwrap();
        assert_eq!(g.neighbors(0), [1]);
        assert_eq!(g.neighbors(1), [0]);
        assert_eq!(g.num_edges(), 1);
    }

    #[test]
    fn neighbors_of_path_and_isolated() {
        let g = path(3);
        assert_eq!(g.neighbors(1), [0, 2]);
        let iso = TemporalGraph::from_structure(vec![0], []).unwrap();
        assert!(iso.neighbors(0).is_empty());
    }

    #[test]
    fn k_hop_examples() {
        assert_eq!(path(4).k_hop_neighborhood(0, 2), [1, 2]);
        let iso = TemporalGraph::from_structure(vec![0], []).unwrap();
        assert!(iso.k_hop_neighborhood(0, 3).is_empty());
        let k4 = TemporalGraph::from_structure(
            vec![0; 4],
            [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
        )
        .unwrap();
        assert_eq!(k4.k_hop_neighborhood(0, 1), [1, 2, 3]);
    }

    #[test]
    fn window_examples() {
        let g = path(4).window_subgraph(1, 2);
        assert_eq!(g.graph.num_nodes(), 2);
        assert_eq!(g.original_ids, [1, 2]);
        assert_eq!(g.graph.neighbors(0), [1]);

        let full = path(4);
        let w = full.window_subgraph(Timestamp::MIN, Timestamp::MAX);
        assert_eq!(w.graph, full);
        assert_eq!(w.original_ids, [0, 1, 2, 3]);

        let empty = full.window_subgraph(10, 20);
        assert!(empty.is_empty());
        assert_eq!(empty.graph.num_edges(), 0);
    }

    #[test]
    fn features_are_normalized_at_load() {
        let feats = CsrMatrix::from_triplets(2, 2, [(0, 0, 3.0), (0, 1, 4.0)]).unwrap();
        let g = TemporalGraph::new(
            vec![0, 0],
            vec![0, 0],
            ClassVocabulary::new(vec!["a".into()]).unwrap(),
            [],
            feats,
        )
        .unwrap();
        assert!((g.features().row_l2_norm(0) - 1.0).abs() < 1e-12);
        assert_eq!(g.features().row_l2_norm(1), 0.0);
        assert_eq!(g.class_vocab().first_seen(0), Some(0));
    }

    fn arb_graph() -> impl Strategy<Value = (Vec<i64>, Vec<(usize, usize)>)> {
        (1usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec(0i64..8, n),
                proptest::collection::vec((0..n, 0..n), 0..(3 * n)),
            )
        })
    }

    fn brute_bfs(n: usize, edges: &[(usize, usize)], u: usize, k: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; n];
        dist[u] = 0;
        for d in 0..k {
            for &(a, b) in edges {
                if a == b {
                    continue;
                }
                if dist[a] == d && dist[b] == usize::MAX {
                    dist[b] = d + 1;
                }
                if dist[b] == d && dist[a] == usize::MAX {
                    dist[a] = d + 1;
                }
            }
        }
        (0..n).filter(|&v| v != u && dist[v] <= k).collect()
    }

    proptest! {
        #[test]
        fn adjacency_is_symmetric_and_matches_edge_list((times, edges) in arb_graph()) {
            let n = times.len();
            let g = TemporalGraph::from_structure(times, edges.clone()).unwrap();
            for u in 0..n {
                for v in 0..n {
                    let listed = u != v && edges.iter().any(|&(a, b)| (a, b) == (u, v) || (a, b) == (v, u));
                    prop_assert_eq!(g.neighbors(u).contains(&v), listed);
                    prop_assert_eq!(g.neighbors(u).contains(&v), g.neighbors(v).contains(&u));
                }
                prop_assert!(g.neighbors(u).windows(2).all(|w| w[0] < w[1]));
            }
        }

        #[test]
        fn k_hop_matches_brute_force((times, edges) in arb_graph(), k in 1usize..4) {
            let n = times.len();
            let g = TemporalGraph::from_structure(times, edges.clone()).unwrap();
            for u in 0..n {
                prop_assert_eq!(g.k_hop_neighborhood(u, k), brute_bfs(n, &edges, u, k));
            }
        }

        #[test]
        fn window_is_filtered_edge_list((times, edges) in arb_graph(), a in 0i64..8, len in 0i64..8) {
            let g = TemporalGraph::from_structure(times.clone(), edges).unwrap();
            let w = g.window_subgraph(a, a + len);
            let inside = |u: usize| (a..=a + len).contains(&times[u]);
            let mut expected: Vec<_> = g.edges().filter(|&(u, v)| inside(u) && inside(v)).collect();
            expected.sort_unstable();
            let mut got: Vec<_> = w.graph.edges()
                .map(|(u, v)| (w.original_ids[u], w.original_ids[v]))
                .collect();
            got.sort_unstable();
            prop_assert_eq!(got, expected);

            // widening the window never drops nodes
            let wider = g.window_subgraph(a - 1, a + len);
            prop_assert!(w.original_ids.iter().all(|u| wider.original_ids.contains(u)));
        }
    }
}
