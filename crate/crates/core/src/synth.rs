//! Seeded synthetic temporal graphs with block structure, bag-of-words
//! features and emerging classes.

use std::collections::BTreeMap;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ClassId, ClassVocabulary, NodeId, TemporalGraph, Timestamp};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_nodes: usize,
    /// Nodes are spread evenly over years `0..n_years`.
    pub n_years: u32,
    /// Classes `0..n_initial_classes` exist from year 0.
    pub n_initial_classes: usize,
    /// First year of each further class. Keys must be
    /// `n_initial_classes, n_initial_classes + 1, ...`.
    pub emergence: BTreeMap<ClassId, u32>,
    pub seed: u64,
    /// Vocabulary size of the bag-of-words features.
    pub feature_dim: usize,
    /// Words in each class topic.
    pub topic_size: usize,
    pub words_per_node: usize,
    /// Probability that a word is drawn from the node's class topic rather
    /// than uniformly from the vocabulary.
    pub feature_signal: f64,
    /// Links drawn from each new node to earlier nodes.
    pub links_per_node: usize,
    /// Probability that a link targets a node of the same class.
    pub intra_class_prob: f64,
    /// Weight of linking within the node's own year.
    pub same_year_weight: f64,
    /// A link reaches back `d >= 1` years with weight `recency_decay^(d-1)`.
    pub recency_decay: f64,
    /// Sampling weight of an emerged class relative to an initial one.
    pub emerging_weight: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_nodes: 5000,
            n_years: 10,
            n_initial_classes: 4,
            emergence: BTreeMap::from([(4, 6)]),
            seed: 0,
            feature_dim: 256,
            topic_size: 24,
            words_per_node: 12,
            feature_signal: 0.3,
            links_per_node: 2,
            intra_class_prob: 0.8,
            same_year_weight: 0.1,
            recency_decay: 0.9,
            emerging_weight: 2.0,
        }
    }
}

impl SynthConfig {
    pub fn num_classes(&self) -> usize {
        self.n_initial_classes + self.emergence.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_years == 0 {
            return bad("n_years must be positive".into());
        }
        if self.n_initial_classes == 0 {
            return bad("at least one initial class is required".into());
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        for (i, (&class, &year)) in self.emergence.iter().enumerate() {
            if class != self.n_initial_classes + i {
                return bad(format!(
                    "emerging class ids must continue from {} without gaps, got {class}",
                    self.n_initial_classes
                ));
            }
            if year >= self.n_years {
                return bad(format!(
                    "class {class} emerges in year {year}, beyond the last year {}",
                    self.n_years - 1
                ));
            }
        }
        let emerging_per_year = self.emergence.values().fold(BTreeMap::new(), |mut m, y| {
            *m.entry(*y).or_insert(0usize) += 1;
            m
        });
        if let Some((y, k)) = emerging_per_year
            .iter()
            .find(|(&y, &k)| k > self.nodes_in_year(y) || (y == 0 && k + self.n_initial_classes > self.nodes_in_year(0)))
        {
            return bad(format!("year {y} has too few nodes for its {k} emerging classes"));
        }
        if !(0.0..=1.0).contains(&self.intra_class_prob) {
            return bad("intra_class_prob must lie in [0, 1]".into());
        }
        if !(self.same_year_weight >= 0.0 && self.same_year_weight.is_finite()) {
            return bad("same_year_weight must be non-negative".into());
        }
        if !(self.recency_decay > 0.0 && self.recency_decay.is_finite()) {
            return bad("recency_decay must be positive".into());
        }
        if !(self.emerging_weight > 0.0 && self.emerging_weight.is_finite()) {
            return bad("emerging_weight must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.feature_signal) {
            return bad("feature_signal must lie in [0, 1]".into());
        }
        if self.topic_size == 0 || self.topic_size > self.feature_dim {
            return bad(format!("topic_size must lie in 1..={}", self.feature_dim));
        }
        if self.words_per_node == 0 {
            return bad("words_per_node must be positive".into());
        }
        Ok(())
    }

    fn nodes_in_year(&self, y: u32) -> usize {
        let years = self.n_years as usize;
        self.n_nodes / years + usize::from((y as usize) < self.n_nodes % years)
    }
}

/// Build a temporal graph following `cfg`. Identical configs give identical
/// graphs.
pub fn generate_synthetic_stream(cfg: &SynthConfig) -> Result<TemporalGraph> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_classes = cfg.num_classes();
    let first_year: Vec<u32> = (0..n_classes)
        .map(|c| cfg.emergence.get(&c).copied().unwrap_or(0))
        .collect();

    let mut node_time: Vec<Timestamp> = Vec::with_capacity(cfg.n_nodes);
    let mut labels: Vec<ClassId> = Vec::with_capacity(cfg.n_nodes);
    for y in 0..cfg.n_years {
        let count = cfg.nodes_in_year(y);
        // Classes starting this year get one guaranteed node each.
        let mut forced: Vec<ClassId> = (0..n_classes).filter(|&c| first_year[c] == y).collect();
        if y > 0 {
            forced.retain(|&c| c >= cfg.n_initial_classes);
        }
        let active: Vec<ClassId> = (0..n_classes).filter(|&c| first_year[c] <= y).collect();
        let weights: Vec<f64> = active
            .iter()
            .map(|&c| if c < cfg.n_initial_classes { 1.0 } else { cfg.emerging_weight })
            .collect();
        let dist = WeightedIndex::new(&weights).expect("weights are positive");
        for i in 0..count {
            let c = forced.get(i).copied().unwrap_or_else(|| active[dist.sample(&mut rng)]);
            node_time.push(Timestamp::from(y));
            labels.push(c);
        }
    }

    let edges = sample_links(cfg, &node_time, &labels, n_classes, &mut rng);

    // Each class is a random subset of the vocabulary; a node's words mix
    // its class topic with uniform background words.
    let topics: Vec<Vec<usize>> = (0..n_classes)
        .map(|_| rand::seq::index::sample(&mut rng, cfg.feature_dim, cfg.topic_size).into_vec())
        .collect();
    let mut triplets = Vec::with_capacity(cfg.n_nodes * cfg.words_per_node);
    for (u, &c) in labels.iter().enumerate() {
        for _ in 0..cfg.words_per_node {
            let word = if rng.gen_bool(cfg.feature_signal) {
                topics[c][rng.gen_range(0..cfg.topic_size)]
            } else {
                rng.gen_range(0..cfg.feature_dim)
            };
            triplets.push((u, word, 1.0));
        }
    }
    let features = CsrMatrix::from_triplets(cfg.n_nodes, cfg.feature_dim, triplets)?;
    let vocab = ClassVocabulary::new((0..n_classes).map(|c| format!("class{c}")).collect())?;
    TemporalGraph::new(node_time, labels, vocab, edges, features)
}

/// Each node links to earlier nodes (by index), reaching back a
/// geometrically distributed number of years and preferring its own class.
fn sample_links(
    cfg: &SynthConfig,
    node_time: &[Timestamp],
    labels: &[ClassId],
    n_classes: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(NodeId, NodeId)> {
    let years = cfg.n_years as usize;
    // Nodes seen so far, per year and per (year, class).
    let mut by_year: Vec<Vec<NodeId>> = vec![Vec::new(); years];
    let mut by_year_class: Vec<Vec<Vec<NodeId>>> = vec![vec![Vec::new(); n_classes]; years];
    let mut edges = Vec::with_capacity(node_time.len() * cfg.links_per_node);
    for u in 0..node_time.len() {
        let y = node_time[u] as usize;
        let c = labels[u];
        // Candidate years y, y-1, ..., 0 that already have nodes.
        let back: Vec<usize> = (0..=y).filter(|&d| !by_year[y - d].is_empty()).collect();
        if !back.is_empty() {
            let weights: Vec<f64> = back
                .iter()
                .map(|&d| match d {
                    0 => cfg.same_year_weight,
                    _ => cfg.recency_decay.powi(d as i32 - 1),
                })
                .collect();
            // All-zero weights: year 0 with no same-year links.
            let Ok(dist) = WeightedIndex::new(&weights) else {
                by_year[y].push(u);
                by_year_class[y][c].push(u);
                continue;
            };
            for _ in 0..cfg.links_per_node {
                let target_year = y - back[dist.sample(rng)];
                let same = &by_year_class[target_year][c];
                let pool = if !same.is_empty() && rng.gen_bool(cfg.intra_class_prob) {
                    same
                } else {
                    &by_year[target_year]
                };
                edges.push((u, pool[rng.gen_range(0..pool.len())]));
            }
        }
        by_year[y].push(u);
        by_year_class[y][c].push(u);
    }
    edges
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{build_task_sequence, HistorySize, TaskMode};
    use crate::temporal::drift_series;
    use proptest::prelude::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_nodes: 600,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_graph() {
        let a = generate_synthetic_stream(&small(3)).unwrap();
        let b = generate_synthetic_stream(&small(3)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_stream(&small(4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn emergence_year_beyond_horizon_is_rejected() {
        let cfg = SynthConfig {
            emergence: BTreeMap::from([(4, 10)]),
            ..small(0)
        };
        assert!(generate_synthetic_stream(&cfg).is_err());
        let gap = SynthConfig {
            emergence: BTreeMap::from([(5, 3)]),
            ..small(0)
        };
        assert!(generate_synthetic_stream(&gap).is_err());
    }

    #[test]
    fn classes_follow_schedule() {
        let g = generate_synthetic_stream(&small(1)).unwrap();
        assert_eq!(g.num_nodes(), 600);
        for u in 0..g.num_nodes() {
            if g.label(u) == 4 {
                assert!(g.time(u) >= 6);
            }
        }
        assert_eq!(g.class_vocab().first_seen(4), Some(6));
        for c in 0..4 {
            assert_eq!(g.class_vocab().first_seen(c), Some(0));
        }
    }

    #[test]
    fn no_emergence_means_little_drift() {
        let cfg = SynthConfig {
            emergence: BTreeMap::new(),
            ..SynthConfig::default()
        };
        let g = generate_synthetic_stream(&cfg).unwrap();
        for (_, sigma) in drift_series(&g).unwrap() {
            assert!(sigma < 0.1, "drift {sigma}");
        }
    }

    #[test]
    fn emerging_class_is_new_exactly_once() {
        let g = generate_synthetic_stream(&small(2)).unwrap();
        for history in [HistorySize::Limited(1), HistorySize::Full] {
            let seq = build_task_sequence(&g, history, TaskMode::Transductive).unwrap();
            let fired: Vec<i64> = seq.tasks.iter().filter(|t| t.new_classes.contains(&4)).map(|t| t.t).collect();
            // Training nodes precede the task time, so year-6 nodes first
            // train the task at year 7.
            assert_eq!(fired, vec![7]);
        }
    }

    fn densities(g: &TemporalGraph) -> (f64, f64) {
        let mut per_class = vec![0usize; g.num_classes()];
        for &c in g.labels() {
            per_class[c] += 1;
        }
        let n = g.num_nodes() as f64;
        let intra_pairs: f64 = per_class.iter().map(|&k| (k * k.saturating_sub(1)) as f64 / 2.0).sum();
        let inter_pairs = n * (n - 1.0) / 2.0 - intra_pairs;
        let (mut intra, mut inter) = (0usize, 0usize);
        for (u, v) in g.edges() {
            if g.label(u) == g.label(v) {
                intra += 1;
            } else {
                inter += 1;
            }
        }
        (intra as f64 / intra_pairs, inter as f64 / inter_pairs)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn intra_class_density_exceeds_inter_class(
            seed in any::<u64>(),
            n_nodes in 200usize..800,
            n_years in 2u32..8,
            n_initial in 2usize..5,
            intra in 0.6f64..0.95,
            links in 1usize..4,
        ) {
            let cfg = SynthConfig {
                n_nodes,
                n_years,
                n_initial_classes: n_initial,
                emergence: BTreeMap::from([(n_initial, n_years - 1)]),
                seed,
                feature_dim: 32,
                topic_size: 8,
                links_per_node: links,
                intra_class_prob: intra,
                ..SynthConfig::default()
            };
            let g = generate_synthetic_stream(&cfg).unwrap();
            let (intra_d, inter_d) = densities(&g);
            prop_assert!(intra_d > inter_d, "intra {} inter {}", intra_d, inter_d);
        }
    }
}
