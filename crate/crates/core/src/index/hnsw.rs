//! Hierarchical navigable small world graph over the vectors of a
//! [`VectorIndex`](super::VectorIndex).
//!
//! Similarity is the dot product of unit vectors (larger is closer).
//! Level assignment draws from a seeded ChaCha RNG, and nodes are inserted
//! in collection order, so a build is fully reproducible.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dot, IndexError, VectorIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HnswParams {
    /// Links per node on upper layers; layer 0 keeps up to `2 * m`.
    pub m: usize,
    pub ef_construction: usize,
    /// Beam width at query time, raised to `k` when smaller.
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams {
            m: 16,
            ef_construction: 200,
            ef_search: 100,
            seed: 42,
        }
    }
}

impl HnswParams {
    pub fn validate(&self) -> Result<(), IndexError> {
        if self.m < 2 {
            return Err(IndexError::Params(format!("m must be >= 2, got {}", self.m)));
        }
        if self.ef_construction == 0 || self.ef_search == 0 {
            return Err(IndexError::Params("ef_construction and ef_search must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand(f32, u32);

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then_with(|| other.1.cmp(&self.1))
    }
}

trait Visit {
    /// Marks `node`; returns false if it was already marked.
    fn first_visit(&mut self, node: u32) -> bool;
}

impl Visit for HashSet<u32> {
    fn first_visit(&mut self, node: u32) -> bool {
        self.insert(node)
    }
}

/// Epoch-stamped visited marks, reused across insertions during a build.
struct VisitedList {
    marks: Vec<u32>,
    epoch: u32,
}

impl VisitedList {
    fn new(n: usize) -> Self {
        VisitedList {
            marks: vec![0; n],
            epoch: 1,
        }
    }

    fn reset(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.marks.fill(0);
            self.epoch = 1;
        }
    }
}

impl Visit for VisitedList {
    fn first_visit(&mut self, node: u32) -> bool {
        let slot = &mut self.marks[node as usize];
        if *slot == self.epoch {
            false
        } else {
            *slot = self.epoch;
            true
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Graph {
    pub(super) params: HnswParams,
    /// `links[node][layer]` is the neighbor list of `node` on `layer`.
    pub(super) links: Vec<Vec<Vec<u32>>>,
    pub(super) entry: Option<u32>,
    pub(super) max_level: usize,
}

impl Graph {
    pub fn build(index: &VectorIndex, params: HnswParams) -> Graph {
        let n = index.len();
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let level_mult = 1.0 / (params.m as f64).ln();
        let mut graph = Graph {
            params,
            links: Vec::with_capacity(n),
            entry: None,
            max_level: 0,
        };
        let mut visited = VisitedList::new(n);
        for node in 0..n as u32 {
            let u: f64 = rng.random();
            let level = (-(1.0 - u).ln() * level_mult).floor() as usize;
            graph.links.push(vec![Vec::new(); level + 1]);
            graph.insert(index, node, level, &mut visited);
        }
        graph
    }

    fn max_links(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    fn insert(&mut self, index: &VectorIndex, node: u32, level: usize, visited: &mut VisitedList) {
        let Some(entry) = self.entry else {
            self.entry = Some(node);
            self.max_level = level;
            return;
        };
        let query = index.vector(node as usize);
        let mut ep = (entry, dot(query, index.vector(entry as usize)));
        for layer in (level + 1..=self.max_level).rev() {
            ep = self.greedy(index, query, ep, layer);
        }
        let mut entries = vec![ep];
        for layer in (0..=level.min(self.max_level)).rev() {
            visited.reset();
            let found = self.search_layer(index, query, &entries, self.params.ef_construction, layer, visited);
            let chosen = select_neighbors(index, &found, self.params.m);
            self.links[node as usize][layer] = chosen.clone();
            let cap = self.max_links(layer);
            for nb in chosen {
                let list = &mut self.links[nb as usize][layer];
                list.push(node);
                if list.len() > cap {
                    self.shrink(index, nb, layer, cap);
                }
            }
            entries = found;
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry = Some(node);
        }
    }

    fn shrink(&mut self, index: &VectorIndex, node: u32, layer: usize, cap: usize) {
        let base = index.vector(node as usize);
        let mut scored: Vec<(u32, f32)> = self.links[node as usize][layer]
            .iter()
            .map(|&n| (n, dot(base, index.vector(n as usize))))
            .collect();
        scored.sort_by(|a, b| Cand(b.1, b.0).cmp(&Cand(a.1, a.0)));
        self.links[node as usize][layer] = select_neighbors(index, &scored, cap);
    }

    fn greedy(&self, index: &VectorIndex, query: &[f32], mut ep: (u32, f32), layer: usize) -> (u32, f32) {
        loop {
            let mut improved = false;
            for &n in &self.links[ep.0 as usize][layer] {
                let s = dot(query, index.vector(n as usize));
                if s > ep.1 {
                    ep = (n, s);
                    improved = true;
                }
            }
            if !improved {
                return ep;
            }
        }
    }

    /// Beam search on one layer; returns up to `ef` hits, best first.
    fn search_layer(
        &self,
        index: &VectorIndex,
        query: &[f32],
        entries: &[(u32, f32)],
        ef: usize,
        layer: usize,
        visited: &mut impl Visit,
    ) -> Vec<(u32, f32)> {
        let mut candidates = BinaryHeap::new();
        let mut results: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();
        for &(node, sim) in entries {
            if visited.first_visit(node) {
                candidates.push(Cand(sim, node));
                results.push(Reverse(Cand(sim, node)));
            }
        }
        while results.len() > ef {
            results.pop();
        }
        while let Some(Cand(sim, node)) = candidates.pop() {
            let worst = results.peek().map_or(f32::NEG_INFINITY, |r| r.0 .0);
            if sim < worst && results.len() >= ef {
                break;
            }
            let Some(neighbors) = self.links[node as usize].get(layer) else {
                continue;
            };
            for &n in neighbors {
                if !visited.first_visit(n) {
                    continue;
                }
                let s = dot(query, index.vector(n as usize));
                let worst = results.peek().map_or(f32::NEG_INFINITY, |r| r.0 .0);
                if results.len() < ef || s > worst {
                    candidates.push(Cand(s, n));
                    results.push(Reverse(Cand(s, n)));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        let mut out: Vec<(u32, f32)> = results.into_iter().map(|Reverse(Cand(s, n))| (n, s)).collect();
        out.sort_by(|a, b| Cand(b.1, b.0).cmp(&Cand(a.1, a.0)));
        out
    }

    pub fn search(&self, index: &VectorIndex, query: &[f32], k: usize) -> Vec<(u32, f32)> {
        let Some(entry) = self.entry else {
            return Vec::new();
        };
        let mut ep = (entry, dot(query, index.vector(entry as usize)));
        for layer in (1..=self.max_level).rev() {
            ep = self.greedy(index, query, ep, layer);
        }
        let ef = self.params.ef_search.max(k);
        let mut visited = HashSet::with_capacity(ef * 4 * self.params.m);
        let found = self.search_layer(index, query, &[ep], ef, 0, &mut visited);
        index.top_k(found, k)
    }
}

/// Neighbor selection heuristic: walk candidates best-first and keep one
/// only if it is closer to the base than to every neighbor kept so far,
/// then top up with the discarded candidates.
fn select_neighbors(index: &VectorIndex, candidates: &[(u32, f32)], m: usize) -> Vec<u32> {
    let mut kept: Vec<u32> = Vec::with_capacity(m);
    let mut discarded = Vec::new();
    for &(c, sim) in candidates {
        if kept.len() >= m {
            break;
        }
        let cv = index.vector(c as usize);
        if kept.iter().all(|&r| dot(cv, index.vector(r as usize)) < sim) {
            kept.push(c);
        } else {
            discarded.push(c);
        }
    }
    for c in discarded {
        if kept.len() >= m {
            break;
        }
        kept.push(c);
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{EmbeddedItem, Embedding, ItemKind};
    use crate::index::IndexMode;
    /// Unit vectors with roughly Gaussian components (sum of four uniforms).
    fn unit_vectors(n: usize, dim: usize, seed: u64) -> Vec<EmbeddedItem> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let raw: Vec<f32> = (0..dim)
                    .map(|_| (0..4).map(|_| rng.random::<f32>() - 0.5).sum())
                    .collect();
                EmbeddedItem {
                    item_id: format!("v{i:05}"),
                    kind: ItemKind::Entity,
                    vector: Embedding::normalized(raw).unwrap(),
                }
            })
            .collect()
    }

    #[test]
    fn builds_are_reproducible() {
        let items = unit_vectors(500, 16, 7);
        let a = VectorIndex::build(items.clone(), IndexMode::Hnsw, HnswParams::default()).unwrap();
        let b = VectorIndex::build(items, IndexMode::Hnsw, HnswParams::default()).unwrap();
        assert_eq!(a.graph, b.graph);
    }

    #[test]
    fn link_lists_respect_caps() {
        let items = unit_vectors(800, 8, 3);
        let params = HnswParams {
            m: 4,
            ..HnswParams::default()
        };
        let index = VectorIndex::build(items, IndexMode::Hnsw, params).unwrap();
        let graph = index.graph.as_ref().unwrap();
        for node in &graph.links {
            for (layer, list) in node.iter().enumerate() {
                assert!(list.len() <= if layer == 0 { 8 } else { 4 });
            }
        }
    }

    #[test]
    fn small_recall_against_exact() {
        let items = unit_vectors(2000, 32, 11);
        let queries = unit_vectors(50, 32, 12);
        let index = VectorIndex::build(items, IndexMode::Hnsw, HnswParams::default()).unwrap();
        let mut hit = 0;
        for q in &queries {
            let approx = index.search(&q.vector, 10).unwrap();
            let exact = index.search_exact(&q.vector, 10).unwrap();
            let truth: HashSet<_> = exact.iter().map(|s| s.item_id.clone()).collect();
            hit += approx.iter().filter(|s| truth.contains(&s.item_id)).count();
        }
        let recall = hit as f64 / (queries.len() * 10) as f64;
        assert!(recall >= 0.95, "recall {recall}");
    }

    #[test]
    fn params_validated() {
        let bad = HnswParams {
            m: 1,
            ..HnswParams::default()
        };
        assert!(VectorIndex::build(vec![], IndexMode::Hnsw, bad).is_err());
    }
}
