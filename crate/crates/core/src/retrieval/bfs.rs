//! Bounded simple-path enumeration over the undirected view of the store.

use std::collections::HashMap;

use super::{EntityPair, Hop, Path, Strategy};
use crate::store::{Edge, KgStore};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PathSet {
    pub paths: Vec<Path>,
    /// More paths existed than the cap allowed.
    pub truncated: bool,
}

struct Collector<'s> {
    store: &'s KgStore,
    cap: usize,
    out: PathSet,
}

impl Collector<'_> {
    fn full(&self) -> bool {
        self.out.truncated
    }

    /// Records the walk `nodes[0] -e0-> nodes[1] ... ` as a path.
    fn emit(&mut self, nodes: &[u32], edges: &[Edge]) {
        if self.out.paths.len() >= self.cap {
            self.out.truncated = true;
            return;
        }
        let hops = nodes
            .iter()
            .zip(edges)
            .map(|(&from, e)| {
                let (head, tail) = match e.direction {
                    crate::store::Direction::Outgoing => (from, e.neighbor),
                    crate::store::Direction::Incoming => (e.neighbor, from),
                };
                Hop::new(
                    self.store.entity_id(head),
                    self.store.relation_id(e.relation),
                    self.store.entity_id(tail),
                    e.direction,
                )
            })
            .collect();
        self.out.paths.push(Path {
            hops,
            source: Strategy::EntityVecBfs,
        });
    }
}

/// Hop distance from `root` to every node within `limit` hops.
fn distances(store: &KgStore, root: u32, limit: usize) -> HashMap<u32, usize> {
    let mut dist = HashMap::from([(root, 0)]);
    let mut frontier = vec![root];
    for depth in 1..=limit {
        let mut next = Vec::new();
        for &u in &frontier {
            for e in store.edges(u) {
                dist.entry(e.neighbor).or_insert_with(|| {
                    next.push(e.neighbor);
                    depth
                });
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    dist
}

/// Every simple path from `pair.es` to `pair.ed` with at most `d_max` hops.
///
/// Edges are walked in either direction. Each stored triple is a distinct
/// edge, so parallel triples give distinct paths. Paths come out shortest
/// first; with a cap, enumeration stops once `cap` paths are found and
/// `truncated` is set if another existed.
pub fn bfs_paths(store: &KgStore, pair: &EntityPair, d_max: usize, cap: Option<usize>) -> PathSet {
    let (Some(s), Some(d)) = (store.entity_index(&pair.es), store.entity_index(&pair.ed)) else {
        return PathSet::default();
    };
    if s == d || d_max == 0 {
        return PathSet::default();
    }
    let dist = distances(store, d, d_max - 1);
    let mut col = Collector {
        store,
        cap: cap.unwrap_or(usize::MAX),
        out: PathSet::default(),
    };
    let shortest = store
        .edges(s)
        .iter()
        .filter_map(|e| dist.get(&e.neighbor).map(|x| x + 1))
        .min();
    let Some(shortest) = shortest else {
        return col.out;
    };
    for length in shortest..=d_max {
        let mut nodes = vec![s];
        let mut edges = Vec::with_capacity(length);
        extend_to(&mut col, &dist, d, length, &mut nodes, &mut edges);
        if col.full() {
            break;
        }
    }
    col.out
}

/// Depth-first extension of `nodes` towards `target`, emitting paths of
/// exactly `length` hops.
fn extend_to(
    col: &mut Collector<'_>,
    dist: &HashMap<u32, usize>,
    target: u32,
    length: usize,
    nodes: &mut Vec<u32>,
    edges: &mut Vec<Edge>,
) {
    let u = *nodes.last().expect("walk starts at the source");
    let remaining = length - edges.len();
    for e in col.store.edges(u) {
        if col.full() {
            return;
        }
        let v = e.neighbor;
        if nodes.contains(&v) {
            continue;
        }
        if v == target {
            if remaining == 1 {
                edges.push(*e);
                nodes.push(v);
                col.emit(nodes, edges);
                nodes.pop();
                edges.pop();
            }
            continue;
        }
        // the target must stay reachable in the hops left after this one
        if remaining < 2 || dist.get(&v).is_none_or(|&dv| dv > remaining - 1) {
            continue;
        }
        edges.push(*e);
        nodes.push(v);
        extend_to(col, dist, target, length, nodes, edges);
        nodes.pop();
        edges.pop();
    }
}

/// Simple paths rooted at `entity` that cannot be extended: they have
/// `d_max` hops or end where every neighbor is already on the path.
/// No returned path is a prefix of another.
pub fn bfs_neighborhood(store: &KgStore, entity: &str, d_max: usize, cap: Option<usize>) -> PathSet {
    let Some(root) = store.entity_index(entity) else {
        return PathSet::default();
    };
    let mut col = Collector {
        store,
        cap: cap.unwrap_or(usize::MAX),
        out: PathSet::default(),
    };
    if d_max > 0 {
        let mut nodes = vec![root];
        let mut edges = Vec::with_capacity(d_max);
        explore(&mut col, d_max, &mut nodes, &mut edges);
    }
    col.out
}

fn explore(col: &mut Collector<'_>, d_max: usize, nodes: &mut Vec<u32>, edges: &mut Vec<Edge>) {
    if edges.len() == d_max {
        col.emit(nodes, edges);
        return;
    }
    let u = *nodes.last().expect("walk starts at the root");
    let mut extended = false;
    for e in col.store.edges(u) {
        if col.full() {
            return;
        }
        if nodes.contains(&e.neighbor) {
            continue;
        }
        extended = true;
        edges.push(*e);
        nodes.push(e.neighbor);
        explore(col, d_max, nodes, edges);
        nodes.pop();
        edges.pop();
    }
    if !extended && !edges.is_empty() {
        col.emit(nodes, edges);
    }
}
