use std::collections::{BTreeSet, HashSet};

use kgmatch_core::retrieval::{bfs_neighborhood, bfs_paths};
use kgmatch_core::{Direction, EntityPair, Hop, KgStore, Path};
use proptest::prelude::*;

type Walk = Vec<Hop>;

/// Every simple walk of 1..=d_max hops from `from` to `to`, found by
/// trying each stored triple in both orientations at every step.
fn brute_force(triples: &[(String, String, String)], from: &str, to: &str, d_max: usize) -> BTreeSet<Walk> {
    fn go(
        triples: &[(String, String, String)],
        at: &str,
        to: &str,
        left: usize,
        visited: &mut Vec<String>,
        walk: &mut Walk,
        out: &mut BTreeSet<Walk>,
    ) {
        if left == 0 {
            return;
        }
        for (h, r, t) in triples {
            if h == t {
                continue;
            }
            for (dir, next) in [(Direction::Outgoing, (h, t)), (Direction::Incoming, (t, h))] {
                let (src, dst) = next;
                if src != at || visited.iter().any(|v| v == dst) {
                    continue;
                }
                walk.push(Hop::new(h.as_str(), r.as_str(), t.as_str(), dir));
                if dst == to {
                    out.insert(walk.clone());
                } else {
                    visited.push(dst.clone());
                    go(triples, dst, to, left - 1, visited, walk, out);
                    visited.pop();
                }
                walk.pop();
            }
        }
    }
    let mut out = BTreeSet::new();
    if from != to {
        go(triples, from, to, d_max, &mut vec![from.to_string()], &mut Vec::new(), &mut out);
    }
    out
}

fn as_set(paths: &[Path]) -> BTreeSet<Walk> {
    paths.iter().map(|p| p.hops.clone()).collect()
}

#[derive(Debug, Clone)]
struct Graph {
    nodes: usize,
    triples: Vec<(String, String, String)>,
}

impl Graph {
    fn store(&self) -> KgStore {
        let mut store = KgStore::new();
        for (h, r, t) in &self.triples {
            store.insert_triple(h, r, t);
        }
        store
    }

    /// Stored triples without duplicates, in insertion order.
    fn distinct(&self) -> Vec<(String, String, String)> {
        let mut seen = HashSet::new();
        self.triples.iter().filter(|t| seen.insert((*t).clone())).cloned().collect()
    }
}

fn graph(max_nodes: usize, max_edges: usize) -> impl Strategy<Value = Graph> {
    (2..=max_nodes).prop_flat_map(move |n| {
        let edge = (0..n, 0..4usize, 0..n).prop_map(|(h, r, t)| (format!("Q{h}"), format!("P{r}"), format!("Q{t}")));
        prop::collection::vec(edge, 0..=max_edges).prop_map(move |triples| Graph { nodes: n, triples })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn matches_brute_force(g in graph(12, 30), a in 0usize..12, b in 0usize..12, d_max in 1usize..=4) {
        let (a, b) = (format!("Q{}", a % g.nodes), format!("Q{}", b % g.nodes));
        let store = g.store();
        let expected = brute_force(&g.distinct(), &a, &b, d_max);
        let got = match EntityPair::new(a.as_str(), b.as_str()) {
            Some(pair) => bfs_paths(&store, &pair, d_max, None),
            None => Default::default(),
        };
        prop_assert!(!got.truncated);
        prop_assert_eq!(got.paths.len(), expected.len(), "duplicate paths emitted");
        prop_assert_eq!(as_set(&got.paths), expected);
    }

    #[test]
    fn paths_are_simple_bounded_and_shortest_first(g in graph(12, 30), a in 0usize..12, b in 0usize..12) {
        let (a, b) = (format!("Q{}", a % g.nodes), format!("Q{}", b % g.nodes));
        prop_assume!(a != b);
        let store = g.store();
        let set = bfs_paths(&store, &EntityPair::new(a.as_str(), b.as_str()).unwrap(), 3, None);
        for p in &set.paths {
            prop_assert!(p.is_simple_chain());
            prop_assert!((1..=3).contains(&p.len()));
            prop_assert_eq!(p.start(), Some(a.as_str()));
            prop_assert_eq!(p.end(), Some(b.as_str()));
            for h in &p.hops {
                prop_assert!(store.contains_triple(&h.head, &h.relation, &h.tail));
            }
        }
        prop_assert!(set.paths.windows(2).all(|w| w[0].len() <= w[1].len()));
    }

    #[test]
    fn reversing_the_pair_reverses_the_paths(g in graph(10, 25), a in 0usize..10, b in 0usize..10) {
        let (a, b) = (format!("Q{}", a % g.nodes), format!("Q{}", b % g.nodes));
        prop_assume!(a != b);
        let store = g.store();
        let forward = bfs_paths(&store, &EntityPair::new(a.as_str(), b.as_str()).unwrap(), 3, None);
        let backward = bfs_paths(&store, &EntityPair::new(b.as_str(), a.as_str()).unwrap(), 3, None);
        let reversed: Vec<Path> = backward.paths.iter().map(Path::reversed).collect();
        prop_assert_eq!(as_set(&forward.paths), as_set(&reversed));
    }

    #[test]
    fn cap_keeps_a_prefix(g in graph(10, 40), a in 0usize..10, b in 0usize..10, cap in 1usize..8) {
        let (a, b) = (format!("Q{}", a % g.nodes), format!("Q{}", b % g.nodes));
        prop_assume!(a != b);
        let store = g.store();
        let pair = EntityPair::new(a.as_str(), b.as_str()).unwrap();
        let all = bfs_paths(&store, &pair, 3, None);
        let capped = bfs_paths(&store, &pair, 3, Some(cap));
        prop_assert_eq!(capped.truncated, all.paths.len() > cap);
        prop_assert_eq!(&capped.paths[..], &all.paths[..all.paths.len().min(cap)]);
    }

    #[test]
    fn neighborhood_paths_are_maximal(g in graph(10, 25), root in 0usize..10, d_max in 1usize..=3) {
        let root = format!("Q{}", root % g.nodes);
        let store = g.store();
        let set = bfs_neighborhood(&store, &root, d_max, None);
        let walks = as_set(&set.paths);
        prop_assert_eq!(walks.len(), set.paths.len());
        for p in &set.paths {
            prop_assert!(p.is_simple_chain());
            prop_assert_eq!(p.start(), Some(root.as_str()));
            prop_assert!(p.len() <= d_max);
            if p.len() < d_max {
                let nodes = p.nodes();
                let end = p.end().unwrap();
                let open = store.neighbors(end).iter().any(|n| !nodes.contains(&n.neighbor));
                prop_assert!(!open, "path stops early at {}", end);
            }
        }
        for w in &walks {
            for cut in 1..w.len() {
                prop_assert!(!walks.contains(&w[..cut].to_vec()));
            }
        }
    }
}
