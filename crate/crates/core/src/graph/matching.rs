use std::collections::VecDeque;

use super::{DriverMap, Graph};

const NIL: usize = usize::MAX;

/// A maximum bipartite matching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    /// Right vertex matched to each left vertex.
    pub left: Vec<Option<usize>>,
    /// Left vertex matched to each right vertex.
    pub right: Vec<Option<usize>>,
}

impl Matching {
    pub fn size(&self) -> usize {
        self.left.iter().filter(|m| m.is_some()).count()
    }
}

/// Hopcroft–Karp maximum matching. `adj[l]` lists the right vertices
/// reachable from left vertex `l`; neighbour lists are scanned in the given
/// order, which makes the result deterministic.
pub fn hopcroft_karp(adj: &[Vec<usize>], n_right: usize) -> Matching {
    let n_left = adj.len();
    let mut match_l = vec![NIL; n_left];
    let mut match_r = vec![NIL; n_right];
    let mut dist = vec![0usize; n_left];
    let mut queue = VecDeque::new();

    loop {
        // BFS layering from all free left vertices.
        queue.clear();
        let mut found = false;
        for l in 0..n_left {
            if match_l[l] == NIL {
                dist[l] = 0;
                queue.push_back(l);
            } else {
                dist[l] = usize::MAX;
            }
        }
        while let Some(l) = queue.pop_front() {
            for &r in &adj[l] {
                let next = match_r[r];
                if next == NIL {
                    found = true;
                } else if dist[next] == usize::MAX {
                    dist[next] = dist[l] + 1;
                    queue.push_back(next);
                }
            }
        }
        if !found {
            break;
        }
        let mut it = vec![0usize; n_left];
        for l in 0..n_left {
            if match_l[l] == NIL {
                augment(l, adj, &mut match_l, &mut match_r, &mut dist, &mut it);
            }
        }
    }

    let opt = |v: &Vec<usize>| v.iter().map(|&x| (x != NIL).then_some(x)).collect();
    Matching {
        left: opt(&match_l),
        right: opt(&match_r),
    }
}

// Iterative DFS along the BFS layers; `it` keeps per-vertex edge cursors so
// each edge is inspected at most once per phase.
fn augment(
    root: usize,
    adj: &[Vec<usize>],
    match_l: &mut [usize],
    match_r: &mut [usize],
    dist: &mut [usize],
    it: &mut [usize],
) -> bool {
    let mut stack = vec![root];
    while let Some(&l) = stack.last() {
        if it[l] == adj[l].len() {
            dist[l] = usize::MAX;
            stack.pop();
            continue;
        }
        let r = adj[l][it[l]];
        let next = match_r[r];
        if next == NIL {
            // Flip the alternating path recorded on the stack.
            let mut r_cur = r;
            while let Some(l_cur) = stack.pop() {
                let prev = match_l[l_cur];
                match_l[l_cur] = r_cur;
                match_r[r_cur] = l_cur;
                r_cur = prev;
            }
            return true;
        }
        if dist[next] == dist[l].wrapping_add(1) {
            stack.push(next);
        } else {
            it[l] += 1;
        }
    }
    false
}

/// Maximum-matching driver selection on the node-split bipartite graph:
/// out-copy `i` links to in-copy `j` for both directions of every edge, and
/// nodes whose in-copy stays unmatched become drivers. A perfect matching
/// yields the single driver `0`.
pub fn max_matching_drivers(g: &Graph) -> DriverMap {
    let adj: Vec<Vec<usize>> = (0..g.n()).map(|i| g.neighbors(i).to_vec()).collect();
    let m = hopcroft_karp(&adj, g.n());
    let mut drivers: Vec<usize> = (0..g.n()).filter(|&j| m.right[j].is_none()).collect();
    if drivers.is_empty() {
        drivers.push(0);
    }
    DriverMap::new(g.n(), drivers).expect("unmatched nodes are distinct and in range")
}

/// Two-colouring of a bipartite graph (BFS from the lowest uncoloured node,
/// which gets colour 0). `None` if the graph has an odd cycle.
pub fn two_coloring(g: &Graph) -> Option<Vec<u8>> {
    let mut color = vec![u8::MAX; g.n()];
    let mut queue = VecDeque::new();
    for s in 0..g.n() {
        if color[s] != u8::MAX {
            continue;
        }
        color[s] = 0;
        queue.push_back(s);
        while let Some(i) = queue.pop_front() {
            for &j in g.neighbors(i) {
                if color[j] == u8::MAX {
                    color[j] = 1 - color[i];
                    queue.push_back(j);
                } else if color[j] == color[i] {
                    return None;
                }
            }
        }
    }
    Some(color)
}

/// Maximum-matching drivers after orienting every edge of a bipartite graph
/// from colour class 0 to class 1. Class-0 nodes have no incoming arcs and
/// are always drivers; on a lattice this gives the checkerboard pattern.
/// `None` if the graph is not bipartite.
pub fn bipartite_source_drivers(g: &Graph) -> Option<DriverMap> {
    let color = two_coloring(g)?;
    let adj: Vec<Vec<usize>> = (0..g.n())
        .map(|i| {
            if color[i] == 0 {
                g.neighbors(i).to_vec()
            } else {
                Vec::new()
            }
        })
        .collect();
    let m = hopcroft_karp(&adj, g.n());
    let drivers: Vec<usize> = (0..g.n()).filter(|&j| m.right[j].is_none()).collect();
    Some(DriverMap::new(g.n(), drivers).expect("unmatched nodes are distinct and in range"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(adj: &[Vec<usize>], n_right: usize) -> usize {
        fn go(l: usize, adj: &[Vec<usize>], used: &mut Vec<bool>) -> usize {
            if l == adj.len() {
                return 0;
            }
            let mut best = go(l + 1, adj, used);
            for &r in &adj[l] {
                if !used[r] {
                    used[r] = true;
                    best = best.max(1 + go(l + 1, adj, used));
                    used[r] = false;
                }
            }
            best
        }
        go(0, adj, &mut vec![false; n_right])
    }

    #[test]
    fn isolated_node_is_driver() {
        let g = Graph::from_edges(1, []).unwrap();
        assert_eq!(max_matching_drivers(&g).drivers(), &[0]);
    }

    #[test]
    fn star_drivers_match_brute_force_count() {
        let g = Graph::from_edges(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        let adj: Vec<Vec<usize>> = (0..4).map(|i| g.neighbors(i).to_vec()).collect();
        assert_eq!(brute_force(&adj, 4), 2);
        let d = max_matching_drivers(&g);
        assert_eq!(d.len(), 2);
        assert_eq!(d.drivers(), &[2, 3]);
    }

    #[test]
    fn perfect_matching_falls_back_to_node_zero() {
        let g = Graph::lattice2d(2, 2).unwrap();
        assert_eq!(max_matching_drivers(&g).drivers(), &[0]);
    }

    #[test]
    fn lattice_sources_form_checkerboard() {
        let g = Graph::lattice2d(4, 4).unwrap();
        let d = bipartite_source_drivers(&g).unwrap();
        assert_eq!(d.len(), 8);
        for &i in d.drivers() {
            assert_eq!((i / 4 + i % 4) % 2, 0);
        }
        let triangle = Graph::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        assert!(bipartite_source_drivers(&triangle).is_none());
    }

    #[test]
    fn matching_is_consistent() {
        let adj = vec![vec![0, 1], vec![0], vec![1, 2], vec![]];
        let m = hopcroft_karp(&adj, 3);
        assert_eq!(m.size(), 3);
        for (l, r) in m.left.iter().enumerate() {
            if let Some(r) = r {
                assert_eq!(m.right[*r], Some(l));
                assert!(adj[l].contains(r));
            }
        }
    }

    #[test]
    fn small_graphs_match_brute_force() {
        for seed in 0..200 {
            let n = 1 + (seed as usize % 8);
            let g = Graph::erdos_renyi(n, 0.35, seed).unwrap();
            let adj: Vec<Vec<usize>> = (0..n).map(|i| g.neighbors(i).to_vec()).collect();
            assert_eq!(hopcroft_karp(&adj, n).size(), brute_force(&adj, n), "seed {seed}");
        }
    }
}
