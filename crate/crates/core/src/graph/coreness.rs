use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::UGraph;

/// k-core index of every node (Batagelj-Zaversnik bucket peeling).
pub fn k_core(g: &UGraph) -> Vec<u32> {
    let n = g.n_nodes();
    if n == 0 {
        return Vec::new();
    }
    let mut deg: Vec<usize> = (0..n).map(|v| g.degree(v)).collect();
    let max_deg = *deg.iter().max().unwrap();
    let mut bin = vec![0usize; max_deg + 1];
    for &d in &deg {
        bin[d] += 1;
    }
    let mut start = 0;
    for b in bin.iter_mut() {
        let count = *b;
        *b = start;
        start += count;
    }
    let mut pos = vec![0usize; n];
    let mut vert = vec![0usize; n];
    for v in 0..n {
        pos[v] = bin[deg[v]];
        vert[pos[v]] = v;
        bin[deg[v]] += 1;
    }
    for d in (1..=max_deg).rev() {
        bin[d] = bin[d - 1];
    }
    bin[0] = 0;
    for i in 0..n {
        let v = vert[i];
        for &u in g.neighbors(v) {
            let u = u as usize;
            if deg[u] > deg[v] {
                let du = deg[u];
                let pu = pos[u];
                let pw = bin[du];
                let w = vert[pw];
                if u != w {
                    pos[u] = pw;
                    vert[pu] = w;
                    pos[w] = pu;
                    vert[pw] = u;
                }
                bin[du] += 1;
                deg[u] -= 1;
            }
        }
    }
    deg.into_iter().map(|d| d as u32).collect()
}

/// s-core index on integer strengths: the largest `s` such that the node
/// survives repeated removal of nodes with strength below `s`.
pub fn s_core(g: &UGraph) -> Vec<u64> {
    let n = g.n_nodes();
    let mut strength: Vec<u64> = (0..n).map(|v| g.strength(v).round() as u64).collect();
    let mut removed = vec![false; n];
    let mut core = vec![0u64; n];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = (0..n).map(|v| Reverse((strength[v], v))).collect();
    let mut level = 0u64;
    while let Some(Reverse((s, v))) = heap.pop() {
        if removed[v] || s != strength[v] {
            continue;
        }
        removed[v] = true;
        level = level.max(s);
        core[v] = level;
        for (&u, &w) in g.neighbors(v).iter().zip(g.neighbor_weights(v)) {
            let u = u as usize;
            if !removed[u] {
                strength[u] = strength[u].saturating_sub(w.round() as u64);
                heap.push(Reverse((strength[u], u)));
            }
        }
    }
    core
}

/// Unweighted k-core or weighted s-core indices.
pub fn coreness(g: &UGraph, weighted: bool) -> Vec<u64> {
    if weighted {
        s_core(g)
    } else {
        k_core(g).into_iter().map(u64::from).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Iterative pruning: for each level, strip nodes below it until stable.
    fn pruning_oracle(g: &UGraph, weighted: bool) -> Vec<u64> {
        let n = g.n_nodes();
        let val = |alive: &[bool], v: usize| -> u64 {
            g.neighbors(v)
                .iter()
                .zip(g.neighbor_weights(v))
                .filter(|(u, _)| alive[**u as usize])
                .map(|(_, w)| if weighted { w.round() as u64 } else { 1 })
                .sum()
        };
        let mut core = vec![0u64; n];
        let mut level = 1u64;
        loop {
            let mut alive = vec![true; n];
            loop {
                let drop: Vec<usize> = (0..n).filter(|&v| alive[v] && val(&alive, v) < level).collect();
                if drop.is_empty() {
                    break;
                }
                for v in drop {
                    alive[v] = false;
                }
            }
            if !alive.iter().any(|&a| a) {
                break;
            }
            for v in 0..n {
                if alive[v] {
                    core[v] = level;
                }
            }
            level += 1;
        }
        core
    }

    #[test]
    fn star_is_one_core() {
        let g = UGraph::from_edges(4, &[(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0)]);
        assert_eq!(coreness(&g, false), vec![1, 1, 1, 1]);
    }

    #[test]
    fn four_cycle_is_two_core() {
        let g = UGraph::from_edges(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 0, 1.0)]);
        assert_eq!(coreness(&g, false), vec![2, 2, 2, 2]);
        assert_eq!(pruning_oracle(&g, false), vec![2, 2, 2, 2]);
    }

    #[test]
    fn weighted_star_s_core() {
        let g = UGraph::from_edges(4, &[(0, 1, 5.0), (0, 2, 5.0), (0, 3, 5.0)]);
        assert_eq!(coreness(&g, true), vec![5, 5, 5, 5]);
        assert_eq!(pruning_oracle(&g, true), vec![5, 5, 5, 5]);
    }

    fn random_graph() -> impl Strategy<Value = UGraph> {
        (2usize..30).prop_flat_map(|n| {
            prop::collection::vec((0..n as u32, 0..n as u32, 1u32..6), 0..80)
                .prop_map(move |es| {
                    let edges: Vec<(u32, u32, f64)> = es.into_iter().map(|(a, b, w)| (a, b, w as f64)).collect();
                    UGraph::from_edges(n, &edges)
                })
        })
    }

    proptest! {
        #[test]
        fn k_core_matches_pruning(g in random_graph()) {
            prop_assert_eq!(coreness(&g, false), pruning_oracle(&g, false));
        }

        #[test]
        fn s_core_matches_pruning(g in random_graph()) {
            prop_assert_eq!(coreness(&g, true), pruning_oracle(&g, true));
        }
    }
}
