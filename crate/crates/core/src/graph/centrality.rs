use std::collections::VecDeque;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::UGraph;
use crate::util::{derive_seed, rng, REDUCE_CHUNK};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CentralityConfig {
    /// Graphs with more nodes use pivot-sampled betweenness.
    pub exact_threshold: usize,
    pub pivots: usize,
    pub pivot_seed: u64,
    /// Convergence tolerance on the max-normalized eigenvector.
    pub eigen_tolerance: f64,
    pub eigen_max_iter: usize,
}

impl Default for CentralityConfig {
    fn default() -> Self {
        CentralityConfig {
            exact_threshold: 2000,
            pivots: 256,
            pivot_seed: 0x5eed,
            eigen_tolerance: 1e-10,
            eigen_max_iter: 100_000,
        }
    }
}

/// How a betweenness vector was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Betweenness {
    Exact,
    Sampled { pivots: usize },
}

/// Per-node centralities of one graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralityTable {
    pub degree: Vec<f64>,
    pub strength: Vec<f64>,
    pub closeness: Vec<f64>,
    pub betweenness: Vec<f64>,
    pub eigenvector: Vec<f64>,
    pub betweenness_mode: Betweenness,
    /// Set when the graph has no edges and eigenvector scores are all zero.
    pub eigenvector_degenerate: bool,
    pub eigenvector_iterations: usize,
}

/// Sources used for Brandes accumulation and the factor that rescales a
/// pivot sample to the full source set.
fn brandes_sources(n: usize, cfg: &CentralityConfig, stream: u64) -> (Vec<usize>, f64, Betweenness) {
    if n <= cfg.exact_threshold || cfg.pivots >= n {
        ((0..n).collect(), 1.0, Betweenness::Exact)
    } else {
        let mut r = rng(derive_seed(cfg.pivot_seed, stream));
        let mut pivots = sample(&mut r, n, cfg.pivots).into_vec();
        pivots.sort_unstable();
        (pivots, n as f64 / cfg.pivots as f64, Betweenness::Sampled { pivots: cfg.pivots })
    }
}

struct Bfs {
    dist: Vec<i64>,
    sigma: Vec<f64>,
    delta: Vec<f64>,
    order: Vec<usize>,
    queue: VecDeque<usize>,
}

impl Bfs {
    fn new(n: usize) -> Self {
        Bfs { dist: vec![-1; n], sigma: vec![0.0; n], delta: vec![0.0; n], order: Vec::with_capacity(n), queue: VecDeque::new() }
    }

    /// Hop-count BFS from `s` filling distances, path counts and visit order.
    fn run(&mut self, g: &UGraph, s: usize) {
        for &v in &self.order {
            self.dist[v] = -1;
            self.sigma[v] = 0.0;
            self.delta[v] = 0.0;
        }
        self.order.clear();
        self.dist[s] = 0;
        self.sigma[s] = 1.0;
        self.queue.push_back(s);
        while let Some(v) = self.queue.pop_front() {
            self.order.push(v);
            let dv = self.dist[v];
            for &w in g.neighbors(v) {
                let w = w as usize;
                if self.dist[w] < 0 {
                    self.dist[w] = dv + 1;
                    self.queue.push_back(w);
                }
                if self.dist[w] == dv + 1 {
                    self.sigma[w] += self.sigma[v];
                }
            }
        }
    }
}

/// Closeness (reachable count over distance sum, per component) and
/// normalized node betweenness, computed in a shared BFS sweep.
pub fn closeness_and_betweenness(g: &UGraph, cfg: &CentralityConfig) -> (Vec<f64>, Vec<f64>, Betweenness) {
    let n = g.n_nodes();
    let (sources, scale, mode) = brandes_sources(n, cfg, 1);
    let is_source: Vec<bool> = {
        let mut m = vec![false; n];
        for &s in &sources {
            m[s] = true;
        }
        m
    };

    // Closeness needs a BFS from every node; betweenness only from sources.
    let all: Vec<usize> = (0..n).collect();
    let chunks: Vec<(Vec<f64>, Vec<(usize, f64)>)> = all
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut bfs = Bfs::new(n);
            let mut partial = vec![0.0; n];
            let mut close = Vec::with_capacity(chunk.len());
            for &s in chunk {
                bfs.run(g, s);
                let reach = bfs.order.len() - 1;
                let total: i64 = bfs.order.iter().map(|&v| bfs.dist[v]).sum();
                close.push((s, if total > 0 { reach as f64 / total as f64 } else { 0.0 }));
                if is_source[s] {
                    for &w in bfs.order.iter().rev() {
                        for &v in g.neighbors(w) {
                            let v = v as usize;
                            if bfs.dist[v] == bfs.dist[w] - 1 {
                                bfs.delta[v] += bfs.sigma[v] / bfs.sigma[w] * (1.0 + bfs.delta[w]);
                            }
                        }
                        if w != s {
                            partial[w] += bfs.delta[w];
                        }
                    }
                }
            }
            (partial, close)
        })
        .collect();

    let mut closeness = vec![0.0; n];
    let mut betweenness = vec![0.0; n];
    for (partial, close) in chunks {
        for (b, p) in betweenness.iter_mut().zip(&partial) {
            *b += p;
        }
        for (s, c) in close {
            closeness[s] = c;
        }
    }
    // Each unordered pair is accumulated from both endpoints; normalizing by
    // (n-1)(n-2) instead of (n-1)(n-2)/2 absorbs that factor.
    let norm = if n > 2 { scale / ((n - 1) as f64 * (n - 2) as f64) } else { 0.0 };
    for b in &mut betweenness {
        *b *= norm;
    }
    (closeness, betweenness, mode)
}

/// Edge betweenness over hop-count shortest paths, normalized by the number
/// of node pairs. Indexed like `g.edges()`.
pub fn edge_betweenness(g: &UGraph, cfg: &CentralityConfig) -> (Vec<f64>, Betweenness) {
    let n = g.n_nodes();
    let m = g.n_edges();
    let (sources, scale, mode) = brandes_sources(n, cfg, 2);
    let chunks: Vec<Vec<f64>> = sources
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut bfs = Bfs::new(n);
            let mut partial = vec![0.0; m];
            for &s in chunk {
                bfs.run(g, s);
                for &w in bfs.order.iter().rev() {
                    for (&v, &e) in g.neighbors(w).iter().zip(g.neighbor_edges(w)) {
                        let v = v as usize;
                        if bfs.dist[v] == bfs.dist[w] - 1 {
                            let c = bfs.sigma[v] / bfs.sigma[w] * (1.0 + bfs.delta[w]);
                            partial[e as usize] += c;
                            bfs.delta[v] += c;
                        }
                    }
                }
            }
            partial
        })
        .collect();
    let mut out = vec![0.0; m];
    for partial in chunks {
        for (o, p) in out.iter_mut().zip(&partial) {
            *o += p;
        }
    }
    // Both traversal directions of a pair contribute, hence the extra 1/2.
    let pairs = n as f64 * (n as f64 - 1.0) / 2.0;
    let norm = if n > 1 { scale / (2.0 * pairs) } else { 0.0 };
    for o in &mut out {
        *o *= norm;
    }
    (out, mode)
}

/// Eigenvector centrality of the weighted adjacency, scaled to max 1.
///
/// Power iteration runs on `A + I`, which shares eigenvectors with `A` but
/// has a unique dominant eigenvalue even on bipartite graphs. On disconnected
/// graphs, components without the dominant eigenpair decay toward zero.
/// Returns (scores, iterations, degenerate).
pub fn eigenvector(g: &UGraph, tolerance: f64, max_iter: usize) -> (Vec<f64>, usize, bool) {
    let n = g.n_nodes();
    if n == 0 || g.n_edges() == 0 {
        return (vec![0.0; n], 0, true);
    }
    let mut x = vec![1.0; n];
    let mut next = vec![0.0; n];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        next.par_iter_mut().enumerate().with_min_len(256).for_each(|(v, out)| {
            let mut acc = x[v];
            for (&u, &w) in g.neighbors(v).iter().zip(g.neighbor_weights(v)) {
                acc += w * x[u as usize];
            }
            *out = acc;
        });
        let max = next.iter().cloned().fold(0.0, f64::max);
        let mut change: f64 = 0.0;
        for (xi, ni) in x.iter_mut().zip(next.iter()) {
            let v = ni / max;
            change = change.max((v - *xi).abs());
            *xi = v;
        }
        if change < tolerance {
            break;
        }
    }
    (x, iterations, false)
}

/// Local clustering coefficient; `None` for nodes with fewer than two neighbors.
pub fn local_clustering(g: &UGraph) -> Vec<Option<f64>> {
    let n = g.n_nodes();
    (0..n)
        .into_par_iter()
        .with_min_len(64)
        .map(|v| {
            let nb = g.neighbors(v);
            let k = nb.len();
            if k < 2 {
                return None;
            }
            let mut links = 0usize;
            for (i, &a) in nb.iter().enumerate() {
                // count neighbors of a inside nb[i+1..] by sorted merge
                let rest = &nb[i + 1..];
                let na = g.neighbors(a as usize);
                let (mut p, mut q) = (0, 0);
                while p < rest.len() && q < na.len() {
                    match rest[p].cmp(&na[q]) {
                        std::cmp::Ordering::Less => p += 1,
                        std::cmp::Ordering::Greater => q += 1,
                        std::cmp::Ordering::Equal => {
                            links += 1;
                            p += 1;
                            q += 1;
                        }
                    }
                }
            }
            Some(2.0 * links as f64 / (k as f64 * (k as f64 - 1.0)))
        })
        .collect()
}

/// Degree (normalized by n-1), strength, closeness, betweenness and
/// eigenvector centrality of every node.
pub fn node_metrics(g: &UGraph, cfg: &CentralityConfig) -> CentralityTable {
    let n = g.n_nodes();
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let degree = (0..n).map(|v| g.degree(v) as f64 / denom).collect();
    let strength = (0..n).map(|v| g.strength(v)).collect();
    let (closeness, betweenness, betweenness_mode) = closeness_and_betweenness(g, cfg);
    let (eigen, iters, degenerate) = eigenvector(g, cfg.eigen_tolerance, cfg.eigen_max_iter);
    if degenerate && n > 0 {
        log::debug!("eigenvector centrality on an edgeless graph of {n} nodes set to zero");
    }
    CentralityTable {
        degree,
        strength,
        closeness,
        betweenness,
        eigenvector: eigen,
        betweenness_mode,
        eigenvector_degenerate: degenerate,
        eigenvector_iterations: iters,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> CentralityConfig {
        CentralityConfig::default()
    }

    #[test]
    fn star_eigenvector() {
        let g = UGraph::from_edges(4, &[(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0)]);
        let (x, _, _) = eigenvector(&g, 1e-12, 10_000);
        assert!((x[0] - 1.0).abs() < 1e-12);
        for v in &x[1..] {
            assert!((v - 1.0 / 3f64.sqrt()).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn complete_graph_degree_is_one() {
        let mut edges = Vec::new();
        for a in 0..5u32 {
            for b in a + 1..5 {
                edges.push((a, b, 1.0));
            }
        }
        let t = node_metrics(&UGraph::from_edges(5, &edges), &cfg());
        assert!(t.degree.iter().all(|&d| d == 1.0));
        assert!(t.closeness.iter().all(|&c| (c - 1.0).abs() < 1e-15));
        assert!(t.betweenness.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn disconnected_dyads_have_finite_closeness() {
        let g = UGraph::from_edges(4, &[(0, 1, 1.0), (2, 3, 1.0)]);
        let t = node_metrics(&g, &cfg());
        assert!(t.closeness.iter().all(|&c| c == 1.0));
        assert!(t.eigenvector.iter().all(|c| c.is_finite()));
    }

    #[test]
    fn path_betweenness() {
        // 0 - 1 - 2: middle node lies on the only 0..2 path.
        let g = UGraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]);
        let (_, b, _) = closeness_and_betweenness(&g, &cfg());
        assert_eq!(b, vec![0.0, 1.0, 0.0]);
        let (eb, _) = edge_betweenness(&g, &cfg());
        assert_eq!(eb[0], eb[1]);
        assert!((eb[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_edge_betweenness_is_one() {
        let g = UGraph::from_edges(2, &[(0, 1, 1.0)]);
        let (eb, mode) = edge_betweenness(&g, &cfg());
        assert_eq!(eb, vec![1.0]);
        assert_eq!(mode, Betweenness::Exact);
    }

    #[test]
    fn clustering_triangle_and_star() {
        let tri = UGraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]);
        assert_eq!(local_clustering(&tri), vec![Some(1.0); 3]);
        let star = UGraph::from_edges(3, &[(0, 1, 1.0), (0, 2, 1.0)]);
        assert_eq!(local_clustering(&star), vec![Some(0.0), None, None]);
    }

    #[test]
    fn edgeless_eigenvector_is_zero() {
        let g = UGraph::from_edges(3, &[]);
        let t = node_metrics(&g, &cfg());
        assert!(t.eigenvector_degenerate);
        assert!(t.eigenvector.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sampled_betweenness_is_flagged() {
        let edges: Vec<(u32, u32, f64)> = (0..30u32).map(|i| (i, (i + 1) % 30, 1.0)).collect();
        let g = UGraph::from_edges(30, &edges);
        let c = CentralityConfig { exact_threshold: 10, pivots: 8, ..cfg() };
        let (_, b, mode) = closeness_and_betweenness(&g, &c);
        assert_eq!(mode, Betweenness::Sampled { pivots: 8 });
        assert!(b.iter().all(|x| x.is_finite() && *x >= 0.0));
    }
}
