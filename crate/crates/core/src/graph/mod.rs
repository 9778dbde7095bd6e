//! Yearly buyer-supplier networks and the metrics derived from them.
//!
//! Each year gets a bipartite multigraph collapsed to weighted edges (weight =
//! number of contracts, spend = total amount). Supplier and buyer projections
//! connect same-side nodes that share a counterpart. Shortest-path metrics
//! use hop counts; weights only enter strength, eigenvector and s-core.

mod centrality;
mod coreness;
mod edges;

pub use centrality::{
    closeness_and_betweenness, edge_betweenness, eigenvector, local_clustering, node_metrics, Betweenness,
    CentralityConfig, CentralityTable,
};
pub use coreness::{coreness, k_core, s_core};
pub use edges::{competitive_clustering, edge_aggregates, EdgeMetrics};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{ContractRecord, LabeledDataset};
use crate::error::Result;

/// Compact undirected weighted graph in CSR form. Every undirected edge is
/// stored once in `edges` and twice in the adjacency arrays.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UGraph {
    n: usize,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<f64>,
    edge_ids: Vec<u32>,
    edges: Vec<(u32, u32, f64)>,
}

impl UGraph {
    /// Builds from an undirected edge list; self-loops are dropped and parallel
    /// edges are summed.
    pub fn from_edges(n: usize, edges: &[(u32, u32, f64)]) -> Self {
        let mut merged: BTreeMap<(u32, u32), f64> = BTreeMap::new();
        for &(u, v, w) in edges {
            assert!((u as usize) < n && (v as usize) < n, "edge endpoint out of range");
            if u == v {
                continue;
            }
            let key = if u < v { (u, v) } else { (v, u) };
            *merged.entry(key).or_insert(0.0) += w;
        }
        let edges: Vec<(u32, u32, f64)> = merged.into_iter().map(|((u, v), w)| (u, v, w)).collect();
        Self::from_unique_edges(n, edges)
    }

    /// `edges` must be sorted, unique, with `u < v`.
    fn from_unique_edges(n: usize, edges: Vec<(u32, u32, f64)>) -> Self {
        let mut degree = vec![0usize; n];
        for &(u, v, _) in &edges {
            degree[u as usize] += 1;
            degree[v as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let m2 = *offsets.last().unwrap();
        let mut fill = offsets[..n].to_vec();
        let mut targets = vec![0u32; m2];
        let mut weights = vec![0.0; m2];
        let mut edge_ids = vec![0u32; m2];
        for (e, &(u, v, w)) in edges.iter().enumerate() {
            for (a, b) in [(u, v), (v, u)] {
                let slot = fill[a as usize];
                targets[slot] = b;
                weights[slot] = w;
                edge_ids[slot] = e as u32;
                fill[a as usize] += 1;
            }
        }
        // Sorted neighbor lists make clustering and traversal order canonical.
        for v in 0..n {
            let (lo, hi) = (offsets[v], offsets[v + 1]);
            let mut idx: Vec<usize> = (lo..hi).collect();
            idx.sort_by_key(|&i| targets[i]);
            let t: Vec<u32> = idx.iter().map(|&i| targets[i]).collect();
            let w: Vec<f64> = idx.iter().map(|&i| weights[i]).collect();
            let e: Vec<u32> = idx.iter().map(|&i| edge_ids[i]).collect();
            targets[lo..hi].copy_from_slice(&t);
            weights[lo..hi].copy_from_slice(&w);
            edge_ids[lo..hi].copy_from_slice(&e);
        }
        UGraph { n, offsets, targets, weights, edge_ids, edges }
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(u32, u32, f64)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn neighbor_weights(&self, v: usize) -> &[f64] {
        &self.weights[self.offsets[v]..self.offsets[v + 1]]
    }

    pub(crate) fn neighbor_edges(&self, v: usize) -> &[u32] {
        &self.edge_ids[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn strength(&self, v: usize) -> f64 {
        self.neighbor_weights(v).iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Buyer,
    Supplier,
}

/// One buyer-supplier pair with at least one contract in the year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BipartiteEdge {
    pub buyer: u32,
    pub supplier: u32,
    /// Number of contracts.
    pub weight: u32,
    pub spend: f64,
    /// Dataset row indices of the contracts on this edge, ascending.
    pub contracts: Vec<usize>,
}

/// Bipartite buyer-supplier graph for one year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearGraph {
    pub year: i32,
    /// Buyer ids sorted ascending; position is the buyer index.
    pub buyers: Vec<String>,
    pub suppliers: Vec<String>,
    pub edges: Vec<BipartiteEdge>,
    /// Per buyer: (supplier, edge index).
    pub buyer_adj: Vec<Vec<(u32, u32)>>,
    pub supplier_adj: Vec<Vec<(u32, u32)>>,
}

impl YearGraph {
    pub fn n_buyers(&self) -> usize {
        self.buyers.len()
    }

    pub fn n_suppliers(&self) -> usize {
        self.suppliers.len()
    }

    pub fn buyer_index(&self, id: &str) -> Option<usize> {
        self.buyers.binary_search_by(|b| b.as_str().cmp(id)).ok()
    }

    pub fn supplier_index(&self, id: &str) -> Option<usize> {
        self.suppliers.binary_search_by(|s| s.as_str().cmp(id)).ok()
    }

    pub fn edge_index(&self, buyer: usize, supplier: usize) -> Option<usize> {
        self.buyer_adj[buyer]
            .binary_search_by_key(&(supplier as u32), |&(s, _)| s)
            .ok()
            .map(|k| self.buyer_adj[buyer][k].1 as usize)
    }

    /// Node ordering in [`Self::to_ugraph`]: buyers first, then suppliers.
    pub fn supplier_node(&self, supplier: usize) -> usize {
        self.buyers.len() + supplier
    }

    /// Undirected view with contract counts as weights; edge ids coincide
    /// with `self.edges` indices.
    pub fn to_ugraph(&self) -> UGraph {
        let nb = self.buyers.len() as u32;
        let mut edges: Vec<(u32, u32, f64)> =
            self.edges.iter().map(|e| (e.buyer, nb + e.supplier, e.weight as f64)).collect();
        // self.edges is sorted by (buyer, supplier), which is already the
        // (u, v) order required here since buyers precede suppliers.
        debug_assert!(edges.windows(2).all(|w| (w[0].0, w[0].1) < (w[1].0, w[1].1)));
        edges.shrink_to_fit();
        UGraph::from_unique_edges(self.buyers.len() + self.suppliers.len(), edges)
    }

    pub fn total_weight(&self) -> u64 {
        self.edges.iter().map(|e| e.weight as u64).sum()
    }

    /// Edge list rows: (year, buyer_id, supplier_id, weight, spend).
    pub fn write_edge_list<W: std::io::Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["year", "buyer_id", "supplier_id", "weight", "spend"])?;
        for e in &self.edges {
            w.write_record([
                self.year.to_string(),
                self.buyers[e.buyer as usize].clone(),
                self.suppliers[e.supplier as usize].clone(),
                e.weight.to_string(),
                format!("{:.2}", e.spend),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds the year's bipartite graph from the rows selected by `filter`.
pub fn build_year_graph_filtered(
    dataset: &LabeledDataset,
    year: i32,
    filter: impl Fn(&ContractRecord) -> bool,
) -> YearGraph {
    let rows: Vec<usize> = dataset
        .year_index
        .get(&year)
        .map(|r| r.iter().copied().filter(|&i| filter(&dataset.contracts[i])).collect())
        .unwrap_or_default();
    let mut buyers: Vec<String> = rows.iter().map(|&i| dataset.contracts[i].buyer_id.clone()).collect();
    buyers.sort_unstable();
    buyers.dedup();
    let mut suppliers: Vec<String> = rows.iter().map(|&i| dataset.contracts[i].supplier_id.clone()).collect();
    suppliers.sort_unstable();
    suppliers.dedup();

    let mut pairs: BTreeMap<(u32, u32), BipartiteEdge> = BTreeMap::new();
    for &i in &rows {
        let c = &dataset.contracts[i];
        let b = buyers.binary_search(&c.buyer_id).unwrap() as u32;
        let s = suppliers.binary_search(&c.supplier_id).unwrap() as u32;
        let e = pairs.entry((b, s)).or_insert_with(|| BipartiteEdge {
            buyer: b,
            supplier: s,
            weight: 0,
            spend: 0.0,
            contracts: Vec::new(),
        });
        e.weight += 1;
        e.spend += c.price;
        e.contracts.push(i);
    }
    let edges: Vec<BipartiteEdge> = pairs.into_values().collect();
    let mut buyer_adj = vec![Vec::new(); buyers.len()];
    let mut supplier_adj = vec![Vec::new(); suppliers.len()];
    for (k, e) in edges.iter().enumerate() {
        buyer_adj[e.buyer as usize].push((e.supplier, k as u32));
        supplier_adj[e.supplier as usize].push((e.buyer, k as u32));
    }
    YearGraph { year, buyers, suppliers, edges, buyer_adj, supplier_adj }
}

/// All contracts of `year`; an absent year yields an empty graph.
pub fn build_year_graph(dataset: &LabeledDataset, year: i32) -> YearGraph {
    build_year_graph_filtered(dataset, year, |_| true)
}

/// One-mode projection of a year graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub side: Side,
    /// Node ids; same order as the corresponding side of the year graph.
    pub ids: Vec<String>,
    /// Edge weight = number of shared counterparts.
    pub graph: UGraph,
}

pub fn project(graph: &YearGraph, side: Side) -> Projection {
    let (own_adj, other_adj, ids) = match side {
        Side::Supplier => (&graph.supplier_adj, &graph.buyer_adj, &graph.suppliers),
        Side::Buyer => (&graph.buyer_adj, &graph.supplier_adj, &graph.buyers),
    };
    let n = own_adj.len();
    let mut shared = vec![0u32; n];
    let mut touched: Vec<u32> = Vec::new();
    let mut edges = Vec::new();
    for u in 0..n {
        for &(c, _) in &own_adj[u] {
            for &(v, _) in &other_adj[c as usize] {
                if (v as usize) > u {
                    if shared[v as usize] == 0 {
                        touched.push(v);
                    }
                    shared[v as usize] += 1;
                }
            }
        }
        touched.sort_unstable();
        for &v in &touched {
            edges.push((u as u32, v, shared[v as usize] as f64));
            shared[v as usize] = 0;
        }
        touched.clear();
    }
    Projection { side, ids: ids.clone(), graph: UGraph::from_unique_edges(n, edges) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ContractRecord, DirectOrigin, ProcedureType};
    use chrono::NaiveDate;

    pub(crate) fn rec(id: usize, buyer: &str, supplier: &str) -> ContractRecord {
        ContractRecord {
            contract_id: format!("c{id}"),
            buyer_id: buyer.into(),
            supplier_id: supplier.into(),
            sign_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Days::new(id as u64 % 300),
            price: 100.0 + id as f64,
            procedure_type: ProcedureType::Open,
            direct_origin: DirectOrigin::NotApplicable,
            supply_type: None,
            legal_framework: None,
            tender_publication_date: None,
            submission_deadline: None,
            decision_date: None,
            n_bidders: None,
            supplier_size: None,
            venue: None,
        }
    }

    fn dataset(pairs: &[(&str, &str)]) -> LabeledDataset {
        LabeledDataset::unlabeled(pairs.iter().enumerate().map(|(i, (b, s))| rec(i, b, s)).collect())
    }

    #[test]
    fn repeated_contracts_collapse_into_one_weighted_edge() {
        let g = build_year_graph(&dataset(&[("B1", "S1"), ("B1", "S1"), ("B1", "S1")]), 2020);
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.edges[0].weight, 3);
    }

    #[test]
    fn small_bipartite_counts() {
        let g = build_year_graph(&dataset(&[("B1", "S1"), ("B1", "S2"), ("B2", "S1")]), 2020);
        assert_eq!((g.edges.len(), g.n_buyers(), g.n_suppliers()), (3, 2, 2));
        assert_eq!(build_year_graph(&dataset(&[("B1", "S1")]), 1999).edges.len(), 0);
    }

    #[test]
    fn edge_weights_conserve_contracts() {
        let pairs: Vec<(String, String)> =
            (0..1000).map(|i| (format!("B{}", i % 13), format!("S{}", (i * 7) % 97))).collect();
        let refs: Vec<(&str, &str)> = pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let g = build_year_graph(&dataset(&refs), 2020);
        assert_eq!(g.total_weight(), 1000);
        let u = g.to_ugraph();
        let total: f64 = u.edges().iter().map(|e| e.2).sum();
        assert_eq!(total, 1000.0);
    }

    #[test]
    fn projection_weights_count_shared_counterparts() {
        let g = build_year_graph(&dataset(&[("B1", "S1"), ("B1", "S2")]), 2020);
        let p = project(&g, Side::Supplier);
        assert_eq!(p.graph.edges(), &[(0, 1, 1.0)]);

        let g = build_year_graph(&dataset(&[("B1", "S1"), ("B1", "S2"), ("B2", "S1"), ("B2", "S2"), ("B3", "S3")]), 2020);
        let p = project(&g, Side::Supplier);
        assert_eq!(p.graph.edges(), &[(0, 1, 2.0)]);
        let pb = project(&g, Side::Buyer);
        assert_eq!(pb.graph.edges(), &[(0, 1, 2.0)]);
        assert_eq!(pb.graph.degree(2), 0);
    }

    #[test]
    fn edge_list_export() {
        let g = build_year_graph(&dataset(&[("B1", "S1"), ("B1", "S1")]), 2020);
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().nth(1).unwrap(), "2020,B1,S1,2,201.00");
    }
}
