use std::collections::BTreeSet;

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use super::{build_year_graph_filtered, centrality, project, Betweenness, CentralityConfig, Side, YearGraph};
use crate::domain::LabeledDataset;

/// Metrics attached to one buyer-supplier edge of a year graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeMetrics {
    pub edge_betweenness: f64,
    pub avg_cri: f64,
    /// Mean CRI over contracts on the other edges touching either endpoint.
    pub neighborhood_avg_cri: Option<f64>,
    /// Share of recorded-direct contracts over the same neighborhood.
    pub neighborhood_prop_direct: Option<f64>,
    pub active_weeks: u32,
    pub contracts_per_week: f64,
    pub spend_per_week: f64,
}

#[derive(Default, Clone, Copy)]
struct Tally {
    edges: usize,
    contracts: usize,
    cri: f64,
    direct: usize,
}

/// Per-edge metrics in `graph.edges` order. `cri` is indexed by dataset row.
pub fn edge_aggregates(
    graph: &YearGraph,
    dataset: &LabeledDataset,
    cri: &[f64],
    cfg: &CentralityConfig,
) -> (Vec<EdgeMetrics>, Betweenness) {
    let edge_tally: Vec<Tally> = graph
        .edges
        .iter()
        .map(|e| Tally {
            edges: 1,
            contracts: e.contracts.len(),
            cri: e.contracts.iter().map(|&i| cri[i]).sum(),
            direct: e.contracts.iter().filter(|&&i| dataset.contracts[i].is_direct()).count(),
        })
        .collect();
    let node_tally = |adj: &[Vec<(u32, u32)>]| -> Vec<Tally> {
        adj.iter()
            .map(|inc| {
                inc.iter().fold(Tally::default(), |mut t, &(_, e)| {
                    let et = edge_tally[e as usize];
                    t.edges += 1;
                    t.contracts += et.contracts;
                    t.cri += et.cri;
                    t.direct += et.direct;
                    t
                })
            })
            .collect()
    };
    let buyer_tally = node_tally(&graph.buyer_adj);
    let supplier_tally = node_tally(&graph.supplier_adj);

    let (betweenness, mode) = centrality::edge_betweenness(&graph.to_ugraph(), cfg);

    let metrics = graph
        .edges
        .iter()
        .zip(&edge_tally)
        .zip(betweenness)
        .map(|((e, own), eb)| {
            let b = buyer_tally[e.buyer as usize];
            let s = supplier_tally[e.supplier as usize];
            let other_edges = b.edges + s.edges - 2;
            let other_contracts = b.contracts + s.contracts - 2 * own.contracts;
            let (nb_cri, nb_direct) = if other_edges == 0 {
                (None, None)
            } else {
                let n = other_contracts as f64;
                let direct = (b.direct + s.direct - 2 * own.direct) as f64;
                (Some(((b.cri + s.cri - 2.0 * own.cri) / n).max(0.0)), Some(direct / n))
            };
            let weeks: BTreeSet<(i32, u32)> = e
                .contracts
                .iter()
                .map(|&i| {
                    let w = dataset.contracts[i].sign_date.iso_week();
                    (w.year(), w.week())
                })
                .collect();
            let active = weeks.len() as u32;
            EdgeMetrics {
                edge_betweenness: eb,
                avg_cri: own.cri / own.contracts as f64,
                neighborhood_avg_cri: nb_cri,
                neighborhood_prop_direct: nb_direct,
                active_weeks: active,
                contracts_per_week: e.weight as f64 / active as f64,
                spend_per_week: e.spend / active as f64,
            }
        })
        .collect();
    (metrics, mode)
}

/// Local clustering of each `side` node of `graph` in the projection built
/// only from competitive contracts. Missing for nodes with fewer than two
/// competitive-projection neighbors, including nodes without any
/// competitive contract that year.
pub fn competitive_clustering(graph: &YearGraph, dataset: &LabeledDataset, side: Side) -> Vec<Option<f64>> {
    let competitive = build_year_graph_filtered(dataset, graph.year, |c| c.procedure_type.is_competitive());
    let proj = project(&competitive, side);
    let local = centrality::local_clustering(&proj.graph);
    let ids = match side {
        Side::Buyer => &graph.buyers,
        Side::Supplier => &graph.suppliers,
    };
    ids.iter()
        .map(|id| proj.ids.binary_search(id).ok().and_then(|k| local[k]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ContractRecord, DirectOrigin, ProcedureType};
    use crate::graph::build_year_graph;
    use chrono::NaiveDate;

    fn rec(id: usize, buyer: &str, supplier: &str, day: (u32, u32)) -> ContractRecord {
        ContractRecord {
            contract_id: format!("c{id}"),
            buyer_id: buyer.into(),
            supplier_id: supplier.into(),
            sign_date: NaiveDate::from_ymd_opt(2020, day.0, day.1).unwrap(),
            price: 10.0,
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

    #[test]
    fn weekly_rates() {
        // 2020-01-13 and 2020-01-15 fall in ISO week 3, 2020-02-10 in week 7.
        let ds = LabeledDataset::unlabeled(vec![
            rec(0, "B", "S", (1, 13)),
            rec(1, "B", "S", (1, 15)),
            rec(2, "B", "S", (2, 10)),
        ]);
        let g = build_year_graph(&ds, 2020);
        let (m, _) = edge_aggregates(&g, &ds, &[0.2, 0.4, 0.6], &CentralityConfig::default());
        assert_eq!(m[0].active_weeks, 2);
        assert_eq!(m[0].contracts_per_week, 1.5);
        assert_eq!(m[0].spend_per_week, 15.0);
        assert!((m[0].avg_cri - 0.4).abs() < 1e-15);
        assert_eq!(m[0].neighborhood_avg_cri, None);
        assert_eq!(m[0].neighborhood_prop_direct, None);
        assert_eq!(m[0].edge_betweenness, 1.0);
    }

    #[test]
    fn single_neighbor_edge() {
        let mut direct = rec(1, "B", "S2", (3, 3));
        direct.procedure_type = ProcedureType::Direct;
        direct.direct_origin = DirectOrigin::Real;
        let ds = LabeledDataset::unlabeled(vec![rec(0, "B", "S1", (3, 2)), direct]);
        let g = build_year_graph(&ds, 2020);
        let (m, _) = edge_aggregates(&g, &ds, &[0.1, 0.8], &CentralityConfig::default());
        assert!((m[0].neighborhood_avg_cri.unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(m[0].neighborhood_prop_direct, Some(1.0));
        assert!((m[1].neighborhood_avg_cri.unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(m[1].neighborhood_prop_direct, Some(0.0));
    }

    #[test]
    fn competitive_triangle_and_direct_exclusion() {
        // Suppliers S1, S2, S3 pairwise share a buyer through open contracts.
        let mut rows = vec![
            rec(0, "B1", "S1", (1, 6)),
            rec(1, "B1", "S2", (1, 6)),
            rec(2, "B2", "S2", (1, 6)),
            rec(3, "B2", "S3", (1, 6)),
            rec(4, "B3", "S3", (1, 6)),
            rec(5, "B3", "S1", (1, 6)),
        ];
        let g = build_year_graph(&LabeledDataset::unlabeled(rows.clone()), 2020);
        let cc = competitive_clustering(&g, &LabeledDataset::unlabeled(rows.clone()), Side::Supplier);
        assert_eq!(cc, vec![Some(1.0); 3]);

        // Making the B3 contracts direct removes the S1-S3 link.
        for r in &mut rows[4..] {
            r.procedure_type = ProcedureType::Direct;
            r.direct_origin = DirectOrigin::Real;
        }
        let ds = LabeledDataset::unlabeled(rows);
        let g = build_year_graph(&ds, 2020);
        assert_eq!(competitive_clustering(&g, &ds, Side::Supplier), vec![None, Some(0.0), None]);
    }
}
