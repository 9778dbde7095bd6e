//! Per-contract feature assembly and encoding.
//!
//! Every row joins contract-level red flags, the metrics of its buyer-supplier
//! edge, node metrics of both parties (bipartite coreness plus centralities in
//! the same-side projection) and yearly party aggregates. Categorical columns
//! are one-hot encoded with a missing indicator; missing continuous values
//! are replaced by an out-of-range sentinel recorded in the column metadata.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Code, DirectOrigin, LabeledDataset, ProcedureType, SupplierSize, SupplyType, Venue};
use crate::error::{Error, Result};
use crate::graph::{
    build_year_graph, competitive_clustering, coreness, edge_aggregates, node_metrics, project, Betweenness,
    CentralityConfig, CentralityTable, EdgeMetrics, Side, YearGraph,
};
use crate::redflags::{compute_risk_table, RiskTable};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    OneHot,
    MissingIndicator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Domain,
    Network,
    Aggregate,
}

impl FeatureSource {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSource::Domain => "domain",
            FeatureSource::Network => "network",
            FeatureSource::Aggregate => "aggregate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
    /// Value standing for "missing" in a continuous column.
    pub sentinel: Option<f64>,
    pub source: FeatureSource,
    /// Pre-encoding feature this column derives from.
    pub origin: String,
}

/// Encoded numeric matrix, row-major, rows aligned with the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub columns: Vec<ColumnMeta>,
    n_rows: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(columns: Vec<ColumnMeta>, n_rows: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_rows * columns.len() {
            return Err(Error::invalid(format!(
                "matrix data has {} values, expected {} rows x {} columns",
                data.len(),
                n_rows,
                columns.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invariant("feature matrix contains non-finite values"));
        }
        Ok(FeatureMatrix { columns, n_rows, data })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    /// Row-major values.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.columns.len() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let w = self.columns.len();
        &self.data[row * w..(row + 1) * w]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.get(r, col)).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Rows selected in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.n_cols());
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        FeatureMatrix { columns: self.columns.clone(), n_rows: rows.len(), data }
    }

    /// Missingness of the pre-encoding feature behind column `col`, recovered
    /// from the column metadata alone.
    pub fn missing_mask(&self, col: usize) -> Vec<bool> {
        let meta = &self.columns[col];
        match meta.kind {
            ColumnKind::Continuous => match meta.sentinel {
                Some(s) => self.column(col).into_iter().map(|v| v == s).collect(),
                None => vec![false; self.n_rows],
            },
            ColumnKind::OneHot | ColumnKind::MissingIndicator => {
                let ind = self
                    .columns
                    .iter()
                    .position(|c| c.origin == meta.origin && c.kind == ColumnKind::MissingIndicator)
                    .expect("every categorical has a missing indicator");
                self.column(ind).into_iter().map(|v| v == 1.0).collect()
            }
        }
    }

    /// Hash over column names and kinds; models record it to refuse scoring
    /// matrices with a different layout.
    pub fn schema_hash(&self) -> String {
        let text: Vec<String> = self.columns.iter().map(|c| format!("{}:{:?}", c.name, c.kind)).collect();
        crate::util::sha256_hex(text.join("\n").as_bytes())
    }

    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        crate::util::sha256_hex(&buf)
    }

    /// CSV with a header row; values use the shortest round-trip formatting.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        for r in 0..self.n_rows {
            w.write_record(self.row(r).iter().map(f64::to_string))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV written by [`Self::write_csv`] against its manifest.
    pub fn read_csv<R: Read>(source: R, columns: Vec<ColumnMeta>) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(source);
        let header = rdr.headers()?.clone();
        if header.len() != columns.len() {
            return Err(Error::SchemaMismatch(format!(
                "feature file has {} columns, manifest declares {}",
                header.len(),
                columns.len()
            )));
        }
        for (h, c) in header.iter().zip(&columns) {
            if h != c.name {
                return Err(Error::SchemaMismatch(format!("column '{h}' where manifest declares '{}'", c.name)));
            }
        }
        let mut data = Vec::new();
        let mut n_rows = 0;
        for rec in rdr.records() {
            let rec = rec?;
            for v in rec.iter() {
                data.push(v.parse::<f64>().map_err(|_| Error::data(format!("row {}: bad number '{v}'", n_rows + 1)))?);
            }
            n_rows += 1;
        }
        FeatureMatrix::new(columns, n_rows, data)
    }
}

/// Yearly aggregates of one party (supplier or buyer).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupplierAggregates {
    pub n_contracts: usize,
    pub avg_cri: f64,
    pub prop_recorded_direct: f64,
    pub prop_post_direct: f64,
}

/// Aggregates over each party's contracts of `year`, keyed by party id.
pub fn party_aggregates(
    dataset: &LabeledDataset,
    cri: &[f64],
    year: i32,
    side: Side,
) -> BTreeMap<String, SupplierAggregates> {
    let mut acc: BTreeMap<&str, (usize, f64, usize, usize)> = BTreeMap::new();
    for &i in dataset.year_index.get(&year).map(Vec::as_slice).unwrap_or(&[]) {
        let c = &dataset.contracts[i];
        let key = match side {
            Side::Supplier => c.supplier_id.as_str(),
            Side::Buyer => c.buyer_id.as_str(),
        };
        let e = acc.entry(key).or_default();
        e.0 += 1;
        e.1 += cri[i];
        e.2 += c.is_direct() as usize;
        e.3 += c.is_post_direct() as usize;
    }
    acc.into_iter()
        .map(|(k, (n, s, d, p))| {
            let nf = n as f64;
            (
                k.to_string(),
                SupplierAggregates {
                    n_contracts: n,
                    avg_cri: s / nf,
                    prop_recorded_direct: d as f64 / nf,
                    prop_post_direct: p as f64 / nf,
                },
            )
        })
        .collect()
}

pub fn supplier_aggregates(dataset: &LabeledDataset, cri: &[f64], year: i32) -> BTreeMap<String, SupplierAggregates> {
    party_aggregates(dataset, cri, year, Side::Supplier)
}

/// Network metrics of one year: bipartite graph, edges, and both sides.
#[derive(Debug, Clone)]
pub struct YearNetwork {
    pub graph: YearGraph,
    pub edges: Vec<EdgeMetrics>,
    pub edge_betweenness_mode: Betweenness,
    pub supplier: SideMetrics,
    pub buyer: SideMetrics,
}

/// Per-node metrics of one side, indexed like the year graph's side.
#[derive(Debug, Clone)]
pub struct SideMetrics {
    pub coreness: Vec<u64>,
    pub weighted_coreness: Vec<u64>,
    pub projection: CentralityTable,
    pub competitive_clustering: Vec<Option<f64>>,
}

pub fn year_network(dataset: &LabeledDataset, cri: &[f64], year: i32, cfg: &CentralityConfig) -> YearNetwork {
    let graph = build_year_graph(dataset, year);
    let (edges, edge_betweenness_mode) = edge_aggregates(&graph, dataset, cri, cfg);
    let bip = graph.to_ugraph();
    let k = coreness(&bip, false);
    let s = coreness(&bip, true);
    let nb = graph.n_buyers();
    let side = |side: Side| {
        let range = match side {
            Side::Buyer => 0..nb,
            Side::Supplier => nb..bip.n_nodes(),
        };
        let proj = project(&graph, side);
        SideMetrics {
            coreness: k[range.clone()].to_vec(),
            weighted_coreness: s[range].to_vec(),
            projection: node_metrics(&proj.graph, cfg),
            competitive_clustering: competitive_clustering(&graph, dataset, side),
        }
    };
    let supplier = side(Side::Supplier);
    let buyer = side(Side::Buyer);
    YearNetwork { graph, edges, edge_betweenness_mode, supplier, buyer }
}

/// A feature before encoding.
#[derive(Debug, Clone, PartialEq)]
pub enum RawColumn {
    Continuous { name: String, source: FeatureSource, values: Vec<Option<f64>> },
    Categorical { name: String, source: FeatureSource, levels: Vec<String>, values: Vec<Option<usize>> },
}

impl RawColumn {
    pub fn name(&self) -> &str {
        match self {
            RawColumn::Continuous { name, .. } | RawColumn::Categorical { name, .. } => name,
        }
    }
}

/// Features in their natural types, one entry per pre-encoding feature.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawFeatures {
    pub n_rows: usize,
    pub columns: Vec<RawColumn>,
}

impl RawFeatures {
    fn push_continuous(&mut self, name: &str, source: FeatureSource, values: Vec<Option<f64>>) {
        debug_assert_eq!(values.len(), self.n_rows);
        self.columns.push(RawColumn::Continuous { name: name.into(), source, values });
    }

    fn push_categorical<T: Code + PartialEq>(&mut self, source: FeatureSource, values: Vec<Option<T>>) {
        let levels: Vec<String> = T::ALL.iter().map(|l| l.code().to_string()).collect();
        let idx = values.into_iter().map(|v| v.map(|v| T::ALL.iter().position(|l| *l == v).unwrap())).collect();
        self.columns.push(RawColumn::Categorical { name: T::FIELD.into(), source, levels, values: idx });
    }
}

/// Contract-level domain features, including the price decile within year.
fn domain_columns(dataset: &LabeledDataset, risk: &RiskTable, raw: &mut RawFeatures) {
    use FeatureSource::Domain;
    let cs = &dataset.contracts;
    let mut decile = vec![None; cs.len()];
    for rows in dataset.year_index.values() {
        let mut prices: Vec<f64> = rows.iter().map(|&i| cs[i].price).collect();
        prices.sort_by(f64::total_cmp);
        let n = prices.len();
        for &i in rows {
            let below = prices.partition_point(|&p| p < cs[i].price);
            decile[i] = Some((1 + 10 * below / n) as f64);
        }
    }
    let col = |f: &dyn Fn(usize) -> Option<f64>| (0..cs.len()).map(f).collect::<Vec<_>>();
    raw.push_continuous("year", Domain, col(&|i| Some(cs[i].year() as f64)));
    raw.push_continuous("log_price", Domain, col(&|i| Some((cs[i].price + 1.0).log10())));
    raw.push_continuous("price_decile", Domain, decile);
    raw.push_continuous("n_bidders", Domain, col(&|i| cs[i].n_bidders.map(f64::from)));
    raw.push_continuous("submission_days", Domain, col(&|i| risk.submission_days[i].map(|d| d as f64)));
    raw.push_continuous("decision_days", Domain, col(&|i| risk.decision_days[i].map(|d| d as f64)));
    raw.push_continuous(
        "benford_mad",
        Domain,
        col(&|i| risk.benford[i].eligible.then_some(risk.benford[i].mad).flatten()),
    );
    raw.push_continuous("rf_benford", Domain, col(&|i| risk.flags[i].benford));
    raw.push_continuous("rf_decision_period", Domain, col(&|i| Some(risk.flags[i].decision_period)));
    raw.push_continuous("rf_submission_period", Domain, col(&|i| Some(risk.flags[i].submission_period)));
    raw.push_continuous("rf_single_bidder", Domain, col(&|i| risk.flags[i].single_bidder));
    raw.push_continuous("rf_procedure_type", Domain, col(&|i| Some(risk.flags[i].procedure_type)));
    raw.push_continuous("rf_buyer_dependence", Domain, col(&|i| Some(risk.flags[i].buyer_dependence)));
    raw.push_continuous("cri", Domain, col(&|i| Some(risk.cri[i])));

    raw.push_categorical::<ProcedureType>(Domain, cs.iter().map(|c| Some(c.procedure_type)).collect());
    raw.push_categorical::<DirectOrigin>(Domain, cs.iter().map(|c| Some(c.direct_origin)).collect());
    raw.push_categorical::<SupplyType>(Domain, cs.iter().map(|c| c.supply_type).collect());
    raw.push_categorical::<SupplierSize>(Domain, cs.iter().map(|c| c.supplier_size).collect());
    raw.push_categorical::<Venue>(Domain, cs.iter().map(|c| c.venue).collect());

    let mut frameworks: Vec<String> = cs.iter().filter_map(|c| c.legal_framework.clone()).collect();
    frameworks.sort_unstable();
    frameworks.dedup();
    let values = cs
        .iter()
        .map(|c| c.legal_framework.as_ref().map(|f| frameworks.binary_search(f).unwrap()))
        .collect();
    raw.columns.push(RawColumn::Categorical {
        name: "legal_framework".into(),
        source: Domain,
        levels: frameworks,
        values,
    });
}

/// Where a contract sits in its year's network.
struct Position {
    year: i32,
    edge: usize,
    buyer: usize,
    supplier: usize,
}

/// Joins contract-level flags, network metrics and aggregates into raw
/// features. `networks` must hold an entry for every dataset year.
pub fn assemble(
    dataset: &LabeledDataset,
    risk: &RiskTable,
    networks: &BTreeMap<i32, YearNetwork>,
    supplier_aggs: &BTreeMap<i32, BTreeMap<String, SupplierAggregates>>,
    buyer_aggs: &BTreeMap<i32, BTreeMap<String, SupplierAggregates>>,
) -> Result<RawFeatures> {
    let n = dataset.len();
    let mut pos = Vec::with_capacity(n);
    for (i, c) in dataset.contracts.iter().enumerate() {
        let year = c.year();
        let net = networks
            .get(&year)
            .ok_or_else(|| Error::invariant(format!("no network metrics for year {year} (contract row {i})")))?;
        let buyer = net.graph.buyer_index(&c.buyer_id);
        let supplier = net.graph.supplier_index(&c.supplier_id);
        let edge = buyer.zip(supplier).and_then(|(b, s)| net.graph.edge_index(b, s));
        let (Some(buyer), Some(supplier), Some(edge)) = (buyer, supplier, edge) else {
            return Err(Error::invariant(format!("contract row {i} missing from the {year} network")));
        };
        pos.push(Position { year, edge, buyer, supplier });
    }

    let mut raw = RawFeatures { n_rows: n, columns: Vec::new() };
    domain_columns(dataset, risk, &mut raw);

    use FeatureSource::{Aggregate, Network};
    let edge_col = |f: &dyn Fn(&EdgeMetrics, &crate::graph::BipartiteEdge) -> Option<f64>| -> Vec<Option<f64>> {
        pos.iter()
            .map(|p| {
                let net = &networks[&p.year];
                f(&net.edges[p.edge], &net.graph.edges[p.edge])
            })
            .collect()
    };
    raw.push_continuous("edge_contracts", Network, edge_col(&|_, e| Some(e.weight as f64)));
    raw.push_continuous("edge_spend", Network, edge_col(&|_, e| Some(e.spend)));
    raw.push_continuous("edge_betweenness", Network, edge_col(&|m, _| Some(m.edge_betweenness)));
    raw.push_continuous("edge_avg_cri", Network, edge_col(&|m, _| Some(m.avg_cri)));
    raw.push_continuous("edge_neighborhood_avg_cri", Network, edge_col(&|m, _| m.neighborhood_avg_cri));
    raw.push_continuous("edge_neighborhood_prop_direct", Network, edge_col(&|m, _| m.neighborhood_prop_direct));
    raw.push_continuous("edge_active_weeks", Network, edge_col(&|m, _| Some(m.active_weeks as f64)));
    raw.push_continuous("edge_contracts_per_week", Network, edge_col(&|m, _| Some(m.contracts_per_week)));
    raw.push_continuous("edge_spend_per_week", Network, edge_col(&|m, _| Some(m.spend_per_week)));

    for side in [Side::Supplier, Side::Buyer] {
        let prefix = match side {
            Side::Supplier => "supplier",
            Side::Buyer => "buyer",
        };
        let node_col = |f: &dyn Fn(&SideMetrics, usize) -> Option<f64>| -> Vec<Option<f64>> {
            pos.iter()
                .map(|p| {
                    let net = &networks[&p.year];
                    match side {
                        Side::Supplier => f(&net.supplier, p.supplier),
                        Side::Buyer => f(&net.buyer, p.buyer),
                    }
                })
                .collect()
        };
        let name = |s: &str| format!("{prefix}_{s}");
        raw.push_continuous(&name("coreness"), Network, node_col(&|m, v| Some(m.coreness[v] as f64)));
        raw.push_continuous(&name("weighted_coreness"), Network, node_col(&|m, v| Some(m.weighted_coreness[v] as f64)));
        raw.push_continuous(&name("degree"), Network, node_col(&|m, v| Some(m.projection.degree[v])));
        raw.push_continuous(&name("strength"), Network, node_col(&|m, v| Some(m.projection.strength[v])));
        raw.push_continuous(&name("closeness"), Network, node_col(&|m, v| Some(m.projection.closeness[v])));
        raw.push_continuous(&name("betweenness"), Network, node_col(&|m, v| Some(m.projection.betweenness[v])));
        raw.push_continuous(&name("eigenvector"), Network, node_col(&|m, v| Some(m.projection.eigenvector[v])));
        raw.push_continuous(&name("competitive_clustering"), Network, node_col(&|m, v| m.competitive_clustering[v]));
    }

    for (side, aggs) in [(Side::Supplier, supplier_aggs), (Side::Buyer, buyer_aggs)] {
        let prefix = match side {
            Side::Supplier => "supplier",
            Side::Buyer => "buyer",
        };
        let mut rows = Vec::with_capacity(n);
        for (i, c) in dataset.contracts.iter().enumerate() {
            let id = match side {
                Side::Supplier => &c.supplier_id,
                Side::Buyer => &c.buyer_id,
            };
            let a = aggs
                .get(&c.year())
                .and_then(|m| m.get(id))
                .ok_or_else(|| Error::invariant(format!("no {prefix} aggregates for contract row {i}")))?;
            rows.push(*a);
        }
        let agg_col = |f: &dyn Fn(&SupplierAggregates) -> f64| rows.iter().map(|a| Some(f(a))).collect::<Vec<_>>();
        raw.push_continuous(&format!("{prefix}_n_contracts"), Aggregate, agg_col(&|a| a.n_contracts as f64));
        raw.push_continuous(&format!("{prefix}_avg_cri"), Aggregate, agg_col(&|a| a.avg_cri));
        raw.push_continuous(&format!("{prefix}_prop_recorded_direct"), Aggregate, agg_col(&|a| a.prop_recorded_direct));
        raw.push_continuous(&format!("{prefix}_prop_post_direct"), Aggregate, agg_col(&|a| a.prop_post_direct));
    }
    Ok(raw)
}

/// Sentinel for a continuous column with observed range [min, max].
pub fn sentinel_for(min: f64, max: f64) -> f64 {
    if min >= 0.0 {
        min - 1.0
    } else {
        let range = max - min;
        if range > 0.0 {
            min - 3.0 * range
        } else {
            min - 1.0
        }
    }
}

/// One-hot encodes categoricals (plus a missing indicator each) and fills
/// missing continuous values with the column sentinel. Returns the matrix
/// and one diagnostic per all-missing continuous column.
pub fn encode(raw: &RawFeatures) -> (FeatureMatrix, Vec<String>) {
    let n = raw.n_rows;
    let mut columns = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut diagnostics = Vec::new();
    for rc in &raw.columns {
        match rc {
            RawColumn::Continuous { name, source, values } => {
                let present = values.iter().flatten();
                let (min, max) = present.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                let any_missing = values.iter().any(Option::is_none);
                let sentinel = if !any_missing {
                    None
                } else if min.is_finite() {
                    Some(sentinel_for(min, max))
                } else {
                    diagnostics.push(format!("column '{name}' is entirely missing; sentinel 0"));
                    Some(0.0)
                };
                cols.push(values.iter().map(|v| v.or(sentinel).unwrap()).collect());
                columns.push(ColumnMeta {
                    name: name.clone(),
                    kind: ColumnKind::Continuous,
                    sentinel,
                    source: *source,
                    origin: name.clone(),
                });
            }
            RawColumn::Categorical { name, source, levels, values } => {
                for (k, level) in levels.iter().enumerate() {
                    cols.push(values.iter().map(|v| (*v == Some(k)) as u8 as f64).collect());
                    columns.push(ColumnMeta {
                        name: format!("{name}={level}"),
                        kind: ColumnKind::OneHot,
                        sentinel: None,
                        source: *source,
                        origin: name.clone(),
                    });
                }
                cols.push(values.iter().map(|v| v.is_none() as u8 as f64).collect());
                columns.push(ColumnMeta {
                    name: format!("{name}=missing"),
                    kind: ColumnKind::MissingIndicator,
                    sentinel: None,
                    source: *source,
                    origin: name.clone(),
                });
            }
        }
    }
    let w = cols.len();
    let mut data = vec![0.0; n * w];
    for (j, col) in cols.iter().enumerate() {
        for (r, &v) in col.iter().enumerate() {
            data[r * w + j] = v;
        }
    }
    (FeatureMatrix::new(columns, n, data).expect("encoded values are finite"), diagnostics)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureDiagnostics {
    /// Years whose projection betweenness used pivot sampling, per side.
    pub sampled_betweenness: Vec<(i32, String)>,
    /// Years whose projection had no edges, per side.
    pub degenerate_eigenvector: Vec<(i32, String)>,
    pub encoding: Vec<String>,
}

/// Everything produced on the way to the feature matrix.
#[derive(Debug, Clone)]
pub struct FeatureBuild {
    pub risk: RiskTable,
    pub matrix: FeatureMatrix,
    pub diagnostics: FeatureDiagnostics,
}

/// Runs red flags, per-year networks, aggregation, assembly and encoding.
pub fn build_features(dataset: &LabeledDataset, cfg: &CentralityConfig) -> Result<FeatureBuild> {
    let risk = compute_risk_table(dataset);
    let years = dataset.years();
    let per_year: Vec<(YearNetwork, BTreeMap<String, SupplierAggregates>, BTreeMap<String, SupplierAggregates>)> = years
        .par_iter()
        .map(|&y| {
            (
                year_network(dataset, &risk.cri, y, cfg),
                party_aggregates(dataset, &risk.cri, y, Side::Supplier),
                party_aggregates(dataset, &risk.cri, y, Side::Buyer),
            )
        })
        .collect();
    let mut diagnostics = FeatureDiagnostics::default();
    let mut networks = BTreeMap::new();
    let mut s_aggs = BTreeMap::new();
    let mut b_aggs = BTreeMap::new();
    for (&y, (net, sa, ba)) in years.iter().zip(per_year) {
        for (label, m) in [("supplier", &net.supplier), ("buyer", &net.buyer)] {
            if matches!(m.projection.betweenness_mode, Betweenness::Sampled { .. }) {
                diagnostics.sampled_betweenness.push((y, label.into()));
            }
            if m.projection.eigenvector_degenerate {
                diagnostics.degenerate_eigenvector.push((y, label.into()));
            }
        }
        networks.insert(y, net);
        s_aggs.insert(y, sa);
        b_aggs.insert(y, ba);
    }
    let raw = assemble(dataset, &risk, &networks, &s_aggs, &b_aggs)?;
    let (matrix, encoding) = encode(&raw);
    diagnostics.encoding = encoding;
    Ok(FeatureBuild { risk, matrix, diagnostics })
}

/// Human-readable feature names and the column each maps to.
pub const DISPLAY_NAMES: &[(&str, &str)] = &[
    ("Supplier Coreness (weighted degree)", "supplier_weighted_coreness"),
    ("Supplier Coreness", "supplier_coreness"),
    ("Buyer Coreness (weighted degree)", "buyer_weighted_coreness"),
    ("Buyer Coreness", "buyer_coreness"),
    ("Supplier Eigenvector Centrality", "supplier_eigenvector"),
    ("Buyer Eigenvector Centrality", "buyer_eigenvector"),
    ("Supplier Degree", "supplier_degree"),
    ("Buyer Degree", "buyer_degree"),
    ("Supplier Strength", "supplier_strength"),
    ("Buyer Strength", "buyer_strength"),
    ("Supplier Closeness Centrality", "supplier_closeness"),
    ("Buyer Closeness Centrality", "buyer_closeness"),
    ("Supplier Betweenness Centrality", "supplier_betweenness"),
    ("Buyer Betweenness Centrality", "buyer_betweenness"),
    ("Supplier Competitive Clustering", "supplier_competitive_clustering"),
    ("Buyer Competitive Clustering", "buyer_competitive_clustering"),
    ("Supplier Proportion of Recorded Direct Procedures", "supplier_prop_recorded_direct"),
    ("Supplier Proportion of Post-Direct Procedures", "supplier_prop_post_direct"),
    ("Supplier Avg. CRI", "supplier_avg_cri"),
    ("Supplier Number of Contracts", "supplier_n_contracts"),
    ("Buyer Proportion of Recorded Direct Procedures", "buyer_prop_recorded_direct"),
    ("Buyer Avg. CRI", "buyer_avg_cri"),
    ("Buyer Number of Contracts", "buyer_n_contracts"),
    ("Buyer-Supplier Spending per Active Week", "edge_spend_per_week"),
    ("Buyer-Supplier Active Weeks", "edge_active_weeks"),
    ("Buyer-Supplier Number of Contracts per Week", "edge_contracts_per_week"),
    ("Edge Betweenness Centrality", "edge_betweenness"),
    ("Edge Avg. CRI", "edge_avg_cri"),
    ("Neighborhood Avg. CRI", "edge_neighborhood_avg_cri"),
    ("Neighborhood Prop. Recorded-Direct Procedures", "edge_neighborhood_prop_direct"),
    ("MAD", "benford_mad"),
    ("CRI", "cri"),
    ("Contract Price", "log_price"),
    ("Contract Price Decile", "price_decile"),
    ("Contract Year", "year"),
    ("Number of Bidders", "n_bidders"),
    ("Submission Period", "submission_days"),
    ("Decision Period", "decision_days"),
    ("R.F. Benford", "rf_benford"),
    ("R.F. Decision Period", "rf_decision_period"),
    ("R.F. Submission Period", "rf_submission_period"),
    ("R.F. Single Bidder", "rf_single_bidder"),
    ("R.F. Procedure Type", "rf_procedure_type"),
    ("Buyer Dependence", "rf_buyer_dependence"),
    ("Procedure Type", "procedure_type"),
    ("Direct Procedure Origin", "direct_origin"),
    ("Supply Type", "supply_type"),
    ("Supplier Size", "supplier_size"),
    ("Procedure venue", "venue"),
    ("Legal Framework", "legal_framework"),
];

/// Human-readable name of a pre-encoding feature, falling back to the id.
pub fn display_name(origin: &str) -> &str {
    DISPLAY_NAMES.iter().find(|(_, c)| *c == origin).map(|(d, _)| *d).unwrap_or(origin)
}

/// Sidecar manifest persisted next to the feature CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub schema_version: u32,
    pub n_rows: usize,
    pub columns: Vec<ColumnMeta>,
    pub schema_hash: String,
    pub config_hash: String,
    pub dataset_hash: String,
    pub content_hash: String,
    pub display_names: BTreeMap<String, String>,
    pub diagnostics: FeatureDiagnostics,
}

impl FeatureManifest {
    pub fn new(matrix: &FeatureMatrix, config_hash: String, dataset_hash: String, diagnostics: FeatureDiagnostics) -> Self {
        let mut display_names = BTreeMap::new();
        for c in &matrix.columns {
            display_names.entry(c.origin.clone()).or_insert_with(|| display_name(&c.origin).to_string());
        }
        FeatureManifest {
            schema_version: SCHEMA_VERSION,
            n_rows: matrix.n_rows(),
            columns: matrix.columns.clone(),
            schema_hash: matrix.schema_hash(),
            config_hash,
            dataset_hash,
            content_hash: matrix.content_hash(),
            display_names,
            diagnostics,
        }
    }
}

/// Column layout check used before scoring; names the first difference.
pub fn check_schema(expected: &[String], matrix: &FeatureMatrix) -> Result<()> {
    for (k, (e, c)) in expected.iter().zip(&matrix.columns).enumerate() {
        if *e != c.name {
            return Err(Error::SchemaMismatch(format!("column {k}: expected '{e}', found '{}'", c.name)));
        }
    }
    if expected.len() != matrix.n_cols() {
        let k = expected.len().min(matrix.n_cols());
        let name = expected.get(k).or_else(|| matrix.columns.get(k).map(|c| &c.name)).unwrap();
        return Err(Error::SchemaMismatch(format!(
            "column {k} ('{name}') present on one side only: expected {} columns, found {}",
            expected.len(),
            matrix.n_cols()
        )));
    }
    Ok(())
}

/// Source group of each column, by name.
pub fn source_by_column(matrix: &FeatureMatrix) -> HashMap<&str, FeatureSource> {
    matrix.columns.iter().map(|c| (c.name.as_str(), c.source)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ContractRecord;
    use chrono::NaiveDate;

    fn rec(id: usize, buyer: &str, supplier: &str, procedure: ProcedureType) -> ContractRecord {
        ContractRecord {
            contract_id: format!("c{id}"),
            buyer_id: buyer.into(),
            supplier_id: supplier.into(),
            sign_date: NaiveDate::from_ymd_opt(2020, 3, 1 + id as u32 % 28).unwrap(),
            price: 1000.0 * (id as f64 + 1.0),
            procedure_type: procedure,
            direct_origin: if procedure == ProcedureType::Direct { DirectOrigin::Real } else { DirectOrigin::NotApplicable },
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
    fn aggregates_per_supplier() {
        let ds = LabeledDataset::unlabeled(vec![
            rec(0, "B", "S", ProcedureType::Direct),
            rec(1, "B", "S", ProcedureType::Direct),
            rec(2, "B", "S", ProcedureType::Direct),
            rec(3, "B", "S", ProcedureType::Open),
            rec(4, "B", "T", ProcedureType::Open),
        ]);
        let cri = [0.2, 0.6, 0.4, 0.4, 0.9];
        let a = supplier_aggregates(&ds, &cri, 2020);
        assert_eq!(a["S"].n_contracts, 4);
        assert!((a["S"].avg_cri - 0.4).abs() < 1e-15);
        assert_eq!(a["S"].prop_recorded_direct, 0.75);
        assert_eq!(a["S"].prop_post_direct, 0.0);
        assert_eq!(a["T"].avg_cri, 0.9);
    }

    #[test]
    fn sentinel_policy() {
        assert_eq!(sentinel_for(0.0, 1.0), -1.0);
        assert_eq!(sentinel_for(2.0, 5.0), 1.0);
        assert_eq!(sentinel_for(-1.0, 1.0), -7.0);
    }

    #[test]
    fn categorical_expands_with_missing_indicator() {
        let mut raw = RawFeatures { n_rows: 3, columns: Vec::new() };
        raw.push_categorical::<ProcedureType>(
            FeatureSource::Domain,
            vec![Some(ProcedureType::Open), Some(ProcedureType::Direct), None],
        );
        let (m, _) = encode(&raw);
        assert_eq!(m.n_cols(), 4);
        assert_eq!(m.columns.iter().filter(|c| c.kind == ColumnKind::OneHot).count(), 3);
        assert_eq!(m.columns[3].kind, ColumnKind::MissingIndicator);
        assert_eq!(m.missing_mask(0), vec![false, false, true]);
        assert_eq!(m.row(2), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn continuous_missing_gets_sentinel() {
        let raw = RawFeatures {
            n_rows: 3,
            columns: vec![
                RawColumn::Continuous {
                    name: "closeness".into(),
                    source: FeatureSource::Network,
                    values: vec![Some(0.0), None, Some(1.0)],
                },
                RawColumn::Continuous {
                    name: "full".into(),
                    source: FeatureSource::Network,
                    values: vec![Some(0.5), Some(0.25), Some(1.0)],
                },
                RawColumn::Continuous { name: "empty".into(), source: FeatureSource::Domain, values: vec![None; 3] },
            ],
        };
        let (m, diag) = encode(&raw);
        assert_eq!(m.columns[0].sentinel, Some(-1.0));
        assert_eq!(m.column(0), vec![0.0, -1.0, 1.0]);
        assert_eq!(m.columns[1].sentinel, None);
        assert_eq!(m.column(1), vec![0.5, 0.25, 1.0]);
        assert_eq!(m.missing_mask(0), vec![false, true, false]);
        assert_eq!(m.column(2), vec![0.0; 3]);
        assert_eq!(diag.len(), 1);
    }

    #[test]
    fn single_contract_dataset() {
        let ds = LabeledDataset::unlabeled(vec![rec(0, "B", "S", ProcedureType::Open)]);
        let fb = build_features(&ds, &CentralityConfig::default()).unwrap();
        assert_eq!(fb.matrix.n_rows(), 1);
        let get = |name: &str| fb.matrix.get(0, fb.matrix.column_index(name).unwrap());
        assert_eq!(get("edge_betweenness"), 1.0);
        assert_eq!(get("supplier_coreness"), 1.0);
        assert_eq!(get("edge_contracts"), 1.0);
    }

    #[test]
    fn shared_edge_columns_match() {
        let ds = LabeledDataset::unlabeled(vec![
            rec(0, "B1", "S1", ProcedureType::Open),
            rec(1, "B1", "S1", ProcedureType::Direct),
            rec(2, "B2", "S1", ProcedureType::Open),
            rec(3, "B2", "S2", ProcedureType::Open),
        ]);
        let fb = build_features(&ds, &CentralityConfig::default()).unwrap();
        let m = &fb.matrix;
        for (j, c) in m.columns.iter().enumerate() {
            if c.origin.starts_with("edge_") {
                assert_eq!(m.get(0, j), m.get(1, j), "{}", c.name);
            }
        }
        let price = m.column_index("log_price").unwrap();
        assert_ne!(m.get(0, price), m.get(1, price));
        let again = build_features(&ds, &CentralityConfig::default()).unwrap();
        assert_eq!(again.matrix, fb.matrix);
    }

    #[test]
    fn csv_round_trip() {
        let ds = LabeledDataset::unlabeled(vec![
            rec(0, "B1", "S1", ProcedureType::Open),
            rec(1, "B2", "S2", ProcedureType::Direct),
        ]);
        let m = build_features(&ds, &CentralityConfig::default()).unwrap().matrix;
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = FeatureMatrix::read_csv(buf.as_slice(), m.columns.clone()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn schema_check_names_first_mismatch() {
        let ds = LabeledDataset::unlabeled(vec![rec(0, "B1", "S1", ProcedureType::Open)]);
        let m = build_features(&ds, &CentralityConfig::default()).unwrap().matrix;
        let mut names = m.column_names();
        assert!(check_schema(&names, &m).is_ok());
        names[2] = "other".into();
        let err = check_schema(&names, &m).unwrap_err().to_string();
        assert!(err.contains("other"), "{err}");
    }

    #[test]
    fn display_names_map_to_unique_columns() {
        let ds = LabeledDataset::unlabeled(vec![rec(0, "B1", "S1", ProcedureType::Open)]);
        let m = build_features(&ds, &CentralityConfig::default()).unwrap().matrix;
        let mut seen = std::collections::HashSet::new();
        for (display, origin) in DISPLAY_NAMES {
            assert!(seen.insert(*origin), "{display}");
            assert!(m.columns.iter().any(|c| c.origin == *origin), "{display} -> {origin}");
        }
    }
}
