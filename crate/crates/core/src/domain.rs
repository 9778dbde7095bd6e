//! Contract and sanction records, CSV ingestion and label assignment.
//!
//! Labels follow the sanction rule: every contract of a sanctioned supplier is
//! a known positive, everything else is unlabeled. There is no negative label.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcedureType {
    Open,
    AtLeastThree,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectOrigin {
    /// Awarded directly from the start.
    Real,
    /// Recorded as direct after an unsuccessful open tender.
    PostOpen,
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupplyType {
    Goods,
    Services,
    Works,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupplierSize {
    Micro,
    Small,
    Medium,
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Venue {
    National,
    International,
    InternationalTreaty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SanctionSource {
    #[serde(rename = "EFOS")]
    Efos,
    #[serde(rename = "PCS")]
    Pcs,
}

/// Text codes used in the CSV files for each categorical enum.
pub trait Code: Sized + Copy + 'static {
    const FIELD: &'static str;
    const ALL: &'static [Self];
    fn code(self) -> &'static str;

    fn parse_code(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|v| v.code() == s)
    }
}

macro_rules! impl_code {
    ($ty:ty, $field:literal, [$($var:ident => $code:literal),+ $(,)?]) => {
        impl Code for $ty {
            const FIELD: &'static str = $field;
            const ALL: &'static [Self] = &[$(<$ty>::$var),+];
            fn code(self) -> &'static str {
                match self {
                    $(<$ty>::$var => $code),+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.code())
            }
        }

        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                <$ty as Code>::parse_code(s.trim())
                    .ok_or_else(|| Error::data(format!("unknown {} {:?}", $field, s)))
            }
        }
    };
}

impl_code!(ProcedureType, "procedure_type", [Open => "open", AtLeastThree => "at_least_three", Direct => "direct"]);
impl_code!(DirectOrigin, "direct_origin", [Real => "real", PostOpen => "post_open", NotApplicable => "not_applicable"]);
impl_code!(SupplyType, "supply_type", [Goods => "goods", Services => "services", Works => "works"]);
impl_code!(SupplierSize, "supplier_size", [Micro => "micro", Small => "small", Medium => "medium", Large => "large"]);
impl_code!(Venue, "venue", [National => "national", International => "international", InternationalTreaty => "international_treaty"]);
impl_code!(SanctionSource, "source", [Efos => "EFOS", Pcs => "PCS"]);

impl ProcedureType {
    /// Open and invitation-to-three procedures involve competition.
    pub fn is_competitive(self) -> bool {
        !matches!(self, ProcedureType::Direct)
    }
}

/// One awarded contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractRecord {
    pub contract_id: String,
    pub buyer_id: String,
    pub supplier_id: String,
    pub sign_date: NaiveDate,
    /// Contract amount in MXN.
    pub price: f64,
    pub procedure_type: ProcedureType,
    pub direct_origin: DirectOrigin,
    pub supply_type: Option<SupplyType>,
    pub legal_framework: Option<String>,
    pub tender_publication_date: Option<NaiveDate>,
    pub submission_deadline: Option<NaiveDate>,
    pub decision_date: Option<NaiveDate>,
    pub n_bidders: Option<u32>,
    pub supplier_size: Option<SupplierSize>,
    pub venue: Option<Venue>,
}

impl ContractRecord {
    pub fn year(&self) -> i32 {
        self.sign_date.year()
    }

    pub fn is_direct(&self) -> bool {
        self.procedure_type == ProcedureType::Direct
    }

    pub fn is_post_direct(&self) -> bool {
        self.direct_origin == DirectOrigin::PostOpen
    }

    /// Checks the record-level invariants; returns the violated rule.
    pub fn validate(&self, years: Option<(i32, i32)>) -> std::result::Result<(), String> {
        if self.contract_id.is_empty() {
            return Err("empty contract_id".into());
        }
        if self.buyer_id.is_empty() || self.supplier_id.is_empty() {
            return Err("empty buyer_id or supplier_id".into());
        }
        if !(self.price.is_finite() && self.price >= 0.0) {
            return Err("negative or non-finite price".into());
        }
        if let Some((lo, hi)) = years {
            if self.year() < lo || self.year() > hi {
                return Err(format!("sign_date year {} outside {lo}..={hi}", self.year()));
            }
        }
        let is_direct = self.procedure_type == ProcedureType::Direct;
        let origin_na = self.direct_origin == DirectOrigin::NotApplicable;
        if is_direct == origin_na {
            return Err("direct_origin inconsistent with procedure_type".into());
        }
        if let (Some(p), Some(d)) = (self.tender_publication_date, self.submission_deadline) {
            if p > d {
                return Err("tender_publication_date after submission_deadline".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanctionRecord {
    pub supplier_id: String,
    pub source: SanctionSource,
    pub sanction_year: i32,
}

/// Sanctions deduplicated by supplier; all sources and years are kept.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SanctionSet {
    entries: BTreeMap<String, SanctionEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanctionEntry {
    pub sources: BTreeSet<SanctionSource>,
    pub years: BTreeSet<i32>,
}

impl SanctionEntry {
    pub fn first_year(&self) -> i32 {
        *self.years.iter().next().expect("entry has at least one year")
    }
}

impl SanctionSet {
    pub fn from_records<I: IntoIterator<Item = SanctionRecord>>(records: I) -> Self {
        let mut entries: BTreeMap<String, SanctionEntry> = BTreeMap::new();
        for r in records {
            let e = entries.entry(r.supplier_id).or_insert_with(|| SanctionEntry {
                sources: BTreeSet::new(),
                years: BTreeSet::new(),
            });
            e.sources.insert(r.source);
            e.years.insert(r.sanction_year);
        }
        SanctionSet { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, supplier_id: &str) -> Option<&SanctionEntry> {
        self.entries.get(supplier_id)
    }

    pub fn contains(&self, supplier_id: &str) -> bool {
        self.entries.contains_key(supplier_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &SanctionEntry)> {
        self.entries.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Unlabeled,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

/// A CSV row that could not be turned into a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based data line (header excluded).
    pub row: usize,
    pub contract_id: Option<String>,
    pub reason: String,
}

/// Output of [`parse_contracts`]: accepted records plus rejected rows.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParsedContracts {
    pub contracts: Vec<ContractRecord>,
    pub rejections: Vec<Rejection>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParseConfig {
    /// Inclusive (first, last) year accepted for `sign_date`.
    pub year_range: Option<(i32, i32)>,
}

pub const CONTRACT_COLUMNS: [&str; 15] = [
    "contract_id",
    "buyer_id",
    "supplier_id",
    "sign_date",
    "price_mxn",
    "procedure_type",
    "direct_origin",
    "supply_type",
    "legal_framework",
    "tender_publication_date",
    "submission_deadline",
    "decision_date",
    "n_bidders",
    "supplier_size",
    "venue",
];

const MANDATORY_CONTRACT_COLUMNS: usize = 7;

pub const SANCTION_COLUMNS: [&str; 3] = ["supplier_id", "source", "sanction_year"];

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

fn opt_field<T>(raw: &str, name: &str, f: impl Fn(&str) -> Option<T>) -> std::result::Result<Option<T>, String> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    f(raw).map(Some).ok_or_else(|| format!("unparseable {name}"))
}

struct RowView<'a> {
    record: &'a csv::StringRecord,
    columns: &'a HashMap<&'static str, usize>,
}

impl<'a> RowView<'a> {
    fn get(&self, name: &str) -> &'a str {
        self.columns.get(name).and_then(|&p| self.record.get(p)).unwrap_or("")
    }
}

fn parse_row(row: &RowView<'_>) -> std::result::Result<ContractRecord, String> {
    let get = |name: &str| row.get(name);
    let sign_date = parse_date(get("sign_date")).ok_or("unparseable sign_date")?;
    let price_raw = get("price_mxn").trim();
    let price: f64 = price_raw.parse().map_err(|_| "unparseable price".to_string())?;
    let procedure_type = ProcedureType::parse_code(get("procedure_type").trim())
        .ok_or("unknown procedure_type")?;
    let direct_origin = DirectOrigin::parse_code(get("direct_origin").trim())
        .ok_or("unknown direct_origin")?;
    Ok(ContractRecord {
        contract_id: get("contract_id").trim().to_string(),
        buyer_id: get("buyer_id").trim().to_string(),
        supplier_id: get("supplier_id").trim().to_string(),
        sign_date,
        price,
        procedure_type,
        direct_origin,
        supply_type: opt_field(get("supply_type"), "supply_type", SupplyType::parse_code)?,
        legal_framework: opt_field(get("legal_framework"), "legal_framework", |s| Some(s.to_string()))?,
        tender_publication_date: opt_field(get("tender_publication_date"), "tender_publication_date", parse_date)?,
        submission_deadline: opt_field(get("submission_deadline"), "submission_deadline", parse_date)?,
        decision_date: opt_field(get("decision_date"), "decision_date", parse_date)?,
        n_bidders: opt_field(get("n_bidders"), "n_bidders", |s| s.parse().ok())?,
        supplier_size: opt_field(get("supplier_size"), "supplier_size", SupplierSize::parse_code)?,
        venue: opt_field(get("venue"), "venue", Venue::parse_code)?,
    })
}

/// Parses a contracts CSV. Malformed rows are rejected with a reason instead of
/// failing the whole file; a missing mandatory column is a schema error.
pub fn parse_contracts<R: Read>(source: R, config: &ParseConfig) -> Result<ParsedContracts> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(source);
    let headers = reader.headers()?.clone();
    let mut col: HashMap<&'static str, usize> = HashMap::new();
    for name in CONTRACT_COLUMNS {
        if let Some(pos) = headers.iter().position(|h| h.trim() == name) {
            col.insert(name, pos);
        }
    }
    for name in &CONTRACT_COLUMNS[..MANDATORY_CONTRACT_COLUMNS] {
        if !col.contains_key(name) {
            return Err(Error::Schema(format!("contracts CSV is missing column {name:?}")));
        }
    }

    let mut out = ParsedContracts::default();
    let mut seen: HashSet<String> = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                out.rejections.push(Rejection { row: row_no, contract_id: None, reason: format!("malformed row: {e}") });
                continue;
            }
        };
        let view = RowView { record: &row, columns: &col };
        let id = view.get("contract_id").trim().to_string();
        let parsed = parse_row(&view).and_then(|r| r.validate(config.year_range).map(|_| r));
        match parsed {
            Ok(record) => {
                if !seen.insert(record.contract_id.clone()) {
                    out.rejections.push(Rejection {
                        row: row_no,
                        contract_id: Some(id),
                        reason: "duplicate contract_id".into(),
                    });
                } else {
                    out.contracts.push(record);
                }
            }
            Err(reason) => out.rejections.push(Rejection {
                row: row_no,
                contract_id: (!id.is_empty()).then_some(id),
                reason,
            }),
        }
    }
    Ok(out)
}

/// Parses the sanctions CSV; malformed rows are data errors (the file is small
/// and curated, so silently dropping a sanction would corrupt labels).
pub fn parse_sanctions<R: Read>(source: R) -> Result<Vec<SanctionRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let headers = reader.headers()?.clone();
    let mut pos = [0usize; 3];
    for (k, name) in SANCTION_COLUMNS.iter().enumerate() {
        pos[k] = headers
            .iter()
            .position(|h| h.trim() == *name)
            .ok_or_else(|| Error::Schema(format!("sanctions CSV is missing column {name:?}")))?;
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let supplier_id = row.get(pos[0]).unwrap_or("").trim().to_string();
        if supplier_id.is_empty() {
            return Err(Error::data(format!("sanctions row {}: empty supplier_id", i + 1)));
        }
        let source: SanctionSource = row.get(pos[1]).unwrap_or("").parse()?;
        let sanction_year: i32 = row
            .get(pos[2])
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| Error::data(format!("sanctions row {}: unparseable sanction_year", i + 1)))?;
        out.push(SanctionRecord { supplier_id, source, sanction_year });
    }
    Ok(out)
}

fn fmt_opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

/// Writes contracts in the ingestion CSV schema.
pub fn write_contracts<W: std::io::Write>(sink: W, contracts: &[ContractRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CONTRACT_COLUMNS)?;
    for c in contracts {
        w.write_record([
            c.contract_id.clone(),
            c.buyer_id.clone(),
            c.supplier_id.clone(),
            c.sign_date.to_string(),
            format_price(c.price),
            c.procedure_type.to_string(),
            c.direct_origin.to_string(),
            fmt_opt(&c.supply_type),
            fmt_opt(&c.legal_framework),
            fmt_opt(&c.tender_publication_date),
            fmt_opt(&c.submission_deadline),
            fmt_opt(&c.decision_date),
            fmt_opt(&c.n_bidders),
            fmt_opt(&c.supplier_size),
            fmt_opt(&c.venue),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Prices are written with cent precision.
pub fn format_price(p: f64) -> String {
    format!("{p:.2}")
}

pub fn write_sanctions<W: std::io::Write>(sink: W, sanctions: &[SanctionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(SANCTION_COLUMNS)?;
    for s in sanctions {
        w.write_record([s.supplier_id.clone(), s.source.to_string(), s.sanction_year.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-year label counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearPrevalence {
    pub year: i32,
    pub total: usize,
    pub positives: usize,
    pub prevalence: f64,
}

/// Contracts with PU labels and a per-year row index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub contracts: Vec<ContractRecord>,
    pub labels: Vec<Label>,
    pub year_index: BTreeMap<i32, Vec<usize>>,
    /// Set when a sanction cutoff precedes every contract year.
    pub cutoff_before_data: bool,
}

impl LabeledDataset {
    /// Builds a dataset with every row unlabeled.
    pub fn unlabeled(contracts: Vec<ContractRecord>) -> Self {
        let labels = vec![Label::Unlabeled; contracts.len()];
        Self::with_labels(contracts, labels)
    }

    pub fn with_labels(contracts: Vec<ContractRecord>, labels: Vec<Label>) -> Self {
        assert_eq!(contracts.len(), labels.len());
        let mut year_index: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
        for (i, c) in contracts.iter().enumerate() {
            year_index.entry(c.year()).or_default().push(i);
        }
        LabeledDataset { contracts, labels, year_index, cutoff_before_data: false }
    }

    pub fn len(&self) -> usize {
        self.contracts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contracts.is_empty()
    }

    pub fn years(&self) -> Vec<i32> {
        self.year_index.keys().copied().collect()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|l| l.is_positive()).count()
    }

    pub fn positive_mask(&self) -> Vec<bool> {
        self.labels.iter().map(|l| l.is_positive()).collect()
    }

    pub fn prevalence(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.n_positive() as f64 / self.len() as f64
        }
    }

    pub fn prevalence_by_year(&self) -> Vec<YearPrevalence> {
        self.year_index
            .iter()
            .map(|(&year, rows)| {
                let positives = rows.iter().filter(|&&i| self.labels[i].is_positive()).count();
                YearPrevalence {
                    year,
                    total: rows.len(),
                    positives,
                    prevalence: positives as f64 / rows.len() as f64,
                }
            })
            .collect()
    }

    /// Distinct supplier ids in first-appearance order.
    pub fn suppliers(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.contracts
            .iter()
            .filter(|c| seen.insert(c.supplier_id.as_str()))
            .map(|c| c.supplier_id.clone())
            .collect()
    }

    /// Content hash over the canonical CSV serialization plus labels.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        write_contracts(&mut buf, &self.contracts).expect("in-memory write");
        for l in &self.labels {
            buf.push(if l.is_positive() { b'1' } else { b'0' });
        }
        crate::util::sha256_hex(&buf)
    }
}

/// Labels every contract of a sanctioned supplier positive, regardless of the
/// sanction year.
pub fn apply_labels(contracts: Vec<ContractRecord>, sanctions: &SanctionSet) -> LabeledDataset {
    let labels = contracts
        .iter()
        .map(|c| if sanctions.contains(&c.supplier_id) { Label::Positive } else { Label::Unlabeled })
        .collect();
    LabeledDataset::with_labels(contracts, labels)
}

/// Like [`apply_labels`] but only sanctions issued no later than `cutoff_year`
/// count, hiding future sanctions from an inductive training set.
pub fn apply_labels_with_cutoff(
    contracts: Vec<ContractRecord>,
    sanctions: &SanctionSet,
    cutoff_year: i32,
) -> LabeledDataset {
    let labels = contracts
        .iter()
        .map(|c| match sanctions.get(&c.supplier_id) {
            Some(e) if e.first_year() <= cutoff_year => Label::Positive,
            _ => Label::Unlabeled,
        })
        .collect();
    let mut ds = LabeledDataset::with_labels(contracts, labels);
    ds.cutoff_before_data = ds.years().first().is_some_and(|&first| cutoff_year < first);
    ds
}

/// Pairwise cosine-distance statistics for one sanctioned supplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplierSimilarity {
    pub supplier_id: String,
    pub n_contracts: usize,
    pub mean_distance: f64,
    pub median_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub suppliers: Vec<SupplierSimilarity>,
    /// Sanctioned suppliers with a single contract, which have no pairs.
    pub excluded_single_contract: usize,
    pub mean_of_means: f64,
    pub median_of_means: f64,
    pub p90_of_means: f64,
}

/// Cosine distance `1 - cos(a, b)`; two zero vectors are identical, a zero and
/// a nonzero vector are at distance 1.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    match (na > 0.0, nb > 0.0) {
        (false, false) => 0.0,
        (true, true) => (1.0 - dot / (na * nb).sqrt()).max(0.0),
        _ => 1.0,
    }
}

/// Mean and median of a set of pairwise distances.
pub fn summarize_distances(distances: &[f64]) -> (f64, f64) {
    (crate::util::mean(distances), crate::util::median(distances))
}

/// Within-supplier contract similarity of sanctioned suppliers, computed on
/// the encoded matrix without the missing-indicator columns.
pub fn label_similarity_diagnostic(
    dataset: &LabeledDataset,
    encoded: &crate::featureset::FeatureMatrix,
) -> Result<SimilarityReport> {
    if encoded.n_rows() != dataset.len() {
        return Err(Error::SchemaMismatch(format!(
            "feature matrix has {} rows, dataset has {}",
            encoded.n_rows(),
            dataset.len()
        )));
    }
    let keep: Vec<usize> = encoded
        .columns
        .iter()
        .enumerate()
        .filter(|(_, m)| m.kind != crate::featureset::ColumnKind::MissingIndicator)
        .map(|(j, _)| j)
        .collect();

    let mut by_supplier: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in dataset.contracts.iter().enumerate() {
        if dataset.labels[i].is_positive() {
            by_supplier.entry(c.supplier_id.as_str()).or_default().push(i);
        }
    }

    let mut suppliers = Vec::new();
    let mut excluded = 0;
    for (sid, rows) in by_supplier {
        if rows.len() < 2 {
            excluded += 1;
            continue;
        }
        let vecs: Vec<Vec<f64>> = rows.iter().map(|&r| keep.iter().map(|&j| encoded.get(r, j)).collect()).collect();
        let mut d = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
        for a in 0..vecs.len() {
            for b in a + 1..vecs.len() {
                d.push(cosine_distance(&vecs[a], &vecs[b]));
            }
        }
        let (mean, median) = summarize_distances(&d);
        suppliers.push(SupplierSimilarity {
            supplier_id: sid.to_string(),
            n_contracts: rows.len(),
            mean_distance: mean,
            median_distance: median,
        });
    }
    let means: Vec<f64> = suppliers.iter().map(|s| s.mean_distance).collect();
    let (mean_of_means, median_of_means, p90) = if means.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        (crate::util::mean(&means), crate::util::median(&means), crate::util::quantile(&means, 0.9))
    };
    Ok(SimilarityReport {
        suppliers,
        excluded_single_contract: excluded,
        mean_of_means,
        median_of_means,
        p90_of_means: p90,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "contract_id,buyer_id,supplier_id,sign_date,price_mxn,procedure_type,direct_origin,supply_type,legal_framework,tender_publication_date,submission_deadline,decision_date,n_bidders,supplier_size,venue\n";

    pub(crate) fn contract(id: &str, buyer: &str, supplier: &str, date: &str, price: f64) -> ContractRecord {
        ContractRecord {
            contract_id: id.into(),
            buyer_id: buyer.into(),
            supplier_id: supplier.into(),
            sign_date: parse_date(date).unwrap(),
            price,
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
    fn header_only_stream_is_empty() {
        let parsed = parse_contracts(HEADER.as_bytes(), &ParseConfig::default()).unwrap();
        assert!(parsed.contracts.is_empty());
        assert!(parsed.rejections.is_empty());
    }

    #[test]
    fn direct_row_parses_enums() {
        let csv = format!("{HEADER}c1,B1,S1,2020-05-01,1500.5,direct,real,goods,,,,,,small,national\n");
        let parsed = parse_contracts(csv.as_bytes(), &ParseConfig::default()).unwrap();
        assert_eq!(parsed.contracts.len(), 1);
        let c = &parsed.contracts[0];
        assert_eq!(c.procedure_type, ProcedureType::Direct);
        assert_eq!(c.direct_origin, DirectOrigin::Real);
        assert_eq!(c.supply_type, Some(SupplyType::Goods));
        assert_eq!(c.supplier_size, Some(SupplierSize::Small));
        assert_eq!(c.n_bidders, None);
    }

    #[test]
    fn unparseable_price_is_rejected() {
        let csv = format!(
            "{HEADER}c1,B1,S1,2020-05-01,10,open,not_applicable,,,,,,3,,\n\
             c2,B1,S1,2020-05-02,abc,open,not_applicable,,,,,,3,,\n\
             c3,B1,S2,2020-05-03,30,open,not_applicable,,,,,,3,,\n"
        );
        let parsed = parse_contracts(csv.as_bytes(), &ParseConfig::default()).unwrap();
        assert_eq!(parsed.contracts.len(), 2);
        assert_eq!(parsed.rejections.len(), 1);
        assert_eq!(parsed.rejections[0].reason, "unparseable price");
        assert_eq!(parsed.rejections[0].contract_id.as_deref(), Some("c2"));
    }

    #[test]
    fn missing_mandatory_column_is_schema_error() {
        let csv = "contract_id,buyer_id\nc1,B1\n";
        let err = parse_contracts(csv.as_bytes(), &ParseConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn duplicate_ids_and_invariant_violations_are_rejected() {
        let csv = format!(
            "{HEADER}c1,B1,S1,2020-05-01,10,open,not_applicable,,,,,,,,\n\
             c1,B1,S1,2020-05-01,10,open,not_applicable,,,,,,,,\n\
             c2,B1,S1,2020-05-01,10,direct,not_applicable,,,,,,,,\n\
             c3,B1,S1,2020-05-01,10,open,not_applicable,,,2020-04-10,2020-04-01,,,,\n\
             c4,B1,S1,2020-05-01,-4,open,not_applicable,,,,,,,,\n\
             c5,B1,S1,2010-05-01,4,open,not_applicable,,,,,,,,\n"
        );
        let cfg = ParseConfig { year_range: Some((2015, 2022)) };
        let parsed = parse_contracts(csv.as_bytes(), &cfg).unwrap();
        assert_eq!(parsed.contracts.len(), 1);
        let reasons: Vec<&str> = parsed.rejections.iter().map(|r| r.reason.as_str()).collect();
        assert_eq!(reasons[0], "duplicate contract_id");
        assert!(reasons[1].contains("direct_origin"));
        assert!(reasons[2].contains("publication"));
        assert!(reasons[3].contains("price"));
        assert!(reasons[4].contains("outside"));
    }

    #[test]
    fn csv_roundtrip_preserves_records() {
        let mut c = contract("c1", "B1", "S1", "2019-02-03", 1234.5);
        c.procedure_type = ProcedureType::Direct;
        c.direct_origin = DirectOrigin::PostOpen;
        c.n_bidders = Some(1);
        c.venue = Some(Venue::InternationalTreaty);
        c.legal_framework = Some("art41".into());
        let mut buf = Vec::new();
        write_contracts(&mut buf, std::slice::from_ref(&c)).unwrap();
        let parsed = parse_contracts(buf.as_slice(), &ParseConfig::default()).unwrap();
        assert_eq!(parsed.contracts, vec![c]);
    }

    #[test]
    fn no_sanctions_means_all_unlabeled() {
        let ds = apply_labels(vec![contract("a", "B", "S", "2020-01-01", 1.0)], &SanctionSet::default());
        assert_eq!(ds.n_positive(), 0);
        assert_eq!(ds.prevalence(), 0.0);
    }

    #[test]
    fn sanction_applies_regardless_of_year() {
        let sanctions = SanctionSet::from_records([SanctionRecord {
            supplier_id: "S".into(),
            source: SanctionSource::Pcs,
            sanction_year: 2019,
        }]);
        let ds = apply_labels(
            vec![
                contract("a", "B", "S", "2015-03-01", 1.0),
                contract("b", "B", "S", "2021-03-01", 1.0),
                contract("c", "B", "T", "2021-03-01", 1.0),
            ],
            &sanctions,
        );
        assert_eq!(ds.labels, vec![Label::Positive, Label::Positive, Label::Unlabeled]);
    }

    #[test]
    fn cutoff_hides_future_sanctions() {
        let sanctions = SanctionSet::from_records([SanctionRecord {
            supplier_id: "S".into(),
            source: SanctionSource::Efos,
            sanction_year: 2020,
        }]);
        let rows = vec![contract("a", "B", "S", "2015-03-01", 1.0)];
        let ds = apply_labels_with_cutoff(rows.clone(), &sanctions, 2016);
        assert_eq!(ds.labels, vec![Label::Unlabeled]);
        let ds = apply_labels_with_cutoff(rows, &sanctions, 2014);
        assert!(ds.cutoff_before_data);
    }

    #[test]
    fn duplicate_sources_are_merged() {
        let set = SanctionSet::from_records([
            SanctionRecord { supplier_id: "S".into(), source: SanctionSource::Efos, sanction_year: 2018 },
            SanctionRecord { supplier_id: "S".into(), source: SanctionSource::Pcs, sanction_year: 2016 },
        ]);
        assert_eq!(set.len(), 1);
        let e = set.get("S").unwrap();
        assert_eq!(e.sources.len(), 2);
        assert_eq!(e.first_year(), 2016);
    }

    #[test]
    fn cosine_distance_basics() {
        assert_eq!(cosine_distance(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 3.0]) - 1.0).abs() < 1e-15);
        let (mean, median) = summarize_distances(&[0.2, 0.2, 0.4]);
        assert!((mean - 0.266_666_666_666_666_7).abs() < 1e-12);
        assert!((median - 0.2).abs() < 1e-15);
    }
}
