//! Synthetic procurement data with planted fraud structure.
//!
//! Supplier activity follows a Zipf law over size ranks, so a few suppliers
//! hold most contracts. Fraudulent suppliers are drawn stratified over ranks
//! (outside the top 1%) and differ from clean ones in configurable ways: they
//! favor a fixed set of core buyers, get more direct awards, quote round
//! prices that break Benford's law, bunch their contracts into a few weeks and
//! trip procedural red flags in competitive tenders. Sanctions are a uniform
//! random subset of the fraudulent suppliers, so observed labels are selected
//! completely at random given fraud status.

use std::collections::HashMap;
use std::io::Write;

use chrono::{Duration, NaiveDate};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::domain::{
    apply_labels, ContractRecord, DirectOrigin, LabeledDataset, ProcedureType, SanctionRecord, SanctionSet,
    SanctionSource, SupplierSize, SupplyType, Venue,
};
use crate::error::{Error, Result};
use crate::util::{rng, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_buyers: usize,
    pub n_suppliers: usize,
    pub first_year: i32,
    pub years: usize,
    pub contracts_per_year: usize,
    /// Zipf exponent of supplier activity over size ranks.
    pub size_exponent: f64,
    /// Zipf exponent of buyer popularity.
    pub buyer_exponent: f64,
    pub fraud_fraction: f64,
    /// Share of fraudulent suppliers that end up sanctioned.
    pub observation_rate: f64,
    /// Draw fraudulent suppliers stratified over size ranks outside the top
    /// 1%; otherwise uniformly over all suppliers.
    pub stratified_fraud: bool,
    /// Activity multiplier of fraudulent suppliers.
    pub fraud_activity: f64,
    pub core_buyers: usize,
    /// Probability that a buyer slot of a fraudulent supplier is a core buyer.
    pub core_attachment: f64,
    pub direct_rate_clean: f64,
    pub direct_rate_fraud: f64,
    pub post_open_rate_clean: f64,
    pub post_open_rate_fraud: f64,
    /// Share of fraudulent contracts priced at round amounts.
    pub benford_violation: f64,
    /// Share of fraudulent competitive contracts with a single bidder and
    /// rushed periods.
    pub red_flag_rate: f64,
    /// Active weeks per fraudulent supplier and year; 0 spreads contracts
    /// over the whole year.
    pub active_weeks: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_buyers: 200,
            n_suppliers: 2000,
            first_year: 2015,
            years: 5,
            contracts_per_year: 10_000,
            size_exponent: 1.05,
            buyer_exponent: 0.8,
            fraud_fraction: 0.08,
            observation_rate: 0.5,
            stratified_fraud: true,
            fraud_activity: 1.75,
            core_buyers: 20,
            core_attachment: 0.8,
            direct_rate_clean: 0.7,
            direct_rate_fraud: 0.85,
            post_open_rate_clean: 0.1,
            post_open_rate_fraud: 0.25,
            benford_violation: 0.5,
            red_flag_rate: 0.4,
            active_weeks: 3,
            seed: 42,
        }
    }
}

impl SynthConfig {
    /// Same market, but fraudulent suppliers are a uniform draw that behaves
    /// exactly like clean ones.
    pub fn no_signal() -> Self {
        let base = SynthConfig::default();
        SynthConfig {
            stratified_fraud: false,
            fraud_activity: 1.0,
            core_attachment: 0.0,
            direct_rate_fraud: base.direct_rate_clean,
            post_open_rate_fraud: base.post_open_rate_clean,
            benford_violation: 0.0,
            red_flag_rate: 0.0,
            active_weeks: 0,
            ..base
        }
    }

    pub fn total_contracts(&self) -> usize {
        self.contracts_per_year * self.years
    }

    pub fn n_fraud(&self) -> usize {
        (self.fraud_fraction * self.n_suppliers as f64).round() as usize
    }

    fn head(&self) -> usize {
        if self.stratified_fraud {
            (self.n_suppliers as f64 * 0.01).ceil() as usize
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        if self.n_buyers == 0 || self.n_suppliers == 0 || self.years == 0 {
            return Err(Error::invalid("synthetic market needs buyers, suppliers and years"));
        }
        if self.total_contracts() < self.n_suppliers {
            return Err(Error::invalid(format!(
                "{} contracts cannot give each of {} suppliers a contract",
                self.total_contracts(),
                self.n_suppliers
            )));
        }
        if !(0.0..1.0).contains(&self.fraud_fraction) {
            return Err(Error::invalid(format!("fraud fraction must lie in [0, 1), got {}", self.fraud_fraction)));
        }
        if !(self.observation_rate > 0.0 && self.observation_rate <= 1.0) {
            return Err(Error::invalid(format!(
                "observation rate must lie in (0, 1], got {}",
                self.observation_rate
            )));
        }
        if self.n_fraud() > self.n_suppliers - self.head() {
            return Err(Error::invalid("too many fraudulent suppliers for the market size"));
        }
        if self.core_buyers > self.n_buyers {
            return Err(Error::invalid("core buyers exceed the number of buyers"));
        }
        if self.core_attachment > 0.0 && self.core_buyers == 0 {
            return Err(Error::invalid("core attachment needs at least one core buyer"));
        }
        for (name, v) in [
            ("core attachment", self.core_attachment),
            ("post-open rate", self.post_open_rate_clean),
            ("post-open rate", self.post_open_rate_fraud),
            ("Benford violation rate", self.benford_violation),
            ("red flag rate", self.red_flag_rate),
        ] {
            unit(name, v)?;
        }
        for v in [self.direct_rate_clean, self.direct_rate_fraud] {
            if !(0.0..=0.9).contains(&v) {
                return Err(Error::invalid(format!("direct award rates must lie in [0, 0.9], got {v}")));
            }
        }
        if !(self.size_exponent >= 0.0 && self.buyer_exponent >= 0.0 && self.fraud_activity > 0.0) {
            return Err(Error::invalid("exponents must be non-negative and fraud activity positive"));
        }
        if self.active_weeks > 52 {
            return Err(Error::invalid("active weeks cannot exceed 52"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthData {
    pub contracts: Vec<ContractRecord>,
    pub sanctions: Vec<SanctionRecord>,
    /// (supplier_id, is_fraud) for every supplier, by id.
    pub ground_truth: Vec<(String, bool)>,
}

impl SynthData {
    pub fn sanction_set(&self) -> SanctionSet {
        SanctionSet::from_records(self.sanctions.iter().cloned())
    }

    pub fn labeled(&self) -> LabeledDataset {
        apply_labels(self.contracts.clone(), &self.sanction_set())
    }

    pub fn fraud_suppliers(&self) -> Vec<&str> {
        self.ground_truth.iter().filter(|(_, f)| *f).map(|(s, _)| s.as_str()).collect()
    }

    pub fn write_ground_truth<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["supplier_id", "is_fraud"])?;
        for (s, f) in &self.ground_truth {
            w.write_record([s.as_str(), if *f { "1" } else { "0" }])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Supplier {
    id: String,
    fraud: bool,
    size: Option<SupplierSize>,
    pool: Vec<usize>,
}

fn zipf(n: usize, exponent: f64) -> Vec<f64> {
    (0..n).map(|i| (i as f64 + 1.0).powf(-exponent)).collect()
}

fn supplier_size(r: &mut Rng, fraud: bool, contracts: usize) -> Option<SupplierSize> {
    if r.random_bool(0.05) {
        return None;
    }
    let u: f64 = r.random_range(0.0..1.0);
    let cut = if fraud {
        [0.5, 0.8, 0.95]
    } else if contracts >= 100 {
        [0.0, 0.1, 0.4]
    } else {
        [0.3, 0.65, 0.9]
    };
    Some(if u < cut[0] {
        SupplierSize::Micro
    } else if u < cut[1] {
        SupplierSize::Small
    } else if u < cut[2] {
        SupplierSize::Medium
    } else {
        SupplierSize::Large
    })
}

fn buyer_pool(r: &mut Rng, cfg: &SynthConfig, fraud: bool, contracts: usize, popular: &WeightedIndex<f64>, core: &[usize]) -> Vec<usize> {
    let want = ((contracts as f64).powf(0.6).ceil() as usize).clamp(1, cfg.n_buyers);
    let mut pool: Vec<usize> = Vec::with_capacity(want);
    let mut attempts = 0;
    while pool.len() < want && attempts < 50 * want {
        attempts += 1;
        let b = if fraud && r.random_bool(cfg.core_attachment) {
            core[r.random_range(0..core.len())]
        } else {
            popular.sample(r)
        };
        if !pool.contains(&b) {
            pool.push(b);
        }
    }
    pool
}

fn sign_date(r: &mut Rng, year: i32, weeks: Option<&[u32]>) -> NaiveDate {
    let start = NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year");
    let days = if start.leap_year() { 366 } else { 365 };
    let offset = match weeks {
        Some(w) => 7 * (w[r.random_range(0..w.len())] as i64 - 1) + r.random_range(0..7),
        None => r.random_range(0..days),
    };
    start + Duration::days(offset)
}

fn price(r: &mut Rng, round: bool) -> f64 {
    if round {
        let digit = r.random_range(1..=9) as f64;
        digit * 10f64.powi(r.random_range(4..=6))
    } else {
        (10f64.powf(r.random_range(4.0..7.0)) * 100.0).round() / 100.0
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut r = rng(cfg.seed);
    let n = cfg.n_suppliers;
    let n_fraud = cfg.n_fraud();

    let mut fraud_rank = vec![false; n];
    if cfg.stratified_fraud {
        // One fraud rank per equal block of ranks outside the head.
        let head = cfg.head();
        for k in 0..n_fraud {
            let lo = head + k * (n - head) / n_fraud;
            let hi = head + (k + 1) * (n - head) / n_fraud;
            fraud_rank[r.random_range(lo..hi)] = true;
        }
    } else {
        for k in sample(&mut r, n, n_fraud) {
            fraud_rank[k] = true;
        }
    }

    let mut weights = zipf(n, cfg.size_exponent);
    for (w, &f) in weights.iter_mut().zip(&fraud_rank) {
        if f {
            *w *= cfg.fraud_activity;
        }
    }
    let total = cfg.total_contracts();
    let mut counts = vec![1usize; n];
    let by_size = WeightedIndex::new(&weights).map_err(|e| Error::invalid(e.to_string()))?;
    for _ in n..total {
        counts[by_size.sample(&mut r)] += 1;
    }

    let mut id_of_rank: Vec<usize> = (0..n).collect();
    id_of_rank.shuffle(&mut r);
    let width = n.to_string().len().max(4);
    let popular =
        WeightedIndex::new(zipf(cfg.n_buyers, cfg.buyer_exponent)).map_err(|e| Error::invalid(e.to_string()))?;
    let core = sample(&mut r, cfg.n_buyers, cfg.core_buyers).into_vec();
    let suppliers: Vec<Supplier> = (0..n)
        .map(|rank| {
            let fraud = fraud_rank[rank];
            let size = supplier_size(&mut r, fraud, counts[rank]);
            let pool = buyer_pool(&mut r, cfg, fraud, counts[rank], &popular, &core);
            Supplier { id: format!("S{:0width$}", id_of_rank[rank]), fraud, size, pool }
        })
        .collect();
    let buyer_width = cfg.n_buyers.to_string().len().max(3);
    let buyer_id = |b: usize| format!("B{b:0buyer_width$}");

    let mut slots: Vec<usize> = counts.iter().enumerate().flat_map(|(rank, &c)| std::iter::repeat_n(rank, c)).collect();
    slots.shuffle(&mut r);
    let mut weeks: HashMap<(usize, i32), Vec<u32>> = HashMap::new();
    let mut contracts = Vec::with_capacity(total);
    for (k, &rank) in slots.iter().enumerate() {
        let s = &suppliers[rank];
        let year = cfg.first_year + (k / cfg.contracts_per_year) as i32;
        let active = if s.fraud && cfg.active_weeks > 0 {
            let w = weeks.entry((rank, year)).or_insert_with(|| {
                let mut w: Vec<u32> = sample(&mut r, 52, cfg.active_weeks as usize).into_iter().map(|i| i as u32 + 1).collect();
                w.sort_unstable();
                w
            });
            Some(w.clone())
        } else {
            None
        };
        let sign = sign_date(&mut r, year, active.as_deref());
        let buyer = s.pool[r.random_range(0..s.pool.len())];
        let direct_rate = if s.fraud { cfg.direct_rate_fraud } else { cfg.direct_rate_clean };
        let supply_type = match r.random_range(0.0..1.0) {
            u if u < 0.03 => None,
            u if u < 0.5 => Some(SupplyType::Goods),
            u if u < 0.85 => Some(SupplyType::Services),
            _ => Some(SupplyType::Works),
        };
        let legal_framework = if r.random_bool(0.05) {
            None
        } else if supply_type == Some(SupplyType::Works) {
            Some("LOPSRM".to_string())
        } else {
            Some("LAASSP".to_string())
        };
        let venue = match r.random_range(0.0..1.0) {
            u if u < 0.05 => None,
            u if u < 0.85 => Some(Venue::National),
            u if u < 0.95 => Some(Venue::International),
            _ => Some(Venue::InternationalTreaty),
        };
        let mut record = ContractRecord {
            contract_id: String::new(),
            buyer_id: buyer_id(buyer),
            supplier_id: s.id.clone(),
            sign_date: sign,
            price: 0.0,
            procedure_type: ProcedureType::Direct,
            direct_origin: DirectOrigin::Real,
            supply_type,
            legal_framework,
            tender_publication_date: None,
            submission_deadline: None,
            decision_date: None,
            n_bidders: None,
            supplier_size: s.size,
            venue,
        };
        if r.random_bool(direct_rate) {
            let post_open = if s.fraud { cfg.post_open_rate_fraud } else { cfg.post_open_rate_clean };
            if r.random_bool(post_open) {
                record.direct_origin = DirectOrigin::PostOpen;
            }
            if r.random_bool(0.3) {
                record.decision_date = Some(sign - Duration::days(r.random_range(0..=5)));
            }
        } else {
            record.procedure_type = if r.random_bool(0.6) { ProcedureType::Open } else { ProcedureType::AtLeastThree };
            record.direct_origin = DirectOrigin::NotApplicable;
            let rushed = s.fraud && r.random_bool(cfg.red_flag_rate);
            let (bidders, submission, decision) = if rushed {
                (1, r.random_range(1..=5), r.random_range(0..=4))
            } else {
                let bidders = if r.random_bool(0.15) { 1 } else { r.random_range(2..=8) };
                let submission = if r.random_bool(0.2) { r.random_range(6..=11) } else { r.random_range(12..=40) };
                (bidders, submission, r.random_range(10..=60))
            };
            if !r.random_bool(0.05) {
                record.n_bidders = Some(bidders);
            }
            let decided = sign - Duration::days(r.random_range(0..=5));
            let deadline = decided - Duration::days(decision);
            record.decision_date = Some(decided);
            record.submission_deadline = Some(deadline);
            if !r.random_bool(0.05) {
                record.tender_publication_date = Some(deadline - Duration::days(submission));
            }
        }
        let round = s.fraud && r.random_bool(cfg.benford_violation);
        record.price = price(&mut r, round);
        contracts.push(record);
    }
    contracts.sort_by_key(|c| c.sign_date);
    let id_width = total.to_string().len();
    for (i, c) in contracts.iter_mut().enumerate() {
        c.contract_id = format!("C{:0id_width$}", i + 1);
    }

    let fraud: Vec<&Supplier> = suppliers.iter().filter(|s| s.fraud).collect();
    let observed = (cfg.observation_rate * fraud.len() as f64).round() as usize;
    let mut picked = sample(&mut r, fraud.len(), observed).into_vec();
    picked.sort_unstable();
    let last_year = cfg.first_year + cfg.years as i32 - 1;
    let mut sanctions = Vec::new();
    for i in picked {
        let id = &fraud[i].id;
        let source = if r.random_bool(0.5) { SanctionSource::Efos } else { SanctionSource::Pcs };
        sanctions.push(SanctionRecord {
            supplier_id: id.clone(),
            source,
            sanction_year: r.random_range(cfg.first_year..=last_year),
        });
        if r.random_bool(0.1) {
            let other = if source == SanctionSource::Efos { SanctionSource::Pcs } else { SanctionSource::Efos };
            sanctions.push(SanctionRecord {
                supplier_id: id.clone(),
                source: other,
                sanction_year: r.random_range(cfg.first_year..=last_year),
            });
        }
    }
    sanctions.sort_by(|a, b| (&a.supplier_id, a.sanction_year).cmp(&(&b.supplier_id, b.sanction_year)));

    let mut ground_truth: Vec<(String, bool)> = suppliers.iter().map(|s| (s.id.clone(), s.fraud)).collect();
    ground_truth.sort();
    Ok(SynthData { contracts, sanctions, ground_truth })
}

/// Gini coefficient of non-negative amounts; 0 for empty or all-zero input.
pub fn gini(values: &[f64]) -> f64 {
    let n = values.len();
    let total: f64 = values.iter().sum();
    if n == 0 || total <= 0.0 {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let weighted: f64 = v.iter().enumerate().map(|(i, x)| (i as f64 + 1.0) * x).sum();
    2.0 * weighted / (n as f64 * total) - (n as f64 + 1.0) / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub n_suppliers: usize,
    pub n_contracts: usize,
    /// Gini of per-supplier contract counts.
    pub gini: f64,
    pub top_fraction: f64,
    /// Share of contracts held by the top `top_fraction` of suppliers.
    pub top_share: f64,
}

/// Concentration of contracts across the suppliers present in `contracts`.
pub fn concentration_report(contracts: &[ContractRecord], top_fraction: f64) -> ConcentrationReport {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for c in contracts {
        *counts.entry(c.supplier_id.as_str()).or_default() += 1;
    }
    let mut v: Vec<f64> = counts.values().map(|&c| c as f64).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    let k = ((top_fraction * v.len() as f64).ceil() as usize).min(v.len());
    let top_share = if contracts.is_empty() { 0.0 } else { v[..k].iter().sum::<f64>() / contracts.len() as f64 };
    ConcentrationReport {
        n_suppliers: v.len(),
        n_contracts: contracts.len(),
        gini: gini(&v),
        top_fraction,
        top_share,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig { n_buyers: 30, n_suppliers: 200, contracts_per_year: 800, years: 2, core_buyers: 5, ..Default::default() }
    }

    #[test]
    fn gini_edge_cases() {
        assert_eq!(gini(&[3.0; 10]), 0.0);
        let mut one = vec![0.0; 9];
        one.push(5.0);
        assert!((gini(&one) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn every_record_is_valid() {
        let d = generate(&small()).unwrap();
        assert_eq!(d.contracts.len(), 1600);
        for c in &d.contracts {
            c.validate(Some((2015, 2016))).unwrap();
        }
        let per_supplier = concentration_report(&d.contracts, 0.05);
        assert_eq!(per_supplier.n_suppliers, 200);
    }

    #[test]
    fn zero_fraud_means_no_sanctions() {
        let d = generate(&SynthConfig { fraud_fraction: 0.0, ..small() }).unwrap();
        assert!(d.sanctions.is_empty());
        assert_eq!(d.labeled().n_positive(), 0);
    }

    #[test]
    fn full_observation_sanctions_all_fraud() {
        let d = generate(&SynthConfig { observation_rate: 1.0, ..small() }).unwrap();
        let set = d.sanction_set();
        let sanctioned: Vec<&str> = set.iter().map(|(s, _)| s.as_str()).collect();
        assert_eq!(sanctioned, d.fraud_suppliers());
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        assert!(generate(&SynthConfig { contracts_per_year: 10, ..small() }).is_err());
        assert!(generate(&SynthConfig { observation_rate: 0.0, ..small() }).is_err());
        assert!(generate(&SynthConfig { direct_rate_fraud: 0.95, ..small() }).is_err());
    }

    #[test]
    fn regeneration_is_identical() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthConfig { seed: 7, ..small() }).unwrap();
        assert_ne!(a.contracts, c.contracts);
    }
}
