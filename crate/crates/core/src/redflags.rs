//! Contract-level red flags, Benford conformity of buyer prices, buyer
//! dependence and the composite corruption risk index (CRI).

use std::collections::HashMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::domain::{ContractRecord, LabeledDataset, ProcedureType};
use crate::error::{Error, Result};

/// Expected first-digit frequencies `log10(1 + 1/d)` for d = 1..9.
pub fn benford_expected() -> [f64; 9] {
    let mut out = [0.0; 9];
    for (i, v) in out.iter_mut().enumerate() {
        *v = (1.0 + 1.0 / (i as f64 + 1.0)).log10();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conformity {
    Close,
    Acceptable,
    MarginallyAcceptable,
    NoConformity,
    NonApplicable,
}

impl Conformity {
    /// Bins are closed on the left: [0, .006), [.006, .012), [.012, .016), [.016, inf).
    pub fn from_mad(mad: f64) -> Self {
        if mad < 0.006 {
            Conformity::Close
        } else if mad < 0.012 {
            Conformity::Acceptable
        } else if mad < 0.016 {
            Conformity::MarginallyAcceptable
        } else {
            Conformity::NoConformity
        }
    }

    pub fn weight(self) -> f64 {
        match self {
            Conformity::Close => 0.0,
            Conformity::Acceptable => 0.25,
            Conformity::NonApplicable => 0.5,
            Conformity::MarginallyAcceptable => 0.75,
            Conformity::NoConformity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenfordAssessment {
    pub mad: Option<f64>,
    pub conformity: Conformity,
    pub eligible: bool,
}

impl BenfordAssessment {
    pub const NOT_ELIGIBLE: BenfordAssessment =
        BenfordAssessment { mad: None, conformity: Conformity::NonApplicable, eligible: false };
}

/// First significant decimal digit of a positive amount.
pub fn first_digit(price: f64) -> Option<u8> {
    if !(price.is_finite() && price > 0.0) {
        return None;
    }
    // Scientific notation puts the first significant digit first, for
    // amounts below 1 as well.
    let s = format!("{price:e}");
    s.bytes().next().map(|b| b - b'0').filter(|d| (1..=9).contains(d))
}

/// Mean absolute deviation between observed first-digit shares and Benford.
pub fn mad_from_counts(counts: &[u64; 9]) -> Option<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return None;
    }
    let expected = benford_expected();
    let dev: f64 = counts
        .iter()
        .zip(expected.iter())
        .map(|(&c, &b)| (c as f64 / total as f64 - b).abs())
        .sum();
    Some(dev / 9.0)
}

/// Benford assessment of one buyer-year's prices. Buyers with fewer than
/// `eligibility_threshold` contracts are not assessed.
pub fn benford_mad(prices: &[f64], eligibility_threshold: usize) -> BenfordAssessment {
    if prices.len() < eligibility_threshold {
        return BenfordAssessment::NOT_ELIGIBLE;
    }
    let mut counts = [0u64; 9];
    for &p in prices {
        if let Some(d) = first_digit(p) {
            counts[d as usize - 1] += 1;
        }
    }
    match mad_from_counts(&counts) {
        Some(mad) => BenfordAssessment { mad: Some(mad), conformity: Conformity::from_mad(mad), eligible: true },
        None => BenfordAssessment::NOT_ELIGIBLE,
    }
}

/// Minimum contract count for Benford eligibility in one year: the 0.75
/// quantile of per-buyer contract counts, rounded up.
pub fn benford_eligibility_threshold(buyer_counts: &[usize]) -> usize {
    if buyer_counts.is_empty() {
        return usize::MAX;
    }
    let v: Vec<f64> = buyer_counts.iter().map(|&c| c as f64).collect();
    crate::util::quantile(&v, 0.75).ceil() as usize
}

/// Whole-day difference between two optional dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PeriodDays {
    Days(i64),
    Missing,
    /// End before start: treated as missing and counted as a data error.
    Negative,
}

impl PeriodDays {
    pub fn days(self) -> Option<i64> {
        match self {
            PeriodDays::Days(d) => Some(d),
            _ => None,
        }
    }
}

pub fn period_days(start: Option<NaiveDate>, end: Option<NaiveDate>) -> PeriodDays {
    match (start, end) {
        (Some(s), Some(e)) => {
            let d = (e - s).num_days();
            if d < 0 {
                PeriodDays::Negative
            } else {
                PeriodDays::Days(d)
            }
        }
        _ => PeriodDays::Missing,
    }
}

/// Publication to submission deadline.
pub fn submission_period(c: &ContractRecord) -> PeriodDays {
    period_days(c.tender_publication_date, c.submission_deadline)
}

/// Submission deadline to award decision.
pub fn decision_period(c: &ContractRecord) -> PeriodDays {
    period_days(c.submission_deadline, c.decision_date)
}

/// Periods longer than a year fall outside every threshold bin and are
/// weighted as missing.
pub fn decision_period_weight(days: Option<i64>) -> f64 {
    match days {
        Some(0) => 1.0,
        Some(1..=4) => 0.75,
        Some(5..=13) => 0.25,
        Some(14..=365) => 0.0,
        _ => 0.5,
    }
}

pub fn submission_period_weight(days: Option<i64>) -> f64 {
    match days {
        Some(0..=5) => 0.66,
        Some(6..=11) => 0.0,
        Some(12..=365) => 0.33,
        _ => 1.0,
    }
}

pub fn procedure_type_weight(p: ProcedureType) -> f64 {
    match p {
        ProcedureType::Open => 0.0,
        ProcedureType::AtLeastThree => 0.5,
        ProcedureType::Direct => 1.0,
    }
}

/// `None` when the bidder count is unknown (or zero, which cannot describe an
/// awarded contract).
pub fn single_bidder_weight(n_bidders: Option<u32>) -> Option<f64> {
    match n_bidders {
        Some(1) => Some(1.0),
        Some(n) if n > 1 => Some(0.0),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RedFlagVector {
    pub benford: Option<f64>,
    pub decision_period: f64,
    pub submission_period: f64,
    pub single_bidder: Option<f64>,
    pub procedure_type: f64,
    pub buyer_dependence: f64,
}

impl RedFlagVector {
    pub fn components(&self) -> [Option<f64>; 6] {
        [
            self.benford,
            Some(self.decision_period),
            Some(self.submission_period),
            self.single_bidder,
            Some(self.procedure_type),
            Some(self.buyer_dependence),
        ]
    }
}

pub fn red_flag_weights(contract: &ContractRecord, benford: &BenfordAssessment, buyer_dep: f64) -> RedFlagVector {
    RedFlagVector {
        benford: Some(benford.conformity.weight()),
        decision_period: decision_period_weight(decision_period(contract).days()),
        submission_period: submission_period_weight(submission_period(contract).days()),
        single_bidder: single_bidder_weight(contract.n_bidders),
        procedure_type: procedure_type_weight(contract.procedure_type),
        buyer_dependence: buyer_dep,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriScore {
    pub value: f64,
    pub n_components: usize,
}

impl CriScore {
    /// Mean of the present components.
    pub fn from_components(components: &[Option<f64>]) -> Result<Self> {
        let present: Vec<f64> = components.iter().flatten().copied().collect();
        if present.is_empty() {
            return Err(Error::invalid("CRI needs at least one red flag"));
        }
        Ok(CriScore { value: present.iter().sum::<f64>() / present.len() as f64, n_components: present.len() })
    }
}

pub fn cri(flags: &RedFlagVector) -> CriScore {
    CriScore::from_components(&flags.components()).expect("buyer dependence is always present")
}

/// Share of a buyer's yearly spend that goes to one supplier.
pub fn buyer_dependence(buyer_id: &str, supplier_id: &str, year: i32, dataset: &LabeledDataset) -> f64 {
    let (mut pair, mut total) = (0.0, 0.0);
    if let Some(rows) = dataset.year_index.get(&year) {
        for &i in rows {
            let c = &dataset.contracts[i];
            if c.buyer_id == buyer_id {
                total += c.price;
                if c.supplier_id == supplier_id {
                    pair += c.price;
                }
            }
        }
    }
    if total > 0.0 {
        pair / total
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RiskDiagnostics {
    pub negative_submission_periods: usize,
    pub negative_decision_periods: usize,
    /// Buyer-years whose total spend is zero (dependence set to 0).
    pub zero_spend_buyer_years: usize,
    /// (year, threshold) for Benford eligibility.
    pub benford_thresholds: Vec<(i32, usize)>,
}

/// Red flags and CRI for every contract of a dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskTable {
    pub flags: Vec<RedFlagVector>,
    pub cri: Vec<f64>,
    /// Buyer-year MAD attached to each contract.
    pub benford: Vec<BenfordAssessment>,
    pub submission_days: Vec<Option<i64>>,
    pub decision_days: Vec<Option<i64>>,
    pub diagnostics: RiskDiagnostics,
}

pub fn compute_risk_table(dataset: &LabeledDataset) -> RiskTable {
    let n = dataset.len();
    let mut benford = vec![BenfordAssessment::NOT_ELIGIBLE; n];
    let mut dependence = vec![0.0; n];
    let mut diagnostics = RiskDiagnostics::default();

    for (&year, rows) in &dataset.year_index {
        let mut by_buyer: HashMap<&str, Vec<usize>> = HashMap::new();
        for &i in rows {
            by_buyer.entry(dataset.contracts[i].buyer_id.as_str()).or_default().push(i);
        }
        let counts: Vec<usize> = by_buyer.values().map(Vec::len).collect();
        let threshold = benford_eligibility_threshold(&counts);
        diagnostics.benford_thresholds.push((year, threshold));

        let mut buyers: Vec<&str> = by_buyer.keys().copied().collect();
        buyers.sort_unstable();
        for b in buyers {
            let idx = &by_buyer[b];
            let prices: Vec<f64> = idx.iter().map(|&i| dataset.contracts[i].price).collect();
            let assessment = benford_mad(&prices, threshold);
            let total: f64 = prices.iter().sum();
            let mut per_supplier: HashMap<&str, f64> = HashMap::new();
            for &i in idx {
                *per_supplier.entry(dataset.contracts[i].supplier_id.as_str()).or_default() += dataset.contracts[i].price;
            }
            if total <= 0.0 {
                diagnostics.zero_spend_buyer_years += 1;
            }
            for &i in idx {
                benford[i] = assessment;
                dependence[i] = if total > 0.0 { per_supplier[dataset.contracts[i].supplier_id.as_str()] / total } else { 0.0 };
            }
        }
    }

    let mut flags = Vec::with_capacity(n);
    let mut cri_values = Vec::with_capacity(n);
    let mut submission_days = Vec::with_capacity(n);
    let mut decision_days = Vec::with_capacity(n);
    for (i, c) in dataset.contracts.iter().enumerate() {
        let sub = submission_period(c);
        let dec = decision_period(c);
        if sub == PeriodDays::Negative {
            diagnostics.negative_submission_periods += 1;
        }
        if dec == PeriodDays::Negative {
            diagnostics.negative_decision_periods += 1;
        }
        submission_days.push(sub.days());
        decision_days.push(dec.days());
        let f = red_flag_weights(c, &benford[i], dependence[i]);
        cri_values.push(cri(&f).value);
        flags.push(f);
    }
    RiskTable { flags, cri: cri_values, benford, submission_days, decision_days, diagnostics }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DirectOrigin, ProcedureType};
    use proptest::prelude::*;

    fn record(buyer: &str, supplier: &str, price: f64) -> ContractRecord {
        ContractRecord {
            contract_id: format!("{buyer}-{supplier}-{price}"),
            buyer_id: buyer.into(),
            supplier_id: supplier.into(),
            sign_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
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
    fn exact_benford_counts_have_zero_mad() {
        // 9000 prices would not give exact log10 shares; use a denominator
        // where they are exact up to float rounding instead.
        let expected = benford_expected();
        let total = 1e12;
        let mut counts = [0u64; 9];
        for d in 0..9 {
            counts[d] = (expected[d] * total).round() as u64;
        }
        let mad = mad_from_counts(&counts).unwrap();
        assert!(mad < 1e-11, "mad = {mad}");
        assert_eq!(Conformity::from_mad(mad), Conformity::Close);
    }

    #[test]
    fn all_leading_ones_do_not_conform() {
        let prices = vec![1.0, 12.0, 150.0, 1999.0, 0.17];
        let a = benford_mad(&prices, 1);
        let mad = a.mad.unwrap();
        assert!((mad - 0.155_33).abs() < 5e-6, "mad = {mad}");
        assert!((mad - (2.0 - 2.0 * 2f64.log10()) / 9.0).abs() < 1e-12);
        assert_eq!(a.conformity, Conformity::NoConformity);
    }

    #[test]
    fn conformity_bins_are_closed_left() {
        assert_eq!(Conformity::from_mad(0.005), Conformity::Close);
        assert_eq!(Conformity::from_mad(0.006), Conformity::Acceptable);
        assert_eq!(Conformity::from_mad(0.012), Conformity::MarginallyAcceptable);
        assert_eq!(Conformity::from_mad(0.016), Conformity::NoConformity);
    }

    #[test]
    fn ineligible_buyers_and_zero_prices() {
        assert_eq!(benford_mad(&[1.0, 2.0], 3), BenfordAssessment::NOT_ELIGIBLE);
        assert_eq!(benford_mad(&[0.0, 0.0, 0.0], 1), BenfordAssessment::NOT_ELIGIBLE);
    }

    #[test]
    fn first_digit_handles_small_and_large_amounts() {
        assert_eq!(first_digit(0.0042), Some(4));
        assert_eq!(first_digit(987654.0), Some(9));
        assert_eq!(first_digit(1.0), Some(1));
        assert_eq!(first_digit(0.0), None);
    }

    #[test]
    fn eligibility_threshold_rounds_up() {
        // q75 of [1,2,3,4] is 3.25
        assert_eq!(benford_eligibility_threshold(&[1, 2, 3, 4]), 4);
    }

    #[test]
    fn period_arithmetic() {
        let d = |s: &str| NaiveDate::parse_from_str(s, "%Y-%m-%d").ok();
        assert_eq!(period_days(d("2020-01-01"), d("2020-01-06")), PeriodDays::Days(5));
        assert_eq!(period_days(None, d("2020-01-06")), PeriodDays::Missing);
        assert_eq!(period_days(d("2020-03-01"), d("2020-02-01")), PeriodDays::Negative);
        assert_eq!(PeriodDays::Negative.days(), None);
    }

    #[test]
    fn weight_table() {
        assert_eq!(decision_period_weight(Some(3)), 0.75);
        assert_eq!(decision_period_weight(Some(0)), 1.0);
        assert_eq!(decision_period_weight(Some(10)), 0.25);
        assert_eq!(decision_period_weight(Some(100)), 0.0);
        assert_eq!(decision_period_weight(None), 0.5);
        assert_eq!(submission_period_weight(Some(8)), 0.0);
        assert_eq!(submission_period_weight(Some(3)), 0.66);
        assert_eq!(submission_period_weight(Some(20)), 0.33);
        assert_eq!(submission_period_weight(None), 1.0);
        assert_eq!(single_bidder_weight(None), None);
        assert_eq!(single_bidder_weight(Some(1)), Some(1.0));
        assert_eq!(single_bidder_weight(Some(4)), Some(0.0));
        assert_eq!(procedure_type_weight(ProcedureType::AtLeastThree), 0.5);
        assert_eq!(Conformity::NonApplicable.weight(), 0.5);
    }

    #[test]
    fn cri_is_mean_of_present_flags() {
        let f = RedFlagVector {
            benford: Some(0.0),
            decision_period: 0.66,
            submission_period: 0.75,
            single_bidder: None,
            procedure_type: 1.0,
            buyer_dependence: 0.59,
        };
        let c = cri(&f);
        assert_eq!(c.n_components, 5);
        assert!((c.value - 0.6).abs() < 1e-12);
        assert!(CriScore::from_components(&[None, None]).is_err());
        let zeros = CriScore::from_components(&[Some(0.0); 6]).unwrap();
        assert_eq!(zeros.value, 0.0);
        let ones = CriScore::from_components(&[Some(1.0); 6]).unwrap();
        assert_eq!(ones.value, 1.0);
    }

    #[test]
    fn buyer_dependence_ratios() {
        let ds = LabeledDataset::unlabeled(vec![record("B", "S1", 30.0), record("B", "S2", 70.0), record("C", "S1", 5.0)]);
        assert!((buyer_dependence("B", "S1", 2020, &ds) - 0.3).abs() < 1e-12);
        assert_eq!(buyer_dependence("C", "S1", 2020, &ds), 1.0);
        let table = compute_risk_table(&ds);
        let per_b: f64 = [0usize, 1].iter().map(|&i| table.flags[i].buyer_dependence).sum();
        assert!((per_b - 1.0).abs() < 1e-12);
    }

    fn digit_mass() -> impl Strategy<Value = [u64; 9]> {
        prop::array::uniform9(0u64..50)
    }

    proptest! {
        #[test]
        fn mad_is_bounded_and_matches_direct_arithmetic(counts in digit_mass()) {
            prop_assume!(counts.iter().sum::<u64>() > 0);
            let mad = mad_from_counts(&counts).unwrap();
            // direct oracle over the closed-form table
            let total: u64 = counts.iter().sum();
            let mut dev = 0.0;
            for d in 1..=9u32 {
                let b = (1.0 + 1.0 / d as f64).log10();
                dev += (counts[d as usize - 1] as f64 / total as f64 - b).abs();
            }
            prop_assert!((mad - dev / 9.0).abs() < 1e-15);
            let min_b = (1.0 + 1.0 / 9.0f64).log10();
            prop_assert!(mad >= 0.0 && mad <= 2.0 / 9.0 * (1.0 - min_b) + 1e-15);
        }

        #[test]
        fn cri_is_bounded_and_monotone(
            ws in prop::array::uniform6(prop::option::of(0.0f64..=1.0)),
            slot in 0usize..6,
            bump in 0.0f64..=1.0,
        ) {
            prop_assume!(ws.iter().any(Option::is_some));
            let base = CriScore::from_components(&ws).unwrap().value;
            prop_assert!((0.0..=1.0).contains(&base));
            if let Some(w) = ws[slot] {
                let mut raised = ws;
                raised[slot] = Some(w.max(bump));
                let up = CriScore::from_components(&raised).unwrap().value;
                prop_assert!(up >= base - 1e-15);
            }
        }
    }
}
