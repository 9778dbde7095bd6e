use std::collections::{HashMap, HashSet};

use pufraud::domain::{parse_contracts, parse_sanctions, write_contracts, write_sanctions, ParseConfig};
use pufraud::synth::{concentration_report, generate, SynthConfig};

#[test]
fn default_market_matches_concentration_targets() {
    let d = generate(&SynthConfig::default()).unwrap();
    assert_eq!(d.contracts.len(), 50_000);
    let rep = concentration_report(&d.contracts, 0.05);
    assert!((rep.gini - 0.77).abs() <= 0.05, "gini {}", rep.gini);
    assert!((rep.top_share - 0.64).abs() <= 0.05, "top share {}", rep.top_share);
    let prevalence = d.labeled().prevalence();
    assert!((0.022..=0.05).contains(&prevalence), "prevalence {prevalence}");
}

#[test]
fn csv_round_trip_is_byte_identical() {
    let cfg = SynthConfig { contracts_per_year: 2000, n_suppliers: 400, n_buyers: 40, core_buyers: 6, ..Default::default() };
    let d = generate(&cfg).unwrap();
    let mut a = Vec::new();
    write_contracts(&mut a, &d.contracts).unwrap();
    let parsed = parse_contracts(a.as_slice(), &ParseConfig::default()).unwrap();
    assert!(parsed.rejections.is_empty(), "{:?}", &parsed.rejections[..parsed.rejections.len().min(3)]);
    let mut b = Vec::new();
    write_contracts(&mut b, &parsed.contracts).unwrap();
    assert_eq!(a, b);

    let mut s = Vec::new();
    write_sanctions(&mut s, &d.sanctions).unwrap();
    assert_eq!(parse_sanctions(s.as_slice()).unwrap(), d.sanctions);

    let again = generate(&cfg).unwrap();
    let mut c = Vec::new();
    write_contracts(&mut c, &again.contracts).unwrap();
    assert_eq!(a, c);
}

/// Among fraudulent suppliers, being sanctioned must be independent of
/// behavior: a 2x2 chi-square test of (sanctioned, direct share above the
/// median) stays below the 1% critical value of 6.635.
#[test]
fn sanctions_are_selected_at_random_given_fraud() {
    let d = generate(&SynthConfig::default()).unwrap();
    let fraud: HashSet<&str> = d.fraud_suppliers().into_iter().collect();
    let sanctioned: HashSet<String> = d.sanctions.iter().map(|s| s.supplier_id.clone()).collect();
    let mut tally: HashMap<&str, (f64, f64)> = HashMap::new();
    for c in &d.contracts {
        if fraud.contains(c.supplier_id.as_str()) {
            let e = tally.entry(c.supplier_id.as_str()).or_default();
            e.0 += c.is_direct() as u8 as f64;
            e.1 += 1.0;
        }
    }
    let mut shares: Vec<(bool, f64)> =
        tally.iter().map(|(s, (dir, n))| (sanctioned.contains(*s), dir / n)).collect();
    shares.sort_by(|a, b| a.1.total_cmp(&b.1));
    let median = shares[shares.len() / 2].1;
    let mut table = [[0.0f64; 2]; 2];
    for (s, share) in &shares {
        table[*s as usize][(*share > median) as usize] += 1.0;
    }
    let n: f64 = table.iter().flatten().sum();
    let mut chi2 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let expected = (table[i][0] + table[i][1]) * (table[0][j] + table[1][j]) / n;
            chi2 += (table[i][j] - expected).powi(2) / expected;
        }
    }
    assert!(chi2 < 6.635, "chi2 {chi2} table {table:?}");
}
