use std::collections::{BTreeMap, HashMap};

use proptest::prelude::*;
use pufraud::domain::{apply_labels, apply_labels_with_cutoff, Label};
use pufraud::featureset::{ColumnKind, ColumnMeta, FeatureMatrix, FeatureSource};
use pufraud::graph::{coreness, edge_betweenness, eigenvector, CentralityConfig, UGraph};
use pufraud::pulearn::{hellinger_from_counts, Forest, HdsrfConfig, TrainingSet};
use pufraud::ranking::evaluate;
use pufraud::sampling::{plan_company_split, SplitConfig};
use pufraud::synth::{generate, SynthConfig, SynthData};
use pufraud::util::rng;
use rand::seq::SliceRandom;
use rand::Rng;

fn small_market() -> SynthData {
    generate(&SynthConfig {
        n_buyers: 30,
        n_suppliers: 250,
        contracts_per_year: 800,
        years: 2,
        core_buyers: 5,
        seed: 5,
        ..Default::default()
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn labels_do_not_depend_on_row_order(seed in any::<u64>()) {
        let data = small_market();
        let set = data.sanction_set();
        let reference: HashMap<String, Label> = {
            let d = apply_labels(data.contracts.clone(), &set);
            d.contracts.iter().map(|c| c.contract_id.clone()).zip(d.labels).collect()
        };
        let mut shuffled = data.contracts.clone();
        shuffled.shuffle(&mut rng(seed));
        let d = apply_labels(shuffled.clone(), &set);
        for (c, l) in d.contracts.iter().zip(&d.labels) {
            prop_assert_eq!(reference[&c.contract_id], *l);
        }
        let unlabeled = d.labels.iter().filter(|l| !l.is_positive()).count();
        prop_assert_eq!(d.n_positive() + unlabeled, d.len());
        let open_ended = apply_labels_with_cutoff(shuffled, &set, i32::MAX);
        prop_assert_eq!(open_ended.labels, d.labels);
    }
}

fn relabeled(g: &UGraph, perm: &[u32]) -> UGraph {
    let edges: Vec<(u32, u32, f64)> = g.edges().iter().map(|&(a, b, w)| (perm[a as usize], perm[b as usize], w)).collect();
    UGraph::from_edges(g.n_nodes(), &edges)
}

fn graph_strategy() -> impl Strategy<Value = (UGraph, Vec<u32>)> {
    (2usize..40, any::<u64>()).prop_map(|(n, seed)| {
        let mut r = rng(seed);
        let mut pairs = std::collections::BTreeSet::new();
        for _ in 0..r.random_range(0..3 * n) {
            let (a, b) = (r.random_range(0..n) as u32, r.random_range(0..n) as u32);
            if a != b {
                pairs.insert((a.min(b), a.max(b)));
            }
        }
        let edges: Vec<(u32, u32, f64)> = pairs.into_iter().map(|(a, b)| (a, b, r.random_range(1..4) as f64)).collect();
        let mut perm: Vec<u32> = (0..n as u32).collect();
        perm.shuffle(&mut r);
        (UGraph::from_edges(n, &edges), perm)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn graph_metrics_ignore_node_labels((g, perm) in graph_strategy()) {
        let h = relabeled(&g, &perm);
        let cfg = CentralityConfig::default();
        for weighted in [false, true] {
            let (a, b) = (coreness(&g, weighted), coreness(&h, weighted));
            for v in 0..g.n_nodes() {
                prop_assert_eq!(a[v], b[perm[v] as usize]);
            }
        }
        let (ea, _, _) = eigenvector(&g, cfg.eigen_tolerance, cfg.eigen_max_iter);
        let (eb, _, _) = eigenvector(&h, cfg.eigen_tolerance, cfg.eigen_max_iter);
        for v in 0..g.n_nodes() {
            prop_assert!((ea[v] - eb[perm[v] as usize]).abs() < 1e-8);
        }
        let key = |a: u32, b: u32| (a.min(b), a.max(b));
        let (ba, _) = edge_betweenness(&g, &cfg);
        let (bb, _) = edge_betweenness(&h, &cfg);
        let by_edge: BTreeMap<(u32, u32), f64> = h.edges().iter().zip(&bb).map(|(&(a, b, _), &v)| (key(a, b), v)).collect();
        for (&(a, b, _), &v) in g.edges().iter().zip(&ba) {
            let w = by_edge[&key(perm[a as usize], perm[b as usize])];
            prop_assert!((v - w).abs() < 1e-12);
        }
    }
}

#[test]
fn perfect_ranking_maximizes_gain_among_tie_free_rankings() {
    for n in 1..=8usize {
        let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
        for mask in 1u32..(1 << n) {
            let y: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
            let p = y.iter().filter(|&&v| v).count();
            let perfect: Vec<bool> = (0..n).map(|i| i < p).collect();
            let e = evaluate(&y, &scores).unwrap();
            let best = evaluate(&perfect, &scores).unwrap();
            assert!(e.avg_gain <= best.avg_gain);
            let mut running = 0u64;
            for (k, &label) in y.iter().enumerate() {
                running += label as u64;
                assert_eq!(e.cumsum[k], running);
            }
        }
    }
}

#[test]
fn split_plans_are_pure_and_keep_a_row_per_supplier() {
    let data = small_market();
    let d = data.labeled();
    for seed in 0..20 {
        let cfg = SplitConfig { seed, ..Default::default() };
        let a = plan_company_split(&d, &cfg).unwrap();
        assert_eq!(a, plan_company_split(&d, &cfg).unwrap());
        assert!(a.undersample_cap >= 1);
        for s in &a.undersampled_suppliers {
            assert!(a.train_indices.iter().any(|&r| &d.contracts[r].supplier_id == s));
        }
    }
}

fn pn_matrix(n: usize, seed: u64) -> (FeatureMatrix, Vec<bool>) {
    let mut r = rng(seed);
    let mut data = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let pos = r.random_bool(0.3);
        data.push(r.random_range(0..10) as f64 + if pos { 3.0 } else { 0.0 });
        data.push(r.random_range(0..5) as f64);
        y.push(pos);
    }
    let columns = (0..2)
        .map(|j| ColumnMeta {
            name: format!("x{j}"),
            kind: ColumnKind::Continuous,
            sentinel: None,
            source: FeatureSource::Domain,
            origin: format!("x{j}"),
        })
        .collect();
    (FeatureMatrix::new(columns, n, data).unwrap(), y)
}

/// With a prior below every node's labeled share, no unlabeled mass is
/// presumed positive: leaves hold the weighted positive fraction of the
/// training rows reaching them, as in a plain Hellinger forest.
#[test]
fn negligible_prior_gives_empirical_leaf_fractions() {
    let (x, y) = pn_matrix(400, 3);
    let set = TrainingSet::new((0..400).collect(), y);
    let cfg = HdsrfConfig { n_estimators: 10, class_prior: 1e-12, max_depth: 4, ..Default::default() };
    let (forest, _, samples) = Forest::train_instrumented(&x, &set, &cfg).unwrap();
    for (tree, sample) in forest.trees.iter().zip(&samples) {
        let mut mass: HashMap<usize, (f64, f64)> = HashMap::new();
        for &r in &sample.positives {
            let e = mass.entry(tree.leaf_index(x.row(r))).or_default();
            e.0 += 1.0;
            e.1 += 1.0;
        }
        for &(r, c) in &sample.unlabeled {
            mass.entry(tree.leaf_index(x.row(r))).or_default().1 += c as f64;
        }
        for (leaf, (pos, total)) in mass {
            assert!((tree.nodes[leaf].value - pos / total).abs() < 1e-9, "leaf {leaf}");
        }
    }
}

#[test]
fn zero_mixture_is_the_standard_hellinger_distance() {
    let mut r = rng(11);
    for _ in 0..1000 {
        let left = (r.random_range(0..50) as f64, r.random_range(0..50) as f64);
        let right = (r.random_range(0..50) as f64, r.random_range(0..50) as f64);
        let (p, q) = (left.0 + right.0, left.1 + right.1);
        if p == 0.0 || q == 0.0 {
            continue;
        }
        let standard = (((left.0 / p).sqrt() - (left.1 / q).sqrt()).powi(2)
            + ((right.0 / p).sqrt() - (right.1 / q).sqrt()).powi(2))
        .sqrt();
        assert!((hellinger_from_counts(0.0, left, right) - standard).abs() < 1e-12);
    }
}
