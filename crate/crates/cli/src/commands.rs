//! One function per subcommand. Every stage reads its inputs from the run
//! directory, writes new files only, and leaves a manifest behind.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use pufraud::attribution::{dependence_export, global_importance, treeshap, DependenceExport};
use pufraud::domain::{
    apply_labels, parse_contracts, parse_sanctions, write_contracts, write_sanctions, LabeledDataset, ParseConfig,
    SanctionSet,
};
use pufraud::featureset::{build_features, FeatureManifest, FeatureMatrix};
use pufraud::pipeline::{fit, permutation_experiment, score_rows, ModelKind};
use pufraud::pulearn::{CalibratedScorer, Model, ModelFile};
use pufraud::ranking::{evaluate, EvaluationReport};
use pufraud::sampling::{plan_company_split, temporal_split, SplitPlan};
use pufraud::synth::{concentration_report, generate};
use pufraud::util::sha256_hex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::Resolved;
use crate::error::CliError;
use crate::manifest::Recorder;
use crate::svg::{scatter, step_chart, Series};

pub const SCHEMA_VERSION: u32 = 1;

/// File layout of a run directory.
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn manifest(&self, command: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{command}.json"))
    }

    /// An input produced by an earlier stage; missing files name that stage.
    fn require(&self, rel: &str, stage: &str) -> Result<PathBuf, CliError> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::Usage(format!("missing artifact {}; run `pufraud {stage}` first", p.display())))
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))
}

/// Parses "2015-2018" or "2015,2017" into a sorted list of years.
pub fn parse_years(text: &str) -> Result<Vec<i32>, CliError> {
    let bad = || CliError::Usage(format!("invalid year list '{text}'"));
    let mut years = Vec::new();
    for part in text.split(',') {
        match part.trim().split_once('-') {
            Some((a, b)) => {
                let (a, b): (i32, i32) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                years.extend(a..=b);
            }
            None => years.push(part.trim().parse().map_err(|_| bad())?),
        }
    }
    years.sort_unstable();
    years.dedup();
    Ok(years)
}

fn recorder(command: &str, workers: Option<usize>, cfg: &Resolved, section: Value) -> Recorder {
    Recorder::new(command, workers, section, cfg.precedence())
}

// ---------------------------------------------------------------- synth

pub struct SynthArgs {
    pub out: Option<PathBuf>,
}

pub fn synth(dir: &RunDir, cfg: &Resolved, workers: Option<usize>, args: &SynthArgs) -> Result<(), CliError> {
    let sc = cfg.config.synth;
    let mut rec = recorder("synth", workers, cfg, json!({ "synth": sc }));
    rec.seed("synth", sc.seed);
    let data = generate(&sc)?;
    rec.lap("generate");
    let out = args.out.clone().unwrap_or_else(|| dir.path("raw"));
    let (contracts, sanctions, truth) = (out.join("contracts.csv"), out.join("sanctions.csv"), out.join("ground_truth.csv"));
    let mut w = create(&contracts)?;
    write_contracts(&mut w, &data.contracts)?;
    w.flush()?;
    let mut w = create(&sanctions)?;
    write_sanctions(&mut w, &data.sanctions)?;
    w.flush()?;
    let mut w = create(&truth)?;
    data.write_ground_truth(&mut w)?;
    w.flush()?;
    let summary = out.join("synth.json");
    write_json(
        &summary,
        &json!({
            "schema_version": SCHEMA_VERSION,
            "config": sc,
            "n_contracts": data.contracts.len(),
            "n_fraud_suppliers": data.fraud_suppliers().len(),
            "n_sanction_records": data.sanctions.len(),
            "prevalence": data.labeled().prevalence(),
            "concentration": concentration_report(&data.contracts, 0.05),
        }),
    )?;
    rec.lap("write");
    for p in [&contracts, &sanctions, &truth, &summary] {
        rec.artifact(p);
    }
    rec.finish(&dir.manifest("synth"))?;
    info!("wrote {} contracts to {}", data.contracts.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------- ingest

pub struct IngestArgs {
    pub contracts: Option<PathBuf>,
    pub sanctions: Option<PathBuf>,
    pub years: Option<String>,
}

pub fn ingest(dir: &RunDir, cfg: &Resolved, workers: Option<usize>, args: &IngestArgs) -> Result<(), CliError> {
    let contracts_in = match &args.contracts {
        Some(p) => p.clone(),
        None => dir.require("raw/contracts.csv", "synth")?,
    };
    let sanctions_in = match &args.sanctions {
        Some(p) => p.clone(),
        None => dir.require("raw/sanctions.csv", "synth")?,
    };
    let year_range = match &args.years {
        Some(t) => {
            let y = parse_years(t)?;
            Some((y[0], *y.last().unwrap()))
        }
        None => None,
    };
    let mut rec = recorder("ingest", workers, cfg, json!({ "year_range": year_range }));
    rec.input(&contracts_in);
    rec.input(&sanctions_in);
    let parsed = parse_contracts(open(&contracts_in)?, &ParseConfig { year_range })?;
    if parsed.contracts.is_empty() {
        return Err(CliError::Data(format!("no valid contracts in {}", contracts_in.display())));
    }
    let records = parse_sanctions(open(&sanctions_in)?)?;
    let set = SanctionSet::from_records(records.clone());
    rec.lap("parse");

    let (c_out, s_out, r_out, summary) = (
        dir.path("data/contracts.csv"),
        dir.path("data/sanctions.csv"),
        dir.path("data/rejections.csv"),
        dir.path("data/ingest.json"),
    );
    let mut w = create(&c_out)?;
    write_contracts(&mut w, &parsed.contracts)?;
    w.flush()?;
    let mut w = create(&s_out)?;
    write_sanctions(&mut w, &records)?;
    w.flush()?;
    let mut w = csv::Writer::from_writer(create(&r_out)?);
    w.write_record(["row", "contract_id", "reason"])?;
    for r in &parsed.rejections {
        w.write_record([r.row.to_string(), r.contract_id.clone().unwrap_or_default(), r.reason.clone()])?;
    }
    w.flush()?;
    let dataset = apply_labels(parsed.contracts, &set);
    write_json(
        &summary,
        &json!({
            "schema_version": SCHEMA_VERSION,
            "n_contracts": dataset.len(),
            "n_rejected": parsed.rejections.len(),
            "n_sanction_records": records.len(),
            "n_sanctioned_suppliers": set.len(),
            "prevalence": dataset.prevalence(),
            "prevalence_by_year": dataset.prevalence_by_year(),
            "dataset_hash": dataset.content_hash(),
        }),
    )?;
    rec.lap("write");
    for p in [&c_out, &s_out, &r_out, &summary] {
        rec.artifact(p);
    }
    rec.finish(&dir.manifest("ingest"))?;
    if !parsed.rejections.is_empty() {
        warn!("{} contract rows rejected; see {}", parsed.rejections.len(), r_out.display());
    }
    info!("ingested {} contracts, prevalence {:.4}", dataset.len(), dataset.prevalence());
    Ok(())
}

struct Loaded {
    dataset: LabeledDataset,
    sanctions: SanctionSet,
}

fn load_dataset(dir: &RunDir, rec: &mut Recorder) -> Result<Loaded, CliError> {
    let c = dir.require("data/contracts.csv", "ingest")?;
    let s = dir.require("data/sanctions.csv", "ingest")?;
    rec.input(&c);
    rec.input(&s);
    let parsed = parse_contracts(open(&c)?, &ParseConfig::default())?;
    if !parsed.rejections.is_empty() {
        return Err(CliError::Data(format!("{} has {} invalid rows", c.display(), parsed.rejections.len())));
    }
    let sanctions = SanctionSet::from_records(parse_sanctions(open(&s)?)?);
    Ok(Loaded { dataset: apply_labels(parsed.contracts, &sanctions), sanctions })
}

// ---------------------------------------------------------------- features

pub fn features(dir: &RunDir, cfg: &Resolved, workers: Option<usize>) -> Result<(), CliError> {
    let centrality = cfg.config.centrality;
    let mut rec = recorder("features", workers, cfg, json!({ "centrality": centrality }));
    rec.seed("betweenness_pivots", centrality.pivot_seed);
    let loaded = load_dataset(dir, &mut rec)?;
    rec.lap("load");
    let build = build_features(&loaded.dataset, &centrality)?;
    rec.lap("build");
    let config_hash = sha256_hex(serde_json::to_string(&centrality)?.as_bytes());
    let manifest = FeatureManifest::new(&build.matrix, config_hash, loaded.dataset.content_hash(), build.diagnostics.clone());
    let (m_out, f_out, c_out) =
        (dir.path("features/features.csv"), dir.path("features/features.json"), dir.path("features/cri.csv"));
    let mut w = create(&m_out)?;
    build.matrix.write_csv(&mut w)?;
    w.flush()?;
    write_json(&f_out, &manifest)?;
    let mut w = csv::Writer::from_writer(create(&c_out)?);
    w.write_record(["contract_id", "cri"])?;
    for (c, v) in loaded.dataset.contracts.iter().zip(&build.risk.cri) {
        w.write_record([c.contract_id.clone(), v.to_string()])?;
    }
    w.flush()?;
    rec.lap("write");
    for p in [&m_out, &f_out, &c_out] {
        rec.artifact(p);
    }
    rec.finish(&dir.manifest("features"))?;
    info!("{} rows x {} features", build.matrix.n_rows(), build.matrix.n_cols());
    Ok(())
}

fn load_features(dir: &RunDir, rec: &mut Recorder, n_rows: usize) -> Result<FeatureMatrix, CliError> {
    let meta = dir.require("features/features.json", "features")?;
    let csv = dir.require("features/features.csv", "features")?;
    rec.input(&meta);
    rec.input(&csv);
    let manifest: FeatureManifest = read_json(&meta)?;
    let x = FeatureMatrix::read_csv(open(&csv)?, manifest.columns.clone())?;
    if x.content_hash() != manifest.content_hash {
        return Err(CliError::Data(format!("{} does not match its manifest", csv.display())));
    }
    if x.n_rows() != n_rows {
        return Err(CliError::Data(format!(
            "feature matrix has {} rows but the dataset has {n_rows}; rerun `pufraud features`",
            x.n_rows()
        )));
    }
    Ok(x)
}

fn load_cri(dir: &RunDir, rec: &mut Recorder) -> Result<Vec<f64>, CliError> {
    let p = dir.require("features/cri.csv", "features")?;
    rec.input(&p);
    let mut r = csv::Reader::from_reader(open(&p)?);
    r.records()
        .map(|row| {
            let row = row?;
            row.get(1)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| CliError::Data(format!("{}: malformed cri row", p.display())))
        })
        .collect()
}

// ---------------------------------------------------------------- split

pub struct SplitArgs {
    pub temporal: Option<TemporalArgs>,
}

pub struct TemporalArgs {
    pub train_years: String,
    pub test_year: i32,
    pub cutoff: Option<i32>,
}

pub fn split(dir: &RunDir, cfg: &Resolved, workers: Option<usize>, args: &SplitArgs) -> Result<(), CliError> {
    let sc = cfg.config.split;
    let mut rec = recorder("split", workers, cfg, json!({ "split": sc }));
    rec.seed("split", sc.seed);
    let loaded = load_dataset(dir, &mut rec)?;
    let (plan, train_labels, mode) = match &args.temporal {
        None => {
            let plan = plan_company_split(&loaded.dataset, &sc)?;
            let labels = loaded.dataset.positive_mask();
            (plan, labels, json!({ "mode": "company" }))
        }
        Some(t) => {
            let years = parse_years(&t.train_years)?;
            let cutoff = t.cutoff.unwrap_or(*years.last().unwrap());
            let ts = temporal_split(loaded.dataset.contracts.clone(), &loaded.sanctions, &years, t.test_year, cutoff, &sc)?;
            if ts.train_labels.cutoff_before_data {
                warn!("sanction cutoff {cutoff} precedes every contract year");
            }
            let labels = ts.train_labels.positive_mask();
            (ts.plan, labels, json!({ "mode": "temporal", "train_years": years, "test_year": t.test_year, "cutoff": cutoff }))
        }
    };
    rec.lap("split");
    let (p_out, l_out, i_out) = (dir.path("split/split.json"), dir.path("split/train_labels.csv"), dir.path("split/split_info.json"));
    std::fs::create_dir_all(dir.path("split"))?;
    std::fs::write(&p_out, plan.to_json()?)?;
    let mut w = csv::Writer::from_writer(create(&l_out)?);
    w.write_record(["contract_id", "label"])?;
    for (c, &l) in loaded.dataset.contracts.iter().zip(&train_labels) {
        w.write_record([c.contract_id.as_str(), if l { "1" } else { "0" }])?;
    }
    w.flush()?;
    let mut info_doc = mode;
    info_doc["schema_version"] = json!(SCHEMA_VERSION);
    info_doc["train_rows"] = json!(plan.train_indices.len());
    info_doc["train_rows_before_undersampling"] = json!(plan.train_rows_before_undersampling);
    info_doc["test_rows"] = json!(plan.test_indices.len());
    info_doc["calibration_rows"] = json!(plan.calibration_indices.len());
    info_doc["undersample_cap"] = json!(plan.undersample_cap);
    write_json(&i_out, &info_doc)?;
    for p in [&p_out, &l_out, &i_out] {
        rec.artifact(p);
    }
    rec.finish(&dir.manifest("split"))?;
    info!("train {} rows, test {} rows", plan.train_indices.len(), plan.test_indices.len());
    Ok(())
}

fn load_plan(dir: &RunDir, rec: &mut Recorder) -> Result<SplitPlan, CliError> {
    let p = dir.require("split/split.json", "split")?;
    rec.input(&p);
    Ok(SplitPlan::from_json(&std::fs::read_to_string(&p)?)?)
}

fn load_train_labels(dir: &RunDir, rec: &mut Recorder, dataset: &LabeledDataset) -> Result<Vec<bool>, CliError> {
    let p = dir.require("split/train_labels.csv", "split")?;
    rec.input(&p);
    let mut r = csv::Reader::from_reader(open(&p)?);
    let mut out = Vec::with_capacity(dataset.len());
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let id = dataset.contracts.get(i).map(|c| c.contract_id.as_str());
        if row.get(0) != id {
            return Err(CliError::Data(format!("{} does not match the dataset at row {}", p.display(), i + 1)));
        }
        out.push(row.get(1) == Some("1"));
    }
    if out.len() != dataset.len() {
        return Err(CliError::Data(format!("{} has {} rows, dataset has {}", p.display(), out.len(), dataset.len())));
    }
    Ok(out)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Learner {
    Hdsrf,
    Pubag,
}

impl Learner {
    pub fn kind(self) -> ModelKind {
        match self {
            Learner::Hdsrf => ModelKind::Hdsrf,
            Learner::Pubag => ModelKind::PuBagging,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Learner::Hdsrf => "hdsrf",
            Learner::Pubag => "pubag",
        }
    }

    fn section(self, cfg: &Resolved) -> Value {
        match self {
            Learner::Hdsrf => json!({ "hdsrf": cfg.config.hdsrf }),
            Learner::Pubag => json!({ "pubag": cfg.config.pubag }),
        }
    }

    fn seed(self, cfg: &Resolved) -> u64 {
        match self {
            Learner::Hdsrf => cfg.config.hdsrf.seed,
            Learner::Pubag => cfg.config.pubag.seed,
        }
    }
}

pub fn train(dir: &RunDir, cfg: &Resolved, workers: Option<usize>, learner: Learner) -> Result<(), CliError> {
    let mut rec = recorder("train", workers, cfg, learner.section(cfg));
    rec.seed(learner.name(), learner.seed(cfg));
    let loaded = load_dataset(dir, &mut rec)?;
    let x = load_features(dir, &mut rec, loaded.dataset.len())?;
    let plan = load_plan(dir, &mut rec)?;
    let train_positive = load_train_labels(dir, &mut rec, &loaded.dataset)?;
    rec.lap("load");
    let (model, report) = fit(learner.kind(), &x, &train_positive, &plan.train_indices, &cfg.config.experiment())?;
    rec.lap("fit");
    let mut file = ModelFile::new(model, x.schema_hash());
    if learner == Learner::Hdsrf && !plan.calibration_indices.is_empty() {
        let scores = score_rows(&file.model, &x, &plan.calibration_indices)?;
        let positive = loaded.dataset.positive_mask();
        let labels: Vec<bool> = plan.calibration_indices.iter().map(|&r| positive[r]).collect();
        let cal = CalibratedScorer::fit(&scores, &labels);
        if let Some(w) = &cal.warning {
            warn!("{w}");
        }
        file.calibration = Some(cal);
        rec.lap("calibrate");
    }
    file.metadata = json!({ "config": learner.section(cfg), "dataset_hash": loaded.dataset.content_hash() });
    let (m_out, r_out) =
        (dir.path(&format!("models/{}.pufm", learner.name())), dir.path(&format!("models/{}_train.json", learner.name())));
    std::fs::create_dir_all(dir.path("models"))?;
    file.save(&m_out)?;
    write_json(&r_out, &json!({ "schema_version": SCHEMA_VERSION, "model": learner.name(), "report": report }))?;
    rec.artifact(&m_out);
    rec.artifact(&r_out);
    rec.finish(&dir.manifest(&format!("train_{}", learner.name())))?;
    info!("saved {}", m_out.display());
    Ok(())
}

// ---------------------------------------------------------------- score

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Scorer {
    Hdsrf,
    Pubag,
    Cri,
}

impl Scorer {
    pub fn name(self) -> &'static str {
        match self {
            Scorer::Hdsrf => "hdsrf",
            Scorer::Pubag => "pubag",
            Scorer::Cri => "cri",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum RowSet {
    Test,
    All,
}

pub fn score(dir: &RunDir, cfg: &Resolved, workers: Option<usize>, scorer: Scorer, rows: RowSet) -> Result<(), CliError> {
    let mut rec = recorder("score", workers, cfg, json!({ "model": scorer.name(), "rows": format!("{rows:?}").to_lowercase() }));
    let loaded = load_dataset(dir, &mut rec)?;
    let d = &loaded.dataset;
    let selected: Vec<usize> = match rows {
        RowSet::Test => load_plan(dir, &mut rec)?.test_indices,
        RowSet::All => (0..d.len()).collect(),
    };
    let (raw, calibrated) = match scorer {
        Scorer::Cri => {
            let cri = load_cri(dir, &mut rec)?;
            (selected.iter().map(|&r| cri[r]).collect::<Vec<_>>(), None)
        }
        Scorer::Hdsrf | Scorer::Pubag => {
            let x = load_features(dir, &mut rec, d.len())?;
            let m = dir.require(&format!("models/{}.pufm", scorer.name()), &format!("train --model {}", scorer.name()))?;
            rec.input(&m);
            let file = ModelFile::load(&m)?;
            let sub = x.select_rows(&selected);
            file.check(&sub)?;
            let raw = file.raw_scores(&sub)?;
            let cal = file.calibration.as_ref().map(|c| c.apply_all(&raw));
            (raw, cal)
        }
    };
    rec.lap("score");
    let out = dir.path(&format!("scores/{}.csv", scorer.name()));
    let mut w = csv::Writer::from_writer(create(&out)?);
    let mut header = vec!["row", "contract_id", "supplier_id", "year", "label", "score"];
    if calibrated.is_some() {
        header.push("calibrated");
    }
    w.write_record(&header)?;
    for (i, &r) in selected.iter().enumerate() {
        let c = &d.contracts[r];
        let mut rec_row = vec![
            r.to_string(),
            c.contract_id.clone(),
            c.supplier_id.clone(),
            c.year().to_string(),
            (d.labels[r].is_positive() as u8).to_string(),
            raw[i].to_string(),
        ];
        if let Some(cal) = &calibrated {
            rec_row.push(cal[i].to_string());
        }
        w.write_record(&rec_row)?;
    }
    w.flush()?;
    rec.artifact(&out);
    rec.finish(&dir.manifest(&format!("score_{}", scorer.name())))?;
    info!("scored {} rows with {}", selected.len(), scorer.name());
    Ok(())
}

// ---------------------------------------------------------------- eval

/// Reads a prediction CSV with `label` (0/1) and `score` columns.
pub fn read_predictions(path: &Path) -> Result<(Vec<bool>, Vec<f64>), CliError> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Data(format!("{} has no '{name}' column", path.display())))
    };
    let (li, si) = (col("label")?, col("score")?);
    let (mut labels, mut scores) = (Vec::new(), Vec::new());
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let bad = |what: &str| CliError::Data(format!("{} row {}: invalid {what}", path.display(), i + 1));
        labels.push(match row.get(li).map(str::trim) {
            Some("1") | Some("true") => true,
            Some("0") | Some("false") => false,
            _ => return Err(bad("label")),
        });
        scores.push(row.get(si).and_then(|v| v.trim().parse::<f64>().ok()).ok_or_else(|| bad("score"))?);
    }
    Ok((labels, scores))
}

pub fn eval(
    dir: &RunDir,
    cfg: &Resolved,
    workers: Option<usize>,
    scorer: Option<Scorer>,
    predictions: Option<&Path>,
    name: Option<&str>,
) -> Result<(), CliError> {
    let (path, name) = match (predictions, scorer) {
        (Some(p), _) => {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("predictions").to_string();
            (p.to_path_buf(), name.map(str::to_string).unwrap_or(stem))
        }
        (None, Some(s)) => (
            dir.require(&format!("scores/{}.csv", s.name()), &format!("score --model {}", s.name()))?,
            name.unwrap_or(s.name()).to_string(),
        ),
        (None, None) => return Err(CliError::Usage("eval needs --model or --predictions".into())),
    };
    let source = path.strip_prefix(&dir.root).unwrap_or(&path).display().to_string();
    let mut rec = recorder("eval", workers, cfg, json!({ "predictions": source, "name": name }));
    rec.input(&path);
    let (labels, scores) = read_predictions(&path)?;
    let evaluation = evaluate(&labels, &scores)?;
    let report = EvaluationReport::new(&evaluation, None, json!({ "name": name, "source": source }));
    let (j_out, c_out) = (dir.path(&format!("eval/{name}.json")), dir.path(&format!("eval/{name}_curve.csv")));
    write_json(&j_out, &report)?;
    let mut w = create(&c_out)?;
    report.write_curve_csv(&mut w)?;
    w.flush()?;
    rec.artifact(&j_out);
    rec.artifact(&c_out);
    rec.finish(&dir.manifest(&format!("eval_{name}")))?;
    println!("{name}: avg_gain={} avg_lift={} n={} positives={}", report.avg_gain, report.avg_lift, report.n, report.positives);
    Ok(())
}

// ---------------------------------------------------------------- permtest

pub fn permtest(
    dir: &RunDir,
    cfg: &Resolved,
    workers: Option<usize>,
    learner: Learner,
    permutations: usize,
    seed: u64,
) -> Result<(), CliError> {
    let mut section = learner.section(cfg);
    section["permutations"] = json!(permutations);
    let mut rec = recorder("permtest", workers, cfg, section.clone());
    rec.seed("permutation", seed);
    rec.seed(learner.name(), learner.seed(cfg));
    let loaded = load_dataset(dir, &mut rec)?;
    let x = load_features(dir, &mut rec, loaded.dataset.len())?;
    let plan = load_plan(dir, &mut rec)?;
    let m = dir.require(&format!("models/{}.pufm", learner.name()), &format!("train --model {}", learner.name()))?;
    rec.input(&m);
    let file = ModelFile::load(&m)?;
    rec.lap("load");
    let positive = loaded.dataset.positive_mask();
    let scores = score_rows(&file.model, &x, &plan.test_indices)?;
    let labels: Vec<bool> = plan.test_indices.iter().map(|&r| positive[r]).collect();
    let observed = evaluate(&labels, &scores)?;
    let result = permutation_experiment(
        learner.kind(),
        &loaded.dataset,
        &x,
        &plan.train_indices,
        &plan.test_indices,
        &observed,
        permutations,
        seed,
        &cfg.config.experiment(),
    )?;
    rec.lap("permute");
    if let Some(w) = &result.warning {
        warn!("{w}");
    }
    println!("{}: observed avg_gain={} p_gain={} p_lift={}", learner.name(), observed.avg_gain, result.p_gain, result.p_lift);
    section["seed"] = json!(seed);
    let report = EvaluationReport::new(&observed, Some(result), section);
    let out = dir.path(&format!("permtest/{}.json", learner.name()));
    write_json(&out, &report)?;
    rec.artifact(&out);
    rec.finish(&dir.manifest(&format!("permtest_{}", learner.name())))?;
    Ok(())
}

// ---------------------------------------------------------------- shap

fn file_safe(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect()
}

/// At most `max` rows spread evenly over `rows`.
fn spread(rows: &[usize], max: usize) -> Vec<usize> {
    if rows.len() <= max {
        return rows.to_vec();
    }
    (0..max).map(|i| rows[i * rows.len() / max]).collect()
}

pub fn shap(dir: &RunDir, cfg: &Resolved, workers: Option<usize>, max_rows: usize, top: usize) -> Result<(), CliError> {
    let mut rec = recorder("shap", workers, cfg, json!({ "max_rows": max_rows, "top": top }));
    let loaded = load_dataset(dir, &mut rec)?;
    let x = load_features(dir, &mut rec, loaded.dataset.len())?;
    let plan = load_plan(dir, &mut rec)?;
    let m = dir.require("models/hdsrf.pufm", "train --model hdsrf")?;
    rec.input(&m);
    let file = ModelFile::load(&m)?;
    file.check(&x)?;
    let forest = match &file.model {
        Model::Hdsrf(f) => f,
        _ => return Err(CliError::Usage("shap needs an hdsrf model".into())),
    };
    let rows = spread(&plan.test_indices, max_rows);
    rec.lap("load");
    let values = treeshap(forest, &x, &rows)?;
    let importance = global_importance(&values, &x)?;
    rec.lap("treeshap");
    info!("local accuracy max error {:.2e}", values.max_local_accuracy_error());

    let (s_out, i_out) = (dir.path("shap/shap.csv"), dir.path("shap/importance.json"));
    let mut w = create(&s_out)?;
    values.write_csv(&mut w)?;
    w.flush()?;
    std::fs::write(&i_out, importance.to_json()?)?;
    rec.artifact(&s_out);
    rec.artifact(&i_out);
    let ranked = importance.top(top);
    for (i, f) in ranked.iter().enumerate() {
        let color = importance.features.iter().find(|g| g.name != f.name).map(|g| g.name.as_str()).unwrap_or(&f.name);
        let dep = dependence_export(&values, &x, &f.name, color)?;
        let base = format!("shap/dependence_{}_{}", i + 1, file_safe(&f.name));
        let (j, c) = (dir.path(&format!("{base}.json")), dir.path(&format!("{base}.csv")));
        write_json(&j, &dep)?;
        let mut w = create(&c)?;
        dep.write_csv(&mut w)?;
        w.flush()?;
        rec.artifact(&j);
        rec.artifact(&c);
    }
    rec.lap("export");
    rec.finish(&dir.manifest("shap"))?;
    Ok(())
}

// ---------------------------------------------------------------- report

fn sorted_files(dir: &Path, ext: &str, prefix: &str) -> Result<Vec<PathBuf>, CliError> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == ext)
                && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with(prefix))
        })
        .collect();
    out.sort();
    Ok(out)
}

pub fn report(dir: &RunDir, cfg: &Resolved, workers: Option<usize>) -> Result<(), CliError> {
    let mut rec = recorder("report", workers, cfg, json!({}));
    let evals = sorted_files(&dir.path("eval"), "json", "")?;
    if evals.is_empty() {
        return Err(CliError::Usage(format!(
            "missing artifact {}/*.json; run `pufraud eval` first",
            dir.path("eval").display()
        )));
    }
    let mut reports: Vec<(String, EvaluationReport)> = Vec::new();
    for p in &evals {
        rec.input(p);
        let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string();
        reports.push((name, read_json(p)?));
    }
    let mut permutations: BTreeMap<String, Value> = BTreeMap::new();
    for p in sorted_files(&dir.path("permtest"), "json", "")? {
        rec.input(&p);
        let r: EvaluationReport = read_json(&p)?;
        if let Some(perm) = r.permutation {
            let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string();
            permutations.insert(name, json!({ "p_gain": perm.p_gain, "p_lift": perm.p_lift, "permutations": perm.permuted.len() }));
        }
    }

    let out = dir.path("report");
    std::fs::create_dir_all(&out)?;
    let curves_path = out.join("curves.csv");
    let mut w = csv::Writer::from_writer(create(&curves_path)?);
    w.write_record(["model", "k", "fraction", "cumsum", "baseline", "gain", "lift"])?;
    for (name, r) in &reports {
        for c in &r.curve {
            w.write_record([
                name.clone(),
                c.k.to_string(),
                (c.k as f64 / r.n as f64).to_string(),
                c.cumsum.to_string(),
                c.baseline.to_string(),
                c.gain.to_string(),
                c.lift.to_string(),
            ])?;
        }
    }
    w.flush()?;
    rec.artifact(&curves_path);

    let series = |pick: fn(&pufraud::ranking::CurvePoint) -> f64| -> Vec<Series> {
        reports
            .iter()
            .map(|(name, r)| Series {
                name: name.as_str(),
                points: r.curve.iter().map(|c| (c.k as f64 / r.n as f64, pick(c))).collect(),
            })
            .collect()
    };
    let gain_svg = out.join("gain.svg");
    std::fs::write(&gain_svg, step_chart("Gain over random ranking", "fraction of ranked contracts", "gain", &series(|c| c.gain), Some(0.0)))?;
    let lift_svg = out.join("lift.svg");
    std::fs::write(&lift_svg, step_chart("Lift over random ranking", "fraction of ranked contracts", "lift", &series(|c| c.lift), Some(1.0)))?;
    rec.artifact(&gain_svg);
    rec.artifact(&lift_svg);

    for p in sorted_files(&dir.path("shap"), "json", "dependence_")? {
        rec.input(&p);
        let dep: DependenceExport = read_json(&p)?;
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("dependence").to_string();
        let points: Vec<(f64, f64, f64)> = dep.points.iter().filter(|q| !q.missing).map(|q| (q.value, q.shap, q.color)).collect();
        let title = match dep.pearson {
            Some(r) => format!("{} (colored by {}, r = {r:.2})", dep.feature, dep.color_feature),
            None => format!("{} (colored by {})", dep.feature, dep.color_feature),
        };
        let svg = out.join(format!("{stem}.svg"));
        std::fs::write(&svg, scatter(&title, &dep.feature, "SHAP value", &points, Some(dep.band)))?;
        let csv_out = out.join(format!("{stem}.csv"));
        let mut w = create(&csv_out)?;
        dep.write_csv(&mut w)?;
        w.flush()?;
        rec.artifact(&svg);
        rec.artifact(&csv_out);
    }

    let summary_path = out.join("summary.json");
    let models: Vec<Value> = reports
        .iter()
        .map(|(name, r)| {
            json!({
                "name": name,
                "n": r.n,
                "positives": r.positives,
                "avg_gain": r.avg_gain,
                "avg_lift": r.avg_lift,
                "n_tie_groups": r.n_tie_groups,
                "top_block_size": r.top_block_size,
                "permutation": permutations.get(name),
            })
        })
        .collect();
    write_json(&summary_path, &json!({ "schema_version": SCHEMA_VERSION, "models": models }))?;
    rec.artifact(&summary_path);
    rec.finish(&dir.manifest("report"))?;
    for (name, r) in &reports {
        println!("{name}: avg_gain={:.4} avg_lift={:.4}", r.avg_gain, r.avg_lift);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn year_lists() {
        assert_eq!(parse_years("2015-2018").unwrap(), vec![2015, 2016, 2017, 2018]);
        assert_eq!(parse_years("2019, 2015").unwrap(), vec![2015, 2019]);
        assert!(parse_years("2018-2015").is_err());
        assert!(parse_years("x").is_err());
    }

    #[test]
    fn spread_keeps_order_and_bound() {
        let rows: Vec<usize> = (0..10).collect();
        assert_eq!(spread(&rows, 4), vec![0, 2, 5, 7]);
        assert_eq!(spread(&rows, 20), rows);
    }
}
