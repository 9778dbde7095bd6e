//! Versioned model container.
//!
//! Layout: 8 magic bytes, a little-endian `u32` format version, a `u64`
//! header length, the JSON header (kind, config, feature names, schema hash,
//! calibration, free-form metadata) and a payload. Forest payloads are packed
//! node arrays; PU bagging payloads are JSON.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::calibrate::CalibratedScorer;
use super::forest::{Forest, HdsrfConfig};
use super::pubag::{Estimator, PuBagging, PuBaggingConfig, RffMap, Standardizer};
use super::tree::{Node, Tree};
use crate::error::{Error, Result};
use crate::featureset::FeatureMatrix;

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"PUFMODEL";
const NODE_BYTES: usize = 4 + 8 + 4 + 4 + 8 + 8;

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Hdsrf(Forest),
    PuBagging(PuBagging),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Hdsrf(_) => "hdsrf",
            Model::PuBagging(_) => "pu_bagging",
        }
    }

    pub fn feature_names(&self) -> &[String] {
        match self {
            Model::Hdsrf(f) => &f.feature_names,
            Model::PuBagging(m) => &m.feature_names,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Model::Hdsrf(f) => f.config.seed,
            Model::PuBagging(m) => m.config.seed,
        }
    }

    /// Uncalibrated scores for every row of `x`.
    pub fn raw_scores(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        match self {
            Model::Hdsrf(f) => f.predict(x),
            Model::PuBagging(m) => m.score(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: Model,
    /// Schema hash of the matrix the model was trained on.
    pub schema_hash: String,
    pub calibration: Option<CalibratedScorer>,
    pub metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    config: serde_json::Value,
    feature_names: Vec<String>,
    schema_hash: String,
    seed: u64,
    calibration: Option<CalibratedScorer>,
    metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct BaggingBody {
    standardizer: Standardizer,
    rff: RffMap,
    estimators: Vec<Estimator>,
}

impl ModelFile {
    pub fn new(model: Model, schema_hash: String) -> Self {
        ModelFile { model, schema_hash, calibration: None, metadata: serde_json::Value::Null }
    }

    /// Refuses matrices whose layout differs from training.
    pub fn check(&self, x: &FeatureMatrix) -> Result<()> {
        crate::featureset::check_schema(self.model.feature_names(), x)?;
        let found = x.schema_hash();
        if found != self.schema_hash {
            return Err(Error::SchemaMismatch(format!(
                "model schema hash {} does not match matrix schema hash {found}",
                self.schema_hash
            )));
        }
        Ok(())
    }

    pub fn raw_scores(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        self.check(x)?;
        self.model.raw_scores(x)
    }

    /// Calibrated scores when a calibration map is attached, raw otherwise.
    pub fn scores(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        let raw = self.raw_scores(x)?;
        Ok(match &self.calibration {
            Some(c) => c.apply_all(&raw),
            None => raw,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (config, payload) = match &self.model {
            Model::Hdsrf(f) => (serde_json::to_value(f.config)?, pack_trees(&f.trees)),
            Model::PuBagging(m) => {
                let body = BaggingBody {
                    standardizer: m.standardizer.clone(),
                    rff: m.rff.clone(),
                    estimators: m.estimators.clone(),
                };
                (serde_json::to_value(m.config)?, serde_json::to_vec(&body)?)
            }
        };
        let header = Header {
            kind: self.model.kind().to_string(),
            config,
            feature_names: self.model.feature_names().to_vec(),
            schema_hash: self.schema_hash.clone(),
            seed: self.model.seed(),
            calibration: self.calibration.clone(),
            metadata: self.metadata.clone(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(Error::data("not a model file (bad magic bytes)"));
        }
        let version = cur.u32()?;
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::data(format!(
                "model format version {version} is not supported (expected {MODEL_FORMAT_VERSION})"
            )));
        }
        let len = cur.u64()? as usize;
        let header: Header = serde_json::from_slice(cur.take(len)?)?;
        let payload = &bytes[cur.pos..];
        let model = match header.kind.as_str() {
            "hdsrf" => {
                let config: HdsrfConfig = serde_json::from_value(header.config)?;
                let trees = unpack_trees(payload)?;
                Model::Hdsrf(Forest { config, feature_names: header.feature_names, trees })
            }
            "pu_bagging" => {
                let config: PuBaggingConfig = serde_json::from_value(header.config)?;
                let body: BaggingBody = serde_json::from_slice(payload)?;
                Model::PuBagging(PuBagging {
                    config,
                    feature_names: header.feature_names,
                    standardizer: body.standardizer,
                    rff: body.rff,
                    estimators: body.estimators,
                })
            }
            other => return Err(Error::data(format!("unknown model kind '{other}'"))),
        };
        Ok(ModelFile { model, schema_hash: header.schema_hash, calibration: header.calibration, metadata: header.metadata })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn pack_trees(trees: &[Tree]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(trees.len() as u32).to_le_bytes());
    for t in trees {
        out.extend_from_slice(&(t.nodes.len() as u32).to_le_bytes());
        for n in &t.nodes {
            out.extend_from_slice(&n.feature.to_le_bytes());
            out.extend_from_slice(&n.threshold.to_le_bytes());
            out.extend_from_slice(&n.left.to_le_bytes());
            out.extend_from_slice(&n.right.to_le_bytes());
            out.extend_from_slice(&n.value.to_le_bytes());
            out.extend_from_slice(&n.cover.to_le_bytes());
        }
    }
    out
}

fn unpack_trees(bytes: &[u8]) -> Result<Vec<Tree>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let n_trees = cur.u32()? as usize;
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let n_nodes = cur.u32()? as usize;
        if cur.remaining() < n_nodes * NODE_BYTES {
            return Err(Error::data("model file is truncated"));
        }
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            nodes.push(Node {
                feature: cur.u32()?,
                threshold: cur.f64()?,
                left: cur.u32()?,
                right: cur.u32()?,
                value: cur.f64()?,
                cover: cur.f64()?,
            });
        }
        trees.push(Tree { nodes });
    }
    if cur.remaining() != 0 {
        return Err(Error::data("trailing bytes after the tree payload"));
    }
    Ok(trees)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::data("model file is truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featureset::{ColumnKind, ColumnMeta, FeatureSource};
    use crate::pulearn::TrainingSet;

    fn matrix(names: &[&str], rows: usize) -> FeatureMatrix {
        let columns = names
            .iter()
            .map(|n| ColumnMeta {
                name: n.to_string(),
                kind: ColumnKind::Continuous,
                sentinel: None,
                source: FeatureSource::Domain,
                origin: n.to_string(),
            })
            .collect();
        let data = (0..rows * names.len()).map(|i| ((i * 37) % 11) as f64).collect();
        FeatureMatrix::new(columns, rows, data).unwrap()
    }

    fn set() -> TrainingSet {
        TrainingSet::new((0..40).collect(), (0..40).map(|i| i % 5 == 0).collect())
    }

    #[test]
    fn forest_round_trip_is_bitwise() {
        let x = matrix(&["a", "b", "c"], 40);
        let cfg = HdsrfConfig { n_estimators: 5, class_prior: 0.3, ..Default::default() };
        let (forest, _) = Forest::train(&x, &set(), &cfg).unwrap();
        let mut file = ModelFile::new(Model::Hdsrf(forest), x.schema_hash());
        file.calibration = Some(CalibratedScorer::fit(&[0.1, 0.5, 0.9], &[false, true, true]));
        let back = ModelFile::from_bytes(&file.to_bytes().unwrap()).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.scores(&x).unwrap(), file.scores(&x).unwrap());
    }

    #[test]
    fn bagging_round_trip() {
        let x = matrix(&["a", "b"], 40);
        let cfg = PuBaggingConfig { n_estimators: 3, rff_components: 8, ..Default::default() };
        let (m, _) = PuBagging::train(&x, &set(), &cfg).unwrap();
        let file = ModelFile::new(Model::PuBagging(m), x.schema_hash());
        let back = ModelFile::from_bytes(&file.to_bytes().unwrap()).unwrap();
        assert_eq!(back, file);
    }

    #[test]
    fn mismatched_schema_is_refused() {
        let x = matrix(&["a", "b"], 40);
        let cfg = HdsrfConfig { n_estimators: 2, ..Default::default() };
        let (forest, _) = Forest::train(&x, &set(), &cfg).unwrap();
        let file = ModelFile::new(Model::Hdsrf(forest), x.schema_hash());
        let err = file.scores(&matrix(&["a", "z"], 3)).unwrap_err();
        assert!(err.to_string().contains("'z'"), "{err}");
    }

    #[test]
    fn corrupt_files_are_rejected() {
        assert!(ModelFile::from_bytes(b"garbage").is_err());
        let x = matrix(&["a"], 40);
        let (forest, _) = Forest::train(&x, &set(), &HdsrfConfig { n_estimators: 1, ..Default::default() }).unwrap();
        let bytes = ModelFile::new(Model::Hdsrf(forest), x.schema_hash()).to_bytes().unwrap();
        assert!(ModelFile::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut wrong = bytes.clone();
        wrong[8] = 9;
        assert!(ModelFile::from_bytes(&wrong).unwrap_err().to_string().contains("version"));
    }
}
