//! Layered configuration: defaults, then a TOML file, then command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pufraud::graph::CentralityConfig;
use pufraud::pipeline::ExperimentConfig;
use pufraud::pulearn::{HdsrfConfig, PuBaggingConfig};
use pufraud::sampling::SplitConfig;
use pufraud::synth::SynthConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

pub const CONFIG_ENV: &str = "PUFRAUD_CONFIG";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub synth: SynthConfig,
    pub split: SplitConfig,
    pub hdsrf: HdsrfConfig,
    pub pubag: PuBaggingConfig,
    pub centrality: CentralityConfig,
}

impl Config {
    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig { split: self.split, hdsrf: self.hdsrf, pubag: self.pubag, centrality: self.centrality }
    }
}

/// Effective configuration plus where each part came from.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: Config,
    pub file: Option<PathBuf>,
    /// Dotted key to value for every flag that overrode the file or defaults.
    pub overrides: BTreeMap<String, Value>,
}

impl Resolved {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", p.display())))?
            }
            None => Config::default(),
        };
        Ok(Resolved { config, file: path.map(Path::to_path_buf), overrides: BTreeMap::new() })
    }

    /// Applies a flag value if present and records it.
    pub fn set<T: Serialize + Copy>(&mut self, key: &str, flag: Option<T>, apply: impl FnOnce(&mut Config, T)) {
        if let Some(v) = flag {
            apply(&mut self.config, v);
            self.overrides.insert(key.to_string(), serde_json::to_value(v).unwrap_or(Value::Null));
        }
    }

    pub fn precedence(&self) -> Value {
        serde_json::json!({
            "order": ["flags", "file", "defaults"],
            "file": self.file.as_ref().map(|p| p.display().to_string()),
            "flags": self.overrides,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_other_defaults() {
        let c: Config = toml::from_str("[hdsrf]\nn_estimators = 10\n[split]\nseed = 7\n").unwrap();
        assert_eq!(c.hdsrf.n_estimators, 10);
        assert_eq!(c.hdsrf.class_prior, 0.05);
        assert_eq!(c.split.seed, 7);
        assert_eq!(c.pubag, PuBaggingConfig::default());
    }

    #[test]
    fn unknown_section_is_rejected() {
        assert!(toml::from_str::<Config>("[forest]\ntrees = 3\n").is_err());
    }

    #[test]
    fn flags_override_file() {
        let mut r = Resolved { config: Config::default(), file: None, overrides: BTreeMap::new() };
        r.config.hdsrf.max_depth = 4;
        r.set("hdsrf.max_depth", Some(6usize), |c, v| c.hdsrf.max_depth = v);
        r.set("hdsrf.n_estimators", None::<usize>, |c, v| c.hdsrf.n_estimators = v);
        assert_eq!(r.config.hdsrf.max_depth, 6);
        assert_eq!(r.overrides.len(), 1);
    }
}
