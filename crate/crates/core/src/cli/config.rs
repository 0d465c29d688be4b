//! Versioned JSON run configuration shared by all subcommands.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bpe::BpeTrainOptions;
use crate::cbow::CbowConfig;
use crate::neural::TrainConfig;
use crate::probe::ProbeConfig;

use super::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizeConfig {
    pub rho: f64,
    pub seed: u64,
}

impl Default for TokenizeConfig {
    fn default() -> Self {
        Self { rho: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub shards: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { shards: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphabetConfig {
    pub characters: String,
    #[serde(default)]
    pub case_sensitive: bool,
    #[serde(default = "default_script")]
    pub script_name: String,
}

fn default_script() -> String {
    "custom".into()
}

/// Each block is optional; absent blocks take their defaults and command
/// line flags override whatever is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub probe: Option<ProbeConfig>,
    #[serde(default)]
    pub alphabet: Option<AlphabetConfig>,
    #[serde(default)]
    pub tagger: Option<TrainConfig>,
    #[serde(default)]
    pub tokenize: Option<TokenizeConfig>,
    #[serde(default)]
    pub bpe: Option<BpeTrainOptions>,
    #[serde(default)]
    pub cbow: Option<CbowConfig>,
    #[serde(default)]
    pub corpus: Option<CorpusConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            probe: None,
            alphabet: None,
            tagger: None,
            tokenize: None,
            bpe: None,
            cbow: None,
            corpus: None,
        }
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(CliError::Config(format!(
            "config: schema_version {} is not supported (expected {SCHEMA_VERSION})",
            cfg.schema_version
        )));
    }
    Ok(cfg)
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            parse_config(&text)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let err = parse_config("{\n  \"schema_version\": 1,\n  \"probe\": {\"n_seed\": 3}\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("n_seed") && msg.contains("line 3"), "{msg}");
        assert!(parse_config("{\"schema_version\": 1, \"extra\": 0}").is_err());
        assert!(parse_config("{\"schema_version\": 2}").is_err());
    }

    #[test]
    fn partial_blocks_take_defaults() {
        let c = parse_config(r#"{"schema_version": 1, "probe": {"n_seeds": 3, "train": {"epochs": 2}}}"#).unwrap();
        let p = c.probe.unwrap();
        assert_eq!(p.n_seeds, 3);
        assert_eq!(p.train.epochs, 2);
        assert_eq!(p.train.batch_size, 128);
        assert_eq!(p.split_ratio, 0.8);
    }
}
