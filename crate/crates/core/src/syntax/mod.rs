//! Syntactic baselines: predicting character presence from part-of-speech
//! and named-entity features instead of model embeddings.

pub mod conll;
pub mod probe;
pub mod tagger;
pub mod tags;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use conll::{parse_conll, Aligner, ConllWord, Sentence};
pub use probe::{
    run_syntax_experiment, syntax_batch_size, train_syntax_probe, SyntaxFeatures, SyntaxModel, SyntaxProbeResult,
    FEATURE_EMBED_DIM, SYNTAX_LR_GRID,
};
pub use tagger::{infer_tag_distribution, tag_vocabulary, tagger_config, train_tagger, TaggerModel, TaggerRun};
pub use tags::{format_tags, load_tags, parse_tags, write_tags, TagDistribution, TagTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TagFeature {
    #[serde(rename = "POS")]
    Pos,
    #[serde(rename = "COARSE_POS")]
    CoarsePos,
    #[serde(rename = "NER")]
    Ner,
}

impl fmt::Display for TagFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TagFeature::Pos => "POS",
            TagFeature::CoarsePos => "COARSE_POS",
            TagFeature::Ner => "NER",
        })
    }
}

impl FromStr for TagFeature {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "POS" => Ok(TagFeature::Pos),
            "COARSE_POS" => Ok(TagFeature::CoarsePos),
            "NER" => Ok(TagFeature::Ner),
            _ => Err(format!("unknown feature {s:?} (expected POS, COARSE_POS or NER)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum SyntaxError {
    #[error("CoNLL line {line}: {reason}")]
    BadConll { line: usize, reason: String },
    #[error("CoNLL input has no sentences")]
    EmptyConll,
    #[error("label {0:?} does not occur in the training data")]
    UnknownLabel(String),
    #[error("CoNLL files carry no {0} column")]
    UnsupportedFeature(TagFeature),
    #[error("tags line {line}: {reason}")]
    BadTags { line: usize, reason: String },
    #[error("token {token_id} has two {feature} rows")]
    DuplicateTag { token_id: u32, feature: TagFeature },
    #[error("token {0} is missing from a feature table")]
    CoverageGap(u32),
    #[error("no syntactic features given")]
    NoFeatures,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Train(#[from] crate::neural::TrainError),
    #[error(transparent)]
    Metrics(#[from] crate::neural::MetricsError),
    #[error(transparent)]
    Probe(#[from] crate::probe::ProbeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
