//! Position, frequency and length breakdowns of pooled test predictions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::neural::{macro_f1, ols_fit, OlsFit};
use crate::vocab::{fold_char, Markers, Vocabulary};

/// Bins with fewer examples than this are left out of tables and fits.
pub const MIN_BIN_SIZE: usize = 10;

/// One scored test example of a character probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub token_id: u32,
    pub target: char,
    pub label: bool,
    pub prob: f32,
}

impl ScoredExample {
    pub fn predicted(&self) -> bool {
        self.prob >= 0.5
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinScore {
    pub bin: i64,
    pub n: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedBin {
    pub bin: i64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownTable {
    /// `recall` or `macro_f1`, on a 0-100 scale.
    pub metric: String,
    pub rows: Vec<BinScore>,
    pub skipped: Vec<SkippedBin>,
}

impl BreakdownTable {
    pub fn xy(&self) -> (Vec<f64>, Vec<f64>) {
        self.rows.iter().map(|r| (r.bin as f64, r.score)).unzip()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakdowns {
    /// Recall on positives by 1-indexed position of the first occurrence.
    pub position: BreakdownTable,
    /// Macro-F1 by `floor(ln frequency)`; zero-frequency tokens excluded.
    pub frequency: BreakdownTable,
    /// Macro-F1 by marker-stripped length in characters.
    pub length: BreakdownTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub fit: Option<OlsFit>,
    pub error: Option<String>,
}

impl Regression {
    fn of(table: &BreakdownTable) -> Self {
        let (xs, ys) = table.xy();
        match ols_fit(&xs, &ys) {
            Ok(fit) => Self {
                fit: Some(fit),
                error: None,
            },
            Err(e) => Self {
                fit: None,
                error: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regressions {
    pub position_recall: Regression,
    pub frequency_f1: Regression,
}

/// 1-indexed character position of the first `target` in the stripped surface.
pub fn first_position(surface: &str, target: char, case_sensitive: bool, markers: &Markers) -> Option<usize> {
    let body = markers.strip(surface);
    let t = if case_sensitive { target } else { fold_char(target) };
    body.chars()
        .position(|c| if case_sensitive { c == t } else { fold_char(c) == t })
        .map(|p| p + 1)
}

pub fn frequency_bin(frequency: u64) -> Option<i64> {
    (frequency > 0).then(|| (frequency as f64).ln().floor() as i64)
}

fn table(metric: &str, bins: BTreeMap<i64, Vec<&ScoredExample>>, min_bin: usize) -> BreakdownTable {
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (bin, exs) in bins {
        if exs.len() < min_bin {
            skipped.push(SkippedBin { bin, n: exs.len() });
            continue;
        }
        let score = if metric == "recall" {
            100.0 * exs.iter().filter(|e| e.predicted()).count() as f64 / exs.len() as f64
        } else {
            let preds: Vec<bool> = exs.iter().map(|e| e.predicted()).collect();
            let labels: Vec<bool> = exs.iter().map(|e| e.label).collect();
            macro_f1(&preds, &labels).expect("non-empty bin").macro_f1
        };
        rows.push(BinScore {
            bin,
            n: exs.len(),
            score,
        });
    }
    BreakdownTable {
        metric: metric.to_string(),
        rows,
        skipped,
    }
}

pub fn breakdowns(
    examples: &[ScoredExample],
    vocab: &Vocabulary,
    markers: &Markers,
    case_sensitive: bool,
    min_bin: usize,
) -> Breakdowns {
    let mut pos: BTreeMap<i64, Vec<&ScoredExample>> = BTreeMap::new();
    let mut freq: BTreeMap<i64, Vec<&ScoredExample>> = BTreeMap::new();
    let mut len: BTreeMap<i64, Vec<&ScoredExample>> = BTreeMap::new();
    for e in examples {
        let Some(entry) = vocab.get(e.token_id) else { continue };
        if e.label {
            if let Some(p) = first_position(&entry.surface, e.target, case_sensitive, markers) {
                pos.entry(p as i64).or_default().push(e);
            }
        }
        if let Some(b) = frequency_bin(entry.frequency) {
            freq.entry(b).or_default().push(e);
        }
        len.entry(markers.strip(&entry.surface).chars().count() as i64)
            .or_default()
            .push(e);
    }
    Breakdowns {
        position: table("recall", pos, min_bin),
        frequency: table("macro_f1", freq, min_bin),
        length: table("macro_f1", len, min_bin),
    }
}

pub fn regressions(b: &Breakdowns) -> Regressions {
    Regressions {
        position_recall: Regression::of(&b.position),
        frequency_f1: Regression::of(&b.frequency),
    }
}
