//! Unique-tokenization counting and the summary tables built from it.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{find_occurrences, OccurrenceMatch, TargetSet};
use crate::bpe::{BpeError, TokenizationScheme};

pub const CATEGORIES: [&str; 5] = ["all", "except_pseudo", "closer_pseudo", "exact_contain", "exact_match"];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct TargetAccum {
    occurrences: u64,
    sets: [HashSet<Vec<u32>>; 5],
    casings: HashSet<String>,
}

/// Per-target sets of distinct token sequences, one set per category.
/// Merging is a set union, so shard order never matters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizationSets {
    per_target: Vec<TargetAccum>,
}

impl TokenizationSets {
    pub fn new(n_targets: usize) -> Self {
        Self {
            per_target: vec![TargetAccum::default(); n_targets],
        }
    }

    pub fn add(&mut self, m: &OccurrenceMatch, ids: Vec<u32>) {
        let acc = &mut self.per_target[m.target];
        acc.occurrences += 1;
        if m.categories.exact_contain {
            acc.casings.insert(m.surface.clone());
        }
        for (k, on) in m.categories.as_array().into_iter().enumerate() {
            if on {
                acc.sets[k].insert(ids.clone());
            }
        }
    }

    pub fn merge(&mut self, other: Self) {
        for (a, b) in self.per_target.iter_mut().zip(other.per_target) {
            a.occurrences += b.occurrences;
            for (sa, sb) in a.sets.iter_mut().zip(b.sets) {
                sa.extend(sb);
            }
            a.casings.extend(b.casings);
        }
    }

    /// Distinct token sequences of one target in one category.
    pub fn sequences(&self, target: usize, category: usize) -> &HashSet<Vec<u32>> {
        &self.per_target[target].sets[category]
    }

    pub fn finish(&self, targets: &TargetSet) -> VariabilityStats {
        let per_target: Vec<TargetStats> = self
            .per_target
            .iter()
            .zip(targets.iter())
            .map(|(acc, t)| TargetStats {
                word: t.word.clone(),
                length: t.word.chars().count(),
                occurrences: acc.occurrences,
                counts: std::array::from_fn(|k| acc.sets[k].len()),
                distinct_casings: acc.casings.len(),
            })
            .collect();
        let seen: Vec<&TargetStats> = per_target.iter().filter(|t| t.occurrences > 0).collect();
        let mut by_length: BTreeMap<usize, Vec<&TargetStats>> = BTreeMap::new();
        let mut by_bucket: BTreeMap<u32, Vec<&TargetStats>> = BTreeMap::new();
        for &t in &seen {
            by_length.entry(t.length).or_default().push(t);
            by_bucket.entry(occurrence_bucket(t.occurrences)).or_default().push(t);
        }
        VariabilityStats {
            categories: CATEGORIES.map(String::from),
            aggregate: CategoryStats::of(&seen),
            by_length: by_length.into_iter().map(|(k, v)| (k, CategoryStats::of(&v))).collect(),
            by_occurrence_bucket: by_bucket.into_iter().map(|(k, v)| (k, CategoryStats::of(&v))).collect(),
            per_target,
        }
    }
}

/// `k` such that the count lies in `[e^k, e^(k+1))`.
pub fn occurrence_bucket(occurrences: u64) -> u32 {
    (occurrences.max(1) as f64).ln().floor() as u32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub word: String,
    pub length: usize,
    pub occurrences: u64,
    /// Unique tokenizations per category, in `CATEGORIES` order.
    pub counts: [usize; 5],
    /// Distinct spellings among exact case-insensitive matches.
    pub distinct_casings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub n_words: usize,
    pub mean: [f64; 5],
    /// Sample standard deviation; 0 for a single word.
    pub std: [f64; 5],
    pub mean_distinct_casings: f64,
}

impl CategoryStats {
    fn of(ts: &[&TargetStats]) -> Self {
        let n = ts.len();
        let mean_of = |f: &dyn Fn(&TargetStats) -> f64| {
            if n == 0 {
                0.0
            } else {
                ts.iter().map(|t| f(t)).sum::<f64>() / n as f64
            }
        };
        let mean: [f64; 5] = std::array::from_fn(|k| mean_of(&|t| t.counts[k] as f64));
        let std = std::array::from_fn(|k| {
            if n < 2 {
                0.0
            } else {
                let ss: f64 = ts.iter().map(|t| (t.counts[k] as f64 - mean[k]).powi(2)).sum();
                (ss / (n - 1) as f64).sqrt()
            }
        });
        Self {
            n_words: n,
            mean,
            std,
            mean_distinct_casings: mean_of(&|t| t.distinct_casings as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariabilityStats {
    pub categories: [String; 5],
    /// Over targets that occur at least once.
    pub aggregate: CategoryStats,
    pub by_length: BTreeMap<usize, CategoryStats>,
    /// Keyed by the natural-log bucket of the occurrence count.
    pub by_occurrence_bucket: BTreeMap<u32, CategoryStats>,
    pub per_target: Vec<TargetStats>,
}

/// Tokenizes every matched surface, with a leading space when one precedes
/// it in the text, and records the sequence under each of its categories.
pub fn count_tokenizations(
    matches: &[OccurrenceMatch],
    scheme: &TokenizationScheme,
    n_targets: usize,
) -> Result<TokenizationSets, BpeError> {
    let mut sets = TokenizationSets::new(n_targets);
    let mut buf = String::new();
    for m in matches {
        buf.clear();
        if m.preceded_by_space {
            buf.push(' ');
        }
        buf.push_str(&m.surface);
        sets.add(m, scheme.encode(&buf)?);
    }
    Ok(sets)
}

/// Cuts `text` into about `n` byte ranges, each boundary placed on a
/// whitespace character so no match can straddle two shards.
pub fn shard_bounds(text: &str, n: usize) -> Vec<(usize, usize)> {
    let mut cuts = vec![0];
    for k in 1..n.max(1) {
        let mut pos = (text.len() * k / n).max(*cuts.last().expect("non-empty"));
        while pos < text.len() && !text.is_char_boundary(pos) {
            pos += 1;
        }
        let next_ws = text[pos..]
            .char_indices()
            .find(|(_, c)| c.is_whitespace())
            .map(|(i, _)| pos + i);
        match next_ws {
            Some(p) if p > *cuts.last().expect("non-empty") => cuts.push(p),
            _ => {}
        }
    }
    cuts.push(text.len());
    cuts.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Scans `text` in `shards` whitespace-aligned pieces in parallel and
/// merges their tokenization sets.
pub fn analyze_corpus(
    text: &str,
    targets: &TargetSet,
    scheme: &TokenizationScheme,
    shards: usize,
) -> Result<(VariabilityStats, TokenizationSets), BpeError> {
    let parts: Vec<TokenizationSets> = shard_bounds(text, shards)
        .into_par_iter()
        .map(|(a, b)| {
            let matches = find_occurrences(&text[a..b], a, targets);
            count_tokenizations(&matches, scheme, targets.len())
        })
        .collect::<Result<_, _>>()?;
    let mut all = TokenizationSets::new(targets.len());
    for p in parts {
        all.merge(p);
    }
    Ok((all.finish(targets), all))
}
