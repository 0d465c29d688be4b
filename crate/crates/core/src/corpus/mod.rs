//! Fuzzy occurrence search for target words and counting how many distinct
//! tokenizations each target receives in running text.

mod levenshtein;
mod stats;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::{fold_char, fold_str};

pub use levenshtein::{levenshtein, within_one};
pub use stats::{
    analyze_corpus, count_tokenizations, shard_bounds, CategoryStats, TargetStats, TokenizationSets, VariabilityStats,
    CATEGORIES,
};

pub const MIN_TARGET_LEN: usize = 7;

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("target {word:?}: {reason}")]
    BadTarget { word: String, reason: &'static str },
    #[error("no targets left")]
    NoTargets,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Categories {
    pub all: bool,
    pub except_pseudo: bool,
    pub closer_pseudo: bool,
    pub exact_contain: bool,
    pub exact_match: bool,
}

impl Categories {
    pub fn as_array(&self) -> [bool; 5] {
        [
            self.all,
            self.except_pseudo,
            self.closer_pseudo,
            self.exact_contain,
            self.exact_match,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccurrenceMatch {
    pub target: usize,
    pub surface: String,
    /// Byte span in the scanned text.
    pub span: (usize, usize),
    pub distance: u8,
    pub preceded_by_space: bool,
    pub categories: Categories,
}

#[derive(Debug, Clone)]
pub struct Target {
    pub word: String,
    chars: Vec<char>,
    pub pseudo: Vec<String>,
    pseudo_chars: Vec<Vec<char>>,
}

#[derive(Debug, Clone)]
pub struct TargetSet {
    targets: Vec<Target>,
    by_len: HashMap<usize, Vec<usize>>,
    max_len: usize,
    min_len: usize,
}

/// Dictionary words other than `target` at distance exactly one.
pub fn build_pseudo_list(target: &str, dictionary: &[String]) -> Vec<String> {
    let t: Vec<char> = fold_str(target).chars().collect();
    let mut seen = HashSet::new();
    dictionary
        .iter()
        .map(|w| fold_str(w))
        .filter(|w| {
            let chars: Vec<char> = w.chars().collect();
            within_one(&t, &chars) == Some(1) && seen.insert(w.clone())
        })
        .collect()
}

/// Drops any target within distance one of an earlier kept target.
/// Returns the kept words and the dropped ones.
pub fn dedup_targets(words: &[String]) -> (Vec<String>, Vec<String>) {
    let mut kept: Vec<(String, Vec<char>)> = Vec::new();
    let mut dropped = Vec::new();
    for w in words {
        let f = fold_str(w);
        let chars: Vec<char> = f.chars().collect();
        if kept.iter().any(|(_, k)| within_one(k, &chars).is_some()) {
            dropped.push(f);
        } else {
            kept.push((f, chars));
        }
    }
    (kept.into_iter().map(|(w, _)| w).collect(), dropped)
}

impl TargetSet {
    /// Validates and deduplicates the targets, attaching each one's
    /// pseudo-match list drawn from `dictionary`.
    pub fn new(words: &[String], dictionary: &[String]) -> Result<(Self, Vec<String>), CorpusError> {
        for w in words {
            if w.chars().count() < MIN_TARGET_LEN {
                return Err(CorpusError::BadTarget {
                    word: w.clone(),
                    reason: "shorter than 7 characters",
                });
            }
            if !w.chars().all(char::is_alphabetic) {
                return Err(CorpusError::BadTarget {
                    word: w.clone(),
                    reason: "not alphabetic",
                });
            }
        }
        let (kept, dropped) = dedup_targets(words);
        if kept.is_empty() {
            return Err(CorpusError::NoTargets);
        }
        let targets: Vec<Target> = kept
            .into_iter()
            .map(|word| {
                let pseudo = build_pseudo_list(&word, dictionary);
                Target {
                    chars: word.chars().collect(),
                    pseudo_chars: pseudo.iter().map(|p| p.chars().collect()).collect(),
                    pseudo,
                    word,
                }
            })
            .collect();
        let mut by_len: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, t) in targets.iter().enumerate() {
            by_len.entry(t.chars.len()).or_default().push(i);
        }
        let max_len = targets.iter().map(|t| t.chars.len()).max().expect("non-empty");
        let min_len = targets.iter().map(|t| t.chars.len()).min().expect("non-empty");
        Ok((
            Self {
                targets,
                by_len,
                max_len,
                min_len,
            },
            dropped,
        ))
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn get(&self, i: usize) -> &Target {
        &self.targets[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Target> {
        self.targets.iter()
    }

    fn categorize(&self, target: usize, folded: &[char], distance: u8, preceded_by_space: bool) -> Categories {
        let t = &self.targets[target];
        let is_pseudo = t.pseudo_chars.iter().any(|p| p.as_slice() == folded);
        let near_pseudo = distance == 1 && t.pseudo_chars.iter().any(|p| within_one(p, folded).is_some());
        let exact = distance == 0;
        Categories {
            all: true,
            except_pseudo: !is_pseudo,
            closer_pseudo: !is_pseudo && !near_pseudo,
            exact_contain: exact,
            exact_match: exact && !preceded_by_space,
        }
    }
}

struct Candidate {
    target: usize,
    start: usize,
    end: usize,
    distance: u8,
}

/// All occurrences of the targets in `text`. Offsets in the result are
/// shifted by `base`.
pub fn find_occurrences(text: &str, base: usize, targets: &TargetSet) -> Vec<OccurrenceMatch> {
    let mut out = Vec::new();
    let mut chunk: Vec<(usize, char)> = Vec::new();
    let mut flush = |chunk: &mut Vec<(usize, char)>, end_byte: usize| {
        if chunk.len() + 1 >= targets.min_len {
            scan_chunk(text, chunk, end_byte, base, targets, &mut out);
        }
        chunk.clear();
    };
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            flush(&mut chunk, i);
        } else {
            chunk.push((i, c));
        }
    }
    flush(&mut chunk, text.len());
    out
}

fn scan_chunk(
    text: &str,
    chunk: &[(usize, char)],
    end_byte: usize,
    base: usize,
    targets: &TargetSet,
    out: &mut Vec<OccurrenceMatch>,
) {
    let n = chunk.len();
    let folded: Vec<char> = chunk.iter().map(|&(_, c)| fold_char(c)).collect();
    let alpha: Vec<bool> = chunk.iter().map(|&(_, c)| c.is_alphabetic()).collect();
    let byte_at = |k: usize| if k == n { end_byte } else { chunk[k].0 };
    let mut candidates = Vec::new();
    for start in 0..n {
        if start > 0 && alpha[start - 1] {
            continue;
        }
        let lo = start + targets.min_len.saturating_sub(1).max(1);
        let hi = (start + targets.max_len + 1).min(n);
        for end in lo..=hi {
            if end < n && alpha[end] {
                continue;
            }
            let w = end - start;
            for len in [w.wrapping_sub(1), w, w + 1] {
                let Some(ids) = targets.by_len.get(&len) else { continue };
                for &t in ids {
                    if within_one(&folded[start..end], &targets.targets[t].chars).is_none() {
                        continue;
                    }
                    // a trailing character that cannot be part of a word is dropped
                    let (end, distance) = if alpha[end - 1] {
                        (end, within_one(&folded[start..end], &targets.targets[t].chars))
                    } else {
                        (end - 1, within_one(&folded[start..end - 1], &targets.targets[t].chars))
                    };
                    if let Some(distance) = distance {
                        candidates.push(Candidate {
                            target: t,
                            start,
                            end,
                            distance,
                        });
                    }
                }
            }
        }
    }
    candidates.sort_by_key(|c| (c.target, c.distance, c.start, std::cmp::Reverse(c.end)));
    let mut taken: Vec<(usize, usize, usize)> = Vec::new();
    for c in candidates {
        if taken.iter().any(|&(t, s, e)| t == c.target && c.start < e && s < c.end) {
            continue;
        }
        taken.push((c.target, c.start, c.end));
        let (b0, b1) = (byte_at(c.start), byte_at(c.end));
        let preceded_by_space = text[..b0].ends_with(' ');
        out.push(OccurrenceMatch {
            target: c.target,
            surface: text[b0..b1].to_string(),
            span: (base + b0, base + b1),
            distance: c.distance,
            preceded_by_space,
            categories: targets.categorize(c.target, &folded[c.start..c.end], c.distance, preceded_by_space),
        });
    }
}
